"""Pure-numpy convolution kernels (fallback backend).

Direct convolution written as a loop over the kernel footprint with
vectorised batch/channel contractions. No im2col buffer, no FFT. The
compiled backend in _convkernels.pyx implements the same three entry
points with identical semantics.

All functions take the already padded input `xp` of shape (N, C, Hp, Wp)
and a weight tensor of shape (O, C, kh, kw); padding policy lives in the
autodiff layer.
"""

import numpy as np


def conv_forward(xp, w, stride):
    """Strided cross-correlation of a padded input with a weight bank."""
    n, c, hp, wp = xp.shape
    o, cw, kh, kw = w.shape
    ho = (hp - kh) // stride + 1
    wo = (wp - kw) // stride + 1
    out = np.zeros((n, o, ho, wo))
    for i in range(kh):
        for j in range(kw):
            patch = xp[:, :, i : i + (ho - 1) * stride + 1 : stride,
                       j : j + (wo - 1) * stride + 1 : stride]
            # (n, ho, wo, o) contracted over the input-channel axis
            out += np.moveaxis(np.tensordot(patch, w[:, :, i, j], ([1], [1])), 3, 1)
    return out


def conv_grad_weight(xp, g, kh, kw, stride):
    """Gradient of conv_forward w.r.t. the weights."""
    _, _, ho, wo = g.shape
    _, c, _, _ = xp.shape
    o = g.shape[1]
    dw = np.zeros((o, c, kh, kw))
    for i in range(kh):
        for j in range(kw):
            patch = xp[:, :, i : i + (ho - 1) * stride + 1 : stride,
                       j : j + (wo - 1) * stride + 1 : stride]
            dw[:, :, i, j] = np.tensordot(g, patch, ([0, 2, 3], [0, 2, 3]))
    return dw


def conv_grad_input(g, w, stride, hp, wp):
    """Gradient of conv_forward w.r.t. the padded input."""
    n, o, ho, wo = g.shape
    _, c, kh, kw = w.shape
    dxp = np.zeros((n, c, hp, wp))
    for i in range(kh):
        for j in range(kw):
            contrib = np.moveaxis(np.tensordot(g, w[:, :, i, j], ([1], [0])), 3, 1)
            dxp[:, :, i : i + (ho - 1) * stride + 1 : stride,
                j : j + (wo - 1) * stride + 1 : stride] += contrib
    return dxp
