"""Multi-scale pooled-slice embeddings and the feature distillation loss.

The embedding of a feature map collapses it to (H + W) x C: one
width-pooled mean per row index followed by one height-pooled mean per
column index. At scale s the map is cut into an s x s grid of equal
sub-regions (row-major) and each gets its own embedding; the distillation
loss sums squared distances between current and teacher embeddings over
every region of every scale of every tapped layer, divides by the number
of layers, and averages over the batch. Teacher features are constants:
gradients flow through the current branch only.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor


@dataclass
class SliceEmbedding:
    """Pooled-slice embedding of one region: rows [0, H) hold width-pooled
    means, rows [H, H + W) height-pooled means, channels preserved."""

    data: Tensor
    height: int
    width: int


@dataclass
class MultiScaleEmbedding:
    """Per-scale region embeddings for one feature map."""

    scales: list  # list of (scale, [SliceEmbedding]) with s*s regions each
    layer: int = 0


def validate_scales(feature_shapes, scales):
    """Config-time check: every tapped map must divide evenly at every scale."""
    scales = [int(s) for s in scales]
    if not scales or any(s < 1 for s in scales):
        raise ValueError(f"scales must be positive integers, got {scales}")
    for idx, (_, h, w) in enumerate(feature_shapes):
        for s in scales:
            if h % s or w % s:
                raise ValueError(
                    f"feature map {idx} is {h}x{w}, not divisible at scale 1/{s}"
                )
    return scales


def _as_constant(t):
    if isinstance(t, Tensor):
        return t if t._node is None and not t.requires_grad else t.detach()
    return Tensor(t)


def slice_embedding(feature) -> Tensor:
    """Pooled-slice embedding; (C,H,W) -> (H+W, C) or (N,C,H,W) -> (N, H+W, C)."""
    feature = feature if isinstance(feature, Tensor) else Tensor(feature)
    if feature.ndim == 3:
        width_pooled = ad.permute(ad.mean(feature, axis=2), (1, 0))
        height_pooled = ad.permute(ad.mean(feature, axis=1), (1, 0))
        return ad.concat([width_pooled, height_pooled], axis=0)
    if feature.ndim == 4:
        width_pooled = ad.permute(ad.mean(feature, axis=3), (0, 2, 1))
        height_pooled = ad.permute(ad.mean(feature, axis=2), (0, 2, 1))
        return ad.concat([width_pooled, height_pooled], axis=1)
    raise ad.ShapeError(f"slice_embedding: expects (C,H,W) or (N,C,H,W), got {feature.shape}")


def _regions(feature, scale):
    """Row-major equal sub-regions of a (..., H, W) tensor at 1/scale."""
    h, w = feature.shape[-2], feature.shape[-1]
    if h % scale or w % scale:
        raise ValueError(f"feature {h}x{w} not divisible at scale 1/{scale}")
    rh, rw = h // scale, w // scale
    prefix = (slice(None),) * (feature.ndim - 2)
    out = []
    for i in range(scale):
        for j in range(scale):
            out.append(feature[prefix + (slice(i * rh, (i + 1) * rh),
                                         slice(j * rw, (j + 1) * rw))])
    return out


def multiscale_embedding(feature, scales, layer=0) -> MultiScaleEmbedding:
    """Region embeddings of one feature map at every requested scale."""
    feature = feature if isinstance(feature, Tensor) else Tensor(feature)
    per_scale = []
    for s in scales:
        regions = []
        for region in _regions(feature, int(s)):
            regions.append(
                SliceEmbedding(
                    data=slice_embedding(region),
                    height=region.shape[-2],
                    width=region.shape[-1],
                )
            )
        per_scale.append((int(s), regions))
    return MultiScaleEmbedding(scales=per_scale, layer=layer)


def _normalized(emb, eps=1e-12):
    axes = (0, 1) if emb.ndim == 2 else (1, 2)
    sq = ad.tensor_sum(ad.mul(emb, emb), axis=axes, keepdims=True)
    return ad.mul(emb, ad.pow_scalar(ad.add_scalar(sq, eps), -0.5))


def multiscale_kd_loss(current_taps, teacher_taps, scales, normalize=False) -> Tensor:
    """Distillation loss between current and frozen teacher feature taps.

    Accepts per-sample (C,H,W) or batched (N,C,H,W) taps; batched input is
    averaged over the batch. The sum over regions is divided by the number
    of tapped layers only.
    """
    if len(current_taps) != len(teacher_taps):
        raise ad.ShapeError(
            f"tap lists differ in length: {len(current_taps)} vs {len(teacher_taps)}"
        )
    if not current_taps:
        raise ValueError("multiscale_kd_loss: need at least one tapped layer")
    num_layers = len(current_taps)
    total = None
    for cur, tea in zip(current_taps, teacher_taps):
        cur = cur if isinstance(cur, Tensor) else Tensor(cur)
        tea = _as_constant(tea)
        if cur.shape != tea.shape:
            raise ad.ShapeError(f"tap shapes differ: {cur.shape} vs {tea.shape}")
        if cur.ndim == 3:
            cur = ad.reshape(cur, (1,) + cur.shape)
            tea = ad.reshape(tea, (1,) + tea.shape)
        for s in scales:
            for creg, treg in zip(_regions(cur, int(s)), _regions(tea, int(s))):
                cemb = slice_embedding(creg)
                temb = slice_embedding(treg)
                if normalize:
                    cemb = _normalized(cemb)
                    temb = _normalized(temb)
                diff = ad.add(cemb, ad.neg(temb))
                ssd = ad.tensor_sum(ad.mul(diff, diff), axis=(1, 2))
                total = ssd if total is None else ad.add(total, ssd)
    return ad.mean(ad.mul_scalar(total, 1.0 / num_layers))
