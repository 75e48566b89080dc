"""Dense float64 tensors with reverse-mode automatic differentiation.

The op set is sized for training a small convolutional classifier and
for differentiating every loss term used in this package: elementwise
arithmetic with limited broadcasting, matmul, strided 2-D convolution,
relu, axis reductions, slicing, concatenation, log-softmax, reshape and
axis permutation.

Recording model: every op whose inputs include a traced tensor
(requires_grad leaf or op output) appends a node to a Tape. A tape is
created lazily by the first such op of a forward pass and is consumed by
a single backward() call, which visits the nodes in reverse construction
order, populates .grad on every requires_grad leaf reached by the pass
(exactly zero for leaves off the loss path) and then frees the tape.
Calling backward twice on the same tape is an error.
"""

from __future__ import annotations

import numpy as np

from . import backend


class ShapeError(ValueError):
    """Operand shapes do not conform for the attempted operation."""


_check_finite = False


def set_check_finite(enabled):
    """Toggle NaN/Inf detection on every op result (off by default)."""
    global _check_finite
    _check_finite = bool(enabled)


class Tape:
    """Ordered record of the recorded ops of one forward pass."""

    __slots__ = ("nodes", "leaves", "_leaf_ids", "consumed", "_merged_into")

    def __init__(self):
        self.nodes = []
        self.leaves = []
        self._leaf_ids = set()
        self.consumed = False
        self._merged_into = None

    def _root(self):
        tape = self
        while tape._merged_into is not None:
            tape = tape._merged_into
        if tape is not self:
            self._merged_into = tape
        return tape

    def _absorb(self, other):
        # Concatenation keeps each tape's internal construction order,
        # which stays topological: two live tapes cannot reference each
        # other's nodes before the op that joins them.
        self.nodes.extend(other.nodes)
        for leaf in other.leaves:
            if id(leaf) not in self._leaf_ids:
                self._leaf_ids.add(id(leaf))
                self.leaves.append(leaf)
        other.nodes = []
        other.leaves = []
        other._leaf_ids.clear()
        other._merged_into = self


class _Node:
    __slots__ = ("parents", "grad_fn", "grad", "tape")

    def __init__(self, parents, grad_fn, tape):
        self.parents = parents
        self.grad_fn = grad_fn
        self.grad = None
        self.tape = tape


class Tensor:
    """Multi-dimensional float64 value, optionally on a gradient tape."""

    __slots__ = ("data", "requires_grad", "grad", "_node")

    def __init__(self, data, requires_grad=False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._node = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self):
        return float(self.data)

    def detach(self):
        """Same values, off any tape, no gradient."""
        return Tensor(self.data)

    def __repr__(self):
        flags = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}{flags})"

    def __len__(self):
        return len(self.data)

    # Operator sugar; scalars mean python numbers, not 0-d tensors.
    def __add__(self, other):
        return add(self, other) if isinstance(other, Tensor) else add_scalar(self, other)

    def __radd__(self, other):
        return add_scalar(self, other)

    def __sub__(self, other):
        if isinstance(other, Tensor):
            return add(self, neg(other))
        return add_scalar(self, -other)

    def __rsub__(self, other):
        return add_scalar(neg(self), other)

    def __mul__(self, other):
        return mul(self, other) if isinstance(other, Tensor) else mul_scalar(self, other)

    def __rmul__(self, other):
        return mul_scalar(self, other)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("tensor/tensor division is not part of the op set")
        return mul_scalar(self, 1.0 / other)

    def __neg__(self):
        return neg(self)

    def __pow__(self, exponent):
        return pow_scalar(self, exponent)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)


def _traced(t):
    return t._node is not None or t.requires_grad


def _live_tape(parents):
    root = None
    for p in parents:
        if p._node is not None:
            tape = p._node.tape._root()
            if tape.consumed:
                raise RuntimeError(
                    "op uses a tensor from a tape already consumed by backward(); "
                    "re-run the forward pass"
                )
            if root is None:
                root = tape
            elif tape is not root:
                root._absorb(tape)
    return root


def _finish(opname, out_data, parents, grad_fn):
    if _check_finite and not np.all(np.isfinite(out_data)):
        raise FloatingPointError(f"{opname}: non-finite values in result")
    out = Tensor(out_data)
    if any(_traced(p) for p in parents):
        tape = _live_tape(parents)
        if tape is None:
            tape = Tape()
        node = _Node(tuple(parents), grad_fn, tape)
        out._node = node
        tape.nodes.append(node)
        for p in parents:
            if p._node is None and p.requires_grad and id(p) not in tape._leaf_ids:
                tape._leaf_ids.add(id(p))
                tape.leaves.append(p)
    return out


def backward(loss):
    """Populate .grad on every requires_grad leaf reachable from `loss`.

    The loss must be a scalar recorded on a live tape. The tape is freed
    afterwards; a second call on the same tape raises.
    """
    if not isinstance(loss, Tensor):
        raise TypeError("backward expects a Tensor")
    if loss._node is None:
        raise ValueError("backward: loss is detached (not recorded on any tape)")
    if loss.data.size != 1:
        raise ValueError(f"backward: loss must be scalar, got shape {loss.data.shape}")
    tape = loss._node.tape._root()
    if tape.consumed:
        raise RuntimeError("backward already called on this tape")
    tape.consumed = True
    loss._node.grad = np.ones_like(loss.data)
    for node in reversed(tape.nodes):
        g = node.grad
        if g is None:
            continue
        node.grad = None
        for parent, pg in zip(node.parents, node.grad_fn(g)):
            if pg is None:
                continue
            if parent._node is not None:
                pn = parent._node
                pn.grad = pg if pn.grad is None else pn.grad + pg
            elif parent.requires_grad:
                parent.grad = pg if parent.grad is None else parent.grad + pg
    for leaf in tape.leaves:
        if leaf.grad is None:
            leaf.grad = np.zeros_like(leaf.data)
    for node in tape.nodes:
        node.parents = ()
        node.grad_fn = None
    tape.nodes.clear()
    tape.leaves.clear()
    tape._leaf_ids.clear()


def _unbroadcast(g, shape):
    """Sum a broadcast gradient back down to `shape`."""
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


# ---------------------------------------------------------------------------
# elementwise and scalar ops


def add(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    try:
        out = a.data + b.data
    except ValueError:
        raise ShapeError(f"add: shapes {a.shape} and {b.shape} do not broadcast") from None
    sa, sb = a.shape, b.shape

    def grad_fn(g):
        return _unbroadcast(g, sa), _unbroadcast(g, sb)

    return _finish("add", out, (a, b), grad_fn)


def mul(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    try:
        out = a.data * b.data
    except ValueError:
        raise ShapeError(f"mul: shapes {a.shape} and {b.shape} do not broadcast") from None
    da, db = a.data, b.data

    def grad_fn(g):
        return _unbroadcast(g * db, da.shape), _unbroadcast(g * da, db.shape)

    return _finish("mul", out, (a, b), grad_fn)


def neg(a):
    return _finish("neg", -a.data, (a,), lambda g: (-g,))


def add_scalar(a, s):
    s = float(s)
    return _finish("add_scalar", a.data + s, (a,), lambda g: (g,))


def mul_scalar(a, s):
    s = float(s)
    return _finish("mul_scalar", a.data * s, (a,), lambda g: (g * s,))


def pow_scalar(a, p):
    p = float(p)
    base = a.data
    out = base ** p

    def grad_fn(g):
        return (g * p * base ** (p - 1.0),)

    return _finish("pow_scalar", out, (a,), grad_fn)


def relu(a):
    mask = a.data > 0

    def grad_fn(g):
        return (g * mask,)

    return _finish("relu", np.where(mask, a.data, 0.0), (a,), grad_fn)


# ---------------------------------------------------------------------------
# linear algebra


def matmul(a, b):
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul: expects 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: shapes {a.shape} and {b.shape} are not aligned")
    da, db = a.data, b.data

    def grad_fn(g):
        return g @ db.T, da.T @ g

    return _finish("matmul", da @ db, (a, b), grad_fn)


def conv2d(x, w, stride=1, padding="same"):
    """2-D cross-correlation: x (N,C,H,W) with weights (O,C,kh,kw).

    padding "same" pads so that the output spatial size is ceil(in/stride)
    (extra pixel goes after, TF convention); "valid" applies no padding.
    """
    if x.ndim != 4 or w.ndim != 4:
        raise ShapeError(f"conv2d: expects 4-D operands, got {x.shape} and {w.shape}")
    n, c, h, wdt = x.shape
    o, cw, kh, kw = w.shape
    if cw != c:
        raise ShapeError(f"conv2d: input channels {x.shape} do not match weights {w.shape}")
    if stride < 1:
        raise ValueError(f"conv2d: stride must be >= 1, got {stride}")
    if padding == "same":
        ho = -(-h // stride)
        wo = -(-wdt // stride)
        pad_h = max((ho - 1) * stride + kh - h, 0)
        pad_w = max((wo - 1) * stride + kw - wdt, 0)
        pt, pl = pad_h // 2, pad_w // 2
        pads = ((0, 0), (0, 0), (pt, pad_h - pt), (pl, pad_w - pl))
    elif padding == "valid":
        if h < kh or wdt < kw:
            raise ShapeError(f"conv2d: input {x.shape} smaller than kernel {w.shape}")
        pt = pl = 0
        pads = ((0, 0), (0, 0), (0, 0), (0, 0))
    else:
        raise ValueError(f"conv2d: padding must be 'same' or 'valid', got {padding!r}")
    xp = np.pad(x.data, pads) if any(p for pair in pads for p in pair) else \
        np.ascontiguousarray(x.data)
    wd = np.ascontiguousarray(w.data)
    out = backend.conv_forward(xp, wd, stride)
    hp, wp = xp.shape[2], xp.shape[3]
    needs_x, needs_w = _traced(x), _traced(w)

    def grad_fn(g):
        g = np.ascontiguousarray(g)
        gx = gw = None
        if needs_x:
            dxp = backend.conv_grad_input(g, wd, stride, hp, wp)
            gx = dxp[:, :, pads[2][0] : pads[2][0] + h, pads[3][0] : pads[3][0] + wdt]
            gx = np.ascontiguousarray(gx)
        if needs_w:
            gw = backend.conv_grad_weight(xp, g, kh, kw, stride)
        return gx, gw

    return _finish("conv2d", out, (x, w), grad_fn)


# ---------------------------------------------------------------------------
# reductions


def _spread(g, shape, axis, keepdims):
    """Broadcast a reduced gradient back over the reduced axes."""
    if axis is None:
        return np.broadcast_to(g, shape).copy() if keepdims else np.full(shape, g)
    axes = (axis,) if isinstance(axis, int) else tuple(axis)
    axes = tuple(a % len(shape) for a in axes)
    if not keepdims:
        expanded = list(g.shape)
        for a in sorted(axes):
            expanded.insert(a, 1)
        g = g.reshape(expanded)
    return np.broadcast_to(g, shape).copy()


def tensor_sum(a, axis=None, keepdims=False):
    out = a.data.sum(axis=axis, keepdims=keepdims)
    shape = a.shape

    def grad_fn(g):
        return (_spread(g, shape, axis, keepdims),)

    return _finish("sum", out, (a,), grad_fn)


def mean(a, axis=None, keepdims=False):
    out = a.data.mean(axis=axis, keepdims=keepdims)
    shape = a.shape
    count = a.data.size if axis is None else int(
        np.prod([shape[ax % len(shape)] for ax in np.atleast_1d(axis)])
    )

    def grad_fn(g):
        return (_spread(g / count, shape, axis, keepdims),)

    return _finish("mean", out, (a,), grad_fn)


def log_softmax(a):
    """log(softmax) over the last axis."""
    shifted = a.data - a.data.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    out = shifted - lse

    def grad_fn(g):
        return (g - np.exp(out) * g.sum(axis=-1, keepdims=True),)

    return _finish("log_softmax", out, (a,), grad_fn)


# ---------------------------------------------------------------------------
# shape ops


def reshape(a, shape):
    old = a.shape
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot view {old} as {shape}") from None

    def grad_fn(g):
        return (g.reshape(old),)

    return _finish("reshape", out, (a,), grad_fn)


def permute(a, axes):
    axes = tuple(axes)
    if sorted(axes) != list(range(a.ndim)):
        raise ShapeError(f"permute: axes {axes} are not a permutation for shape {a.shape}")
    inverse = tuple(np.argsort(axes))

    def grad_fn(g):
        return (np.ascontiguousarray(g.transpose(inverse)),)

    return _finish("permute", np.ascontiguousarray(a.data.transpose(axes)), (a,), grad_fn)


def getitem(a, index):
    out = a.data[index]
    if np.isscalar(out) or out.ndim == 0:
        out = np.asarray(out, dtype=np.float64)
    shape = a.shape

    def grad_fn(g):
        buf = np.zeros(shape)
        np.add.at(buf, index, g)
        return (buf,)

    return _finish("slice", np.array(out, copy=True), (a,), grad_fn)


def concat(tensors, axis=0):
    tensors = [_as_tensor(t) for t in tensors]
    if not tensors:
        raise ValueError("concat: needs at least one tensor")
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError:
        shapes = [t.shape for t in tensors]
        raise ShapeError(f"concat: shapes {shapes} do not align on axis {axis}") from None
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def grad_fn(g):
        return tuple(np.ascontiguousarray(p) for p in np.split(g, splits, axis=axis))

    return _finish("concat", out, tuple(tensors), grad_fn)
