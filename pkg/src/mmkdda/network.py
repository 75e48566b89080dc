"""Small convolutional classifier split into a feature extractor with
tapped intermediate layers and a shared linear head.

Each conv block is conv -> relu; the tap of a block is its post-relu
output, i.e. exactly the tensor feeding the next block. After the last
block a global average pool feeds one linear head over every class of
the benchmark; task ids are evaluation bookkeeping only.

ModelState is an immutable value: training steps return new states.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor


@dataclass(frozen=True)
class ArchSpec:
    """Architecture descriptor: input shape, conv stack, taps and head width."""

    input_shape: tuple[int, int, int]              # (C, H, W)
    conv_blocks: tuple[tuple[int, int, int], ...]  # (out_channels, kernel, stride)
    tap_layers: tuple[int, ...]                    # 0-based block indices
    num_classes: int
    padding: str = "same"

    def __post_init__(self):
        object.__setattr__(self, "input_shape", tuple(int(v) for v in self.input_shape))
        object.__setattr__(
            self, "conv_blocks", tuple(tuple(int(v) for v in b) for b in self.conv_blocks)
        )
        object.__setattr__(self, "tap_layers", tuple(int(v) for v in self.tap_layers))
        self.validate()

    def validate(self):
        if len(self.input_shape) != 3 or any(v < 1 for v in self.input_shape):
            raise ValueError(f"invalid input shape {self.input_shape}")
        if not self.conv_blocks:
            raise ValueError("at least one conv block is required")
        for b in self.conv_blocks:
            if len(b) != 3 or b[0] < 1 or b[1] < 1 or b[2] < 1:
                raise ValueError(f"invalid conv block {b}")
        if self.num_classes < 2:
            raise ValueError(f"need at least 2 classes, got {self.num_classes}")
        if self.padding not in ("same", "valid"):
            raise ValueError(f"padding must be 'same' or 'valid', got {self.padding!r}")
        taps = self.tap_layers
        if not taps:
            raise ValueError("tap_layers must be non-empty")
        if list(taps) != sorted(set(taps)):
            raise ValueError(f"tap_layers must be strictly increasing, got {taps}")
        if taps[0] < 0 or taps[-1] >= len(self.conv_blocks):
            raise ValueError(f"tap index out of range in {taps}")
        shapes = self.feature_shapes()
        for t in taps:
            _, h, w = shapes[t]
            if h < 2 or w < 2:
                raise ValueError(
                    f"tapped block {t} produces a {h}x{w} feature map; "
                    "taps need spatial dims >= 2"
                )

    def feature_shapes(self):
        """(C, H, W) of every block output, in block order."""
        c, h, w = self.input_shape
        shapes = []
        for out_c, kernel, stride in self.conv_blocks:
            if self.padding == "same":
                h = -(-h // stride)
                w = -(-w // stride)
            else:
                if h < kernel or w < kernel:
                    raise ValueError(f"feature map {h}x{w} smaller than kernel {kernel}")
                h = (h - kernel) // stride + 1
                w = (w - kernel) // stride + 1
            shapes.append((out_c, h, w))
            c = out_c
        return shapes

    @property
    def num_taps(self):
        return len(self.tap_layers)

    def param_segments(self):
        """Flat layout of the parameter vector: (name, offset, shape) triples."""
        segments = []
        offset = 0
        c_in = self.input_shape[0]
        for idx, (out_c, kernel, _) in enumerate(self.conv_blocks):
            for name, shape in (
                (f"conv{idx}.weight", (out_c, c_in, kernel, kernel)),
                (f"conv{idx}.bias", (out_c,)),
            ):
                segments.append((name, offset, shape))
                offset += int(np.prod(shape))
            c_in = out_c
        feat = self.conv_blocks[-1][0]
        segments.append(("head.weight", offset, (self.num_classes, feat)))
        offset += self.num_classes * feat
        segments.append(("head.bias", offset, (self.num_classes,)))
        offset += self.num_classes
        return segments

    @property
    def num_params(self):
        last_name, last_off, last_shape = self.param_segments()[-1]
        return last_off + int(np.prod(last_shape))

    def to_text(self):
        """Canonical single-line-per-key text form (stable key order)."""
        blocks = ";".join(",".join(str(v) for v in b) for b in self.conv_blocks)
        return (
            f"input_shape={','.join(str(v) for v in self.input_shape)}\n"
            f"conv_blocks={blocks}\n"
            f"tap_layers={','.join(str(v) for v in self.tap_layers)}\n"
            f"num_classes={self.num_classes}\n"
            f"padding={self.padding}\n"
        )

    @classmethod
    def from_text(cls, text):
        fields = {}
        for line in text.strip().splitlines():
            key, _, value = line.partition("=")
            fields[key] = value
        return cls(
            input_shape=tuple(int(v) for v in fields["input_shape"].split(",")),
            conv_blocks=tuple(
                tuple(int(v) for v in b.split(",")) for b in fields["conv_blocks"].split(";")
            ),
            tap_layers=tuple(int(v) for v in fields["tap_layers"].split(",")),
            num_classes=int(fields["num_classes"]),
            padding=fields["padding"],
        )


def default_arch(input_shape=(1, 8, 8), num_classes=10):
    """Desk-scale default: three 3x3 conv blocks (16/32/64 channels) with
    taps on the last two blocks.

    The third block runs at stride 1 so both tapped maps keep spatial
    dims >= 2 on 8x8 inputs (blocks 2 and 3 both produce 2x2 maps).
    """
    return ArchSpec(
        input_shape=input_shape,
        conv_blocks=((16, 3, 2), (32, 3, 2), (64, 3, 1)),
        tap_layers=(1, 2),
        num_classes=num_classes,
    )


@dataclass(frozen=True)
class ModelState:
    """Flat parameter vector plus its architecture; immutable value."""

    params: np.ndarray
    arch: ArchSpec
    rng_seed: int = 0

    def __post_init__(self):
        params = np.asarray(self.params, dtype=np.float64)
        if params.shape != (self.arch.num_params,):
            raise ValueError(
                f"parameter vector has {params.shape}, arch needs ({self.arch.num_params},)"
            )
        params = params.copy()
        params.flags.writeable = False
        object.__setattr__(self, "params", params)


@dataclass
class ForwardResult:
    logits: Tensor
    taps: list = field(default_factory=list)


def init_model(arch: ArchSpec, seed: int) -> ModelState:
    """Kaiming-uniform (fan-in, relu gain) weights, zero biases.

    Deterministic: the same (arch, seed) always yields bit-identical
    parameters.
    """
    rng = np.random.default_rng(seed)
    params = np.zeros(arch.num_params)
    for name, offset, shape in arch.param_segments():
        size = int(np.prod(shape))
        if name.endswith(".weight"):
            fan_in = int(np.prod(shape[1:]))
            bound = math.sqrt(6.0 / fan_in)
            params[offset : offset + size] = rng.uniform(-bound, bound, size=size)
    return ModelState(params=params, arch=arch, rng_seed=int(seed))


def param_tensors(model: ModelState, requires_grad=True):
    """Named leaf tensors viewing the flat parameter vector."""
    out = {}
    for name, offset, shape in model.arch.param_segments():
        size = int(np.prod(shape))
        out[name] = Tensor(
            model.params[offset : offset + size].reshape(shape), requires_grad=requires_grad
        )
    return out


def flatten_grads(params: dict, arch: ArchSpec) -> np.ndarray:
    """Gradient vector aligned with the flat parameter layout."""
    grads = np.zeros(arch.num_params)
    for name, offset, shape in arch.param_segments():
        g = params[name].grad
        if g is not None:
            size = int(np.prod(shape))
            grads[offset : offset + size] = g.reshape(-1)
    return grads


def forward_with_params(arch: ArchSpec, params: dict, images: Tensor, with_taps=False):
    """Run the network on explicit parameter tensors (gradients flow)."""
    if images.ndim != 4 or images.shape[1:] != tuple(arch.input_shape):
        raise ad.ShapeError(
            f"forward: images {images.shape} do not match arch input {arch.input_shape}"
        )
    taps = []
    tap_set = set(arch.tap_layers)
    h = images
    for idx, (out_c, _, stride) in enumerate(arch.conv_blocks):
        w = params[f"conv{idx}.weight"]
        b = params[f"conv{idx}.bias"]
        h = ad.conv2d(h, w, stride=stride, padding=arch.padding)
        h = ad.add(h, ad.reshape(b, (1, out_c, 1, 1)))
        h = ad.relu(h)
        if with_taps and idx in tap_set:
            taps.append(h)
    pooled = ad.mean(h, axis=(2, 3))
    logits = ad.add(ad.matmul(pooled, ad.permute(params["head.weight"], (1, 0))),
                    params["head.bias"])
    return ForwardResult(logits=logits, taps=taps)


def forward(model: ModelState, images, with_taps=False) -> ForwardResult:
    """Inference pass (no gradients recorded)."""
    images = images if isinstance(images, Tensor) else Tensor(images)
    return forward_with_params(model.arch, param_tensors(model, requires_grad=False),
                               images, with_taps=with_taps)


def sgd_step(model: ModelState, grads: np.ndarray, lr: float) -> ModelState:
    """One gradient-descent step; returns a new state."""
    grads = np.asarray(grads, dtype=np.float64)
    if grads.shape != model.params.shape:
        raise ValueError(f"gradient vector {grads.shape} does not match params {model.params.shape}")
    return ModelState(params=model.params - lr * grads, arch=model.arch,
                      rng_seed=model.rng_seed)
