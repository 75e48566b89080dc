"""CutMix over a joined current+memory batch.

One box per batch: a mix ratio is drawn uniformly, a crop box of the
matching area is anchored at a uniform center and clipped to the image,
and every image gets that box pasted in from a shuffled partner. Labels
mix by the exact kept-pixel fraction recomputed from the integer box, so
the mask stays binary and the label mix matches pixel provenance exactly.

Randomness order per call: partner permutation, then raw ratio, then the
two anchor coordinates. An empty batch consumes no randomness.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .data import Batch, validate_label_rows


@dataclass(frozen=True)
class MixSpec:
    """Crop geometry for one batch: raw ratio, clipped integer box and the
    exact kept fraction 1 - box_area / (W * H)."""

    lam_raw: float
    box: tuple[int, int, int, int]  # (w1, h1, w2, h2)
    lam: float
    width: int
    height: int

    def __post_init__(self):
        w1, h1, w2, h2 = self.box
        if not (0 <= w1 <= w2 <= self.width and 0 <= h1 <= h2 <= self.height):
            raise ValueError(f"box {self.box} out of bounds for {self.width}x{self.height}")

    @property
    def box_area(self):
        w1, h1, w2, h2 = self.box
        return (w2 - w1) * (h2 - h1)


def _round_half_up(v):
    return int(math.floor(v + 0.5))


def make_mixspec(width, height, lam_raw, anchor_w, anchor_h) -> MixSpec:
    """Deterministic part of box sampling: cut size from the raw ratio,
    box centered on the anchor, clipped, rounded, ratio recomputed."""
    cut_w = width * math.sqrt(1.0 - lam_raw)
    cut_h = height * math.sqrt(1.0 - lam_raw)
    w1 = _round_half_up(max(0.0, anchor_w - cut_w / 2.0))
    w2 = _round_half_up(min(float(width), anchor_w + cut_w / 2.0))
    h1 = _round_half_up(max(0.0, anchor_h - cut_h / 2.0))
    h2 = _round_half_up(min(float(height), anchor_h + cut_h / 2.0))
    lam = 1.0 - ((w2 - w1) * (h2 - h1)) / (width * height)
    return MixSpec(lam_raw=float(lam_raw), box=(w1, h1, w2, h2), lam=lam,
                   width=int(width), height=int(height))


def sample_mixspec(width, height, rng: np.random.Generator) -> MixSpec:
    """Draw ratio and anchor; consumes exactly three uniforms."""
    if width < 1 or height < 1:
        raise ValueError(f"image dims must be >= 1, got {width}x{height}")
    lam_raw = rng.uniform(0.0, 1.0)
    anchor_w = rng.uniform(0.0, width)
    anchor_h = rng.uniform(0.0, height)
    return make_mixspec(width, height, lam_raw, anchor_w, anchor_h)


def cutmix_detailed(batch: Batch, rng: np.random.Generator):
    """CutMix a joined batch; also returns the spec and the partner permutation."""
    if batch.role != "joined":
        raise ValueError(f"cutmix expects a joined batch, got role {batch.role!r}")
    n = len(batch)
    if n == 0:
        return batch.with_role("augmented"), None, np.zeros(0, dtype=np.int64)
    height, width = batch.images.shape[2], batch.images.shape[3]
    perm = rng.permutation(n)
    spec = sample_mixspec(width, height, rng)
    w1, h1, w2, h2 = spec.box
    images = batch.images.copy()
    images[:, :, h1:h2, w1:w2] = batch.images[perm][:, :, h1:h2, w1:w2]
    labels = spec.lam * batch.labels + (1.0 - spec.lam) * batch.labels[perm]
    validate_label_rows(labels)
    return (
        Batch(images=images, labels=labels, task_ids=batch.task_ids.copy(), role="augmented"),
        spec,
        perm,
    )


def cutmix(batch: Batch, rng: np.random.Generator) -> Batch:
    """Augmented copy of the batch (same size); the input is not modified."""
    augmented, _, _ = cutmix_detailed(batch, rng)
    return augmented
