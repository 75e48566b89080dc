"""Labeled mini-batches shared by the stream, memory, augmentation and loss
modules.

A batch carries images as (N, C, H, W) float64, labels as dense (N, K)
soft rows (one-hot for raw data, mixed after augmentation) and the task
id of every example. The role string records where the batch came from:
"current", "memory", "augmented" or "joined".
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

LABEL_ROW_TOL = 1e-9


@dataclass
class Batch:
    images: np.ndarray
    labels: np.ndarray
    task_ids: np.ndarray
    role: str = "current"

    def __post_init__(self):
        self.images = np.asarray(self.images, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.float64)
        self.task_ids = np.asarray(self.task_ids, dtype=np.int64)
        if self.images.ndim != 4:
            raise ValueError(f"batch images must be (N, C, H, W), got {self.images.shape}")
        n = self.images.shape[0]
        if self.labels.ndim != 2 or self.labels.shape[0] != n or self.task_ids.shape != (n,):
            raise ValueError(
                f"batch fields disagree on size: images {self.images.shape}, "
                f"labels {self.labels.shape}, task_ids {self.task_ids.shape}"
            )

    def __len__(self):
        return self.images.shape[0]

    @property
    def num_classes(self):
        return self.labels.shape[1]

    def with_role(self, role: str) -> "Batch":
        return replace(self, role=role)


def one_hot(class_ids, num_classes):
    """Dense one-hot rows for integer class ids."""
    class_ids = np.asarray(class_ids, dtype=np.int64)
    rows = np.zeros((class_ids.shape[0], num_classes))
    rows[np.arange(class_ids.shape[0]), class_ids] = 1.0
    return rows


def empty_batch(image_shape, num_classes, role="memory"):
    """Zero-example batch with the given (C, H, W) image shape."""
    c, h, w = image_shape
    return Batch(
        images=np.zeros((0, c, h, w)),
        labels=np.zeros((0, num_classes)),
        task_ids=np.zeros(0, dtype=np.int64),
        role=role,
    )


def concat_batches(batches, role="joined"):
    """Concatenate batches along the example axis; empty inputs are skipped."""
    batches = [b for b in batches if len(b) > 0]
    if not batches:
        raise ValueError("concat_batches: all inputs are empty")
    if len(batches) == 1:
        b = batches[0]
        return Batch(b.images.copy(), b.labels.copy(), b.task_ids.copy(), role=role)
    return Batch(
        images=np.concatenate([b.images for b in batches]),
        labels=np.concatenate([b.labels for b in batches]),
        task_ids=np.concatenate([b.task_ids for b in batches]),
        role=role,
    )


def validate_label_rows(labels, tol=LABEL_ROW_TOL):
    """Raise if any soft-label row does not sum to 1 within `tol`."""
    sums = labels.sum(axis=1)
    if labels.shape[0] and np.max(np.abs(sums - 1.0)) > tol:
        worst = int(np.argmax(np.abs(sums - 1.0)))
        raise ValueError(f"label row {worst} sums to {sums[worst]!r}, expected 1")
