"""Task streams: a labeled dataset split into disjoint class-subset tasks
delivered as a single-pass mini-batch stream, plus a seeded synthetic
dataset generator and the raw binary dataset format.

Synthetic classes are Gaussian-blob templates at distinct image
locations with i.i.d. pixel noise, clipped to [0, 1]; pixel scaling to
[0, 1] is the only preprocessing anywhere (augmentation is CutMix's job).

Binary dataset file (MMDS): magic "MMDS", u16 version, five u32 counts
(N, C, H, W, K), N u16 class indices, then N*C*H*W float32 pixels in
[0, 1]. All integers and floats little-endian.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .data import Batch, one_hot

MMDS_MAGIC = b"MMDS"
MMDS_VERSION = 1


@dataclass
class Dataset:
    images: np.ndarray  # (N, C, H, W) float64 in [0, 1]
    labels: np.ndarray  # (N,) int64
    num_classes: int


@dataclass
class TaskData:
    task_id: int
    class_ids: tuple
    train_images: np.ndarray
    train_labels: np.ndarray
    test_images: np.ndarray
    test_labels: np.ndarray
    batch_order: np.ndarray  # fixed single-pass order over train examples


@dataclass
class TaskStream:
    tasks: list
    batch_size: int
    num_classes: int

    @property
    def num_tasks(self):
        return len(self.tasks)

    def test_sets(self):
        return [(t.test_images, t.test_labels) for t in self.tasks]

    def class_sets(self):
        return [t.class_ids for t in self.tasks]

    def iter_batches(self, task_index: int):
        """Single pass over the task's training data in its fixed order."""
        task = self.tasks[task_index]
        order = task.batch_order
        for start in range(0, len(order), self.batch_size):
            picks = order[start : start + self.batch_size]
            yield Batch(
                images=task.train_images[picks],
                labels=one_hot(task.train_labels[picks], self.num_classes),
                task_ids=np.full(len(picks), task.task_id, dtype=np.int64),
                role="current",
            )


def synth_dataset(classes, per_class, image_shape=(1, 8, 8), seed=0, noise=0.3) -> Dataset:
    """Seeded synthetic dataset: one blob template per class plus noise."""
    if classes < 2:
        raise ValueError(f"need at least 2 classes, got {classes}")
    c, h, w = image_shape
    rng = np.random.default_rng(seed)
    # Distinct blob centers keep the classes linearly separable.
    cells = [(y, x) for y in range(h) for x in range(w)]
    centers = [cells[i] for i in rng.choice(len(cells), size=classes, replace=False)]
    yy, xx = np.mgrid[0:h, 0:w]
    images = np.zeros((classes * per_class, c, h, w))
    labels = np.zeros(classes * per_class, dtype=np.int64)
    for cls in range(classes):
        cy, cx = centers[cls]
        spread = rng.uniform(1.0, 2.0)
        template = np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2.0 * spread**2))
        amplitude = rng.uniform(0.7, 1.0, size=c)
        base = amplitude[:, None, None] * template[None]
        lo = cls * per_class
        samples = base[None] + rng.normal(scale=noise, size=(per_class, c, h, w)) \
            if noise > 0 else np.broadcast_to(base, (per_class, c, h, w))
        images[lo : lo + per_class] = np.clip(samples, 0.0, 1.0)
        labels[lo : lo + per_class] = cls
    return Dataset(images=images, labels=labels, num_classes=classes)


def split_tasks(
    dataset: Dataset,
    tasks: int,
    classes_per_task: int,
    seed: int,
    batch_size: int = 10,
    test_fraction: float = 0.2,
    shuffle_classes: bool = True,
) -> TaskStream:
    """Partition classes into disjoint tasks with per-task train/test splits
    and a fixed seeded single-pass batch order."""
    if tasks * classes_per_task > dataset.num_classes:
        raise ValueError(
            f"{tasks} tasks x {classes_per_task} classes need "
            f"{tasks * classes_per_task} classes, dataset has {dataset.num_classes}"
        )
    if batch_size < 1:
        raise ValueError(f"batch_size must be >= 1, got {batch_size}")
    rng = np.random.default_rng(seed)
    class_order = rng.permutation(dataset.num_classes) if shuffle_classes \
        else np.arange(dataset.num_classes)
    task_list = []
    for t in range(tasks):
        class_ids = tuple(int(v) for v in class_order[t * classes_per_task : (t + 1) * classes_per_task])
        train_idx, test_idx = [], []
        for cls in class_ids:
            members = np.flatnonzero(dataset.labels == cls)
            members = members[rng.permutation(len(members))]
            n_test = int(round(len(members) * test_fraction))
            if len(members) - n_test < 1:
                raise ValueError(f"class {cls} has too few examples for the test split")
            test_idx.extend(members[:n_test])
            train_idx.extend(members[n_test:])
        train_idx = np.array(train_idx, dtype=np.int64)
        test_idx = np.array(test_idx, dtype=np.int64)
        order = rng.permutation(len(train_idx))
        task_list.append(
            TaskData(
                task_id=t,
                class_ids=class_ids,
                train_images=dataset.images[train_idx],
                train_labels=dataset.labels[train_idx],
                test_images=dataset.images[test_idx],
                test_labels=dataset.labels[test_idx],
                batch_order=order,
            )
        )
    return TaskStream(tasks=task_list, batch_size=int(batch_size),
                      num_classes=dataset.num_classes)


def save_dataset(path, dataset: Dataset) -> None:
    """Write the MMDS binary format (pixels stored as float32)."""
    n, c, h, w = dataset.images.shape
    with open(path, "wb") as fh:
        fh.write(MMDS_MAGIC)
        fh.write(struct.pack("<H", MMDS_VERSION))
        fh.write(struct.pack("<5I", n, c, h, w, dataset.num_classes))
        fh.write(dataset.labels.astype("<u2").tobytes())
        fh.write(dataset.images.astype("<f4").tobytes())


def load_dataset(path) -> Dataset:
    """Read and validate an MMDS file; pixels come back as float64."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != MMDS_MAGIC:
        raise ValueError(f"{path}: bad magic {blob[:4]!r}, expected {MMDS_MAGIC!r}")
    (version,) = struct.unpack_from("<H", blob, 4)
    if version != MMDS_VERSION:
        raise ValueError(f"{path}: unsupported version {version}")
    n, c, h, w, k = struct.unpack_from("<5I", blob, 6)
    offset = 6 + 20
    expected = offset + n * 2 + n * c * h * w * 4
    if len(blob) != expected:
        raise ValueError(f"{path}: size {len(blob)} does not match header (expected {expected})")
    labels = np.frombuffer(blob, dtype="<u2", count=n, offset=offset).astype(np.int64)
    if n and labels.max() >= k:
        raise ValueError(f"{path}: label {labels.max()} out of range for {k} classes")
    pixels = np.frombuffer(blob, dtype="<f4", count=n * c * h * w, offset=offset + n * 2)
    images = pixels.astype(np.float64).reshape(n, c, h, w)
    if n and (images.min() < 0.0 or images.max() > 1.0):
        raise ValueError(f"{path}: pixel values outside [0, 1]")
    return Dataset(images=images, labels=labels, num_classes=int(k))
