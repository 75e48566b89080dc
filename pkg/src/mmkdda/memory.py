"""Episodic replay memory: one fixed-capacity ring per task.

Writes go to the task's ring at a wrapping cursor, so once a ring is
full it always holds the most recent `per_task_capacity` examples for
that task. Sampling draws uniformly without replacement from the union
of all rings, enumerated in ascending task order and storage (not
recency) order within a ring; an empty draw consumes no randomness.
Both conventions are load-bearing for reproducing runs from a seed.
"""

from __future__ import annotations

import numpy as np

from .data import Batch


class EpisodicMemory:
    """Per-task ring-buffer store of (image, soft-label-row) examples."""

    def __init__(self, per_task_capacity: int):
        if per_task_capacity < 0:
            raise ValueError(f"capacity must be >= 0, got {per_task_capacity}")
        self.per_task_capacity = int(per_task_capacity)
        self.slots: dict[int, list] = {}
        self.cursors: dict[int, int] = {}
        self.seen: dict[int, int] = {}

    def __len__(self):
        return sum(len(ring) for ring in self.slots.values())

    def count(self, task: int) -> int:
        return len(self.slots.get(task, ()))

    def seen_count(self, task: int) -> int:
        return self.seen.get(task, 0)

    def write(self, task: int, batch: Batch) -> "EpisodicMemory":
        """Append a batch at the task's ring cursor (wrapping); returns self.

        Every example in the batch must carry the given task id.
        """
        task = int(task)
        if len(batch) and not np.all(batch.task_ids == task):
            raise ValueError(
                f"write: batch mixes task ids {sorted(set(batch.task_ids.tolist()))}, "
                f"expected only {task}"
            )
        self.seen[task] = self.seen.get(task, 0) + len(batch)
        if self.per_task_capacity == 0:
            return self
        ring = self.slots.setdefault(task, [])
        cursor = self.cursors.get(task, 0)
        for i in range(len(batch)):
            example = (batch.images[i].copy(), batch.labels[i].copy())
            if len(ring) < self.per_task_capacity:
                ring.append(example)
            else:
                ring[cursor] = example
            cursor = (cursor + 1) % self.per_task_capacity
        self.cursors[task] = cursor
        return self

    def sample(self, k: int, rng: np.random.Generator) -> Batch:
        """Uniform sample without replacement over all stored examples.

        Returns all stored examples (in rng order) when fewer than k are
        stored, and an empty batch, without touching the rng, when the
        memory is empty or k == 0.
        """
        if k < 0:
            raise ValueError(f"sample: k must be >= 0, got {k}")
        flat = []
        for task in sorted(self.slots):
            for image, label in self.slots[task]:
                flat.append((image, label, task))
        total = len(flat)
        m = min(k, total)
        if m == 0:
            return Batch(
                images=np.zeros((0, 1, 1, 1)),
                labels=np.zeros((0, 1)),
                task_ids=np.zeros(0, dtype=np.int64),
                role="memory",
            )
        picks = rng.choice(total, size=m, replace=False)
        images = np.stack([flat[i][0] for i in picks])
        labels = np.stack([flat[i][1] for i in picks])
        task_ids = np.array([flat[i][2] for i in picks], dtype=np.int64)
        return Batch(images=images, labels=labels, task_ids=task_ids, role="memory")


def write(mem: EpisodicMemory, task: int, batch: Batch) -> EpisodicMemory:
    return mem.write(task, batch)


def sample(mem: EpisodicMemory, k: int, rng: np.random.Generator) -> Batch:
    return mem.sample(k, rng)
