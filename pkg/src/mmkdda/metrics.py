"""Accuracy-matrix bookkeeping and the five continual-learning metrics.

The matrix has T + 1 rows over T task columns: row 0 holds the accuracies
of the randomly initialized model (this row doubles as the random
baseline for forward transfer), row i the accuracies on every task's test
set after finishing task i. Rows are write-once.

With rows indexed 0..T and task columns 1..T (stored 0-based):
  average accuracy   mean of the final row
  learning accuracy  mean of a[i, i] over tasks
  backward transfer  mean of a[T, i] - a[i, i] over i < T
  forgetting         mean over j < T of max over trained rows l < T of
                     a[l, j] minus a[T, j]
  forward transfer   mean of a[i-1, i] - baseline_i over i in 1..T-1
                     (the i = 1 term compares the init row with itself)
For a single task the three transfer/forgetting sums are empty and are
reported as 0.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np

from .network import ModelState, forward

EVAL_CHUNK = 256


class AccuracyMatrix:
    """(T+1) x T write-once accuracy table; row 0 is the random-init row."""

    def __init__(self, num_tasks: int):
        if num_tasks < 1:
            raise ValueError(f"need at least 1 task, got {num_tasks}")
        self.num_tasks = int(num_tasks)
        self.rows = np.zeros((num_tasks + 1, num_tasks))
        self._populated = [False] * (num_tasks + 1)

    def set_row(self, after_task: int, accuracies) -> None:
        accuracies = np.asarray(accuracies, dtype=np.float64)
        if accuracies.shape != (self.num_tasks,):
            raise ValueError(
                f"row needs {self.num_tasks} entries, got shape {accuracies.shape}"
            )
        if not (0 <= after_task <= self.num_tasks):
            raise ValueError(f"row index {after_task} outside [0, {self.num_tasks}]")
        if self._populated[after_task]:
            raise ValueError(f"row {after_task} already populated")
        if np.any(accuracies < 0) or np.any(accuracies > 1):
            raise ValueError("accuracies must lie in [0, 1]")
        self.rows[after_task] = accuracies
        self._populated[after_task] = True

    def is_complete(self) -> bool:
        return all(self._populated)

    @property
    def baseline(self) -> np.ndarray:
        """Random-init accuracy per task (the first row)."""
        if not self._populated[0]:
            raise ValueError("baseline row (row 0) not populated")
        return self.rows[0]


@dataclass
class MetricsReport:
    acc: float
    fm: float
    bwt: float
    fwt: float
    la: float

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True, indent=2) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "MetricsReport":
        return cls(**json.loads(text))


def evaluate_row(model: ModelState, test_sets, class_sets=None) -> np.ndarray:
    """Per-task test accuracy of argmax predictions (ties -> lowest class).

    test_sets is a list of (images, labels) pairs, one per task. When
    class_sets is given (multi-head evaluation) the argmax for task j is
    restricted to that task's class columns.
    """
    accuracies = np.zeros(len(test_sets))
    for j, (images, labels) in enumerate(test_sets):
        if len(images) == 0:
            raise ValueError(f"test set {j} is empty")
        labels = np.asarray(labels, dtype=np.int64)
        correct = 0
        for start in range(0, len(images), EVAL_CHUNK):
            chunk = images[start : start + EVAL_CHUNK]
            logits = forward(model, chunk).logits.data
            if class_sets is not None:
                cols = np.asarray(sorted(class_sets[j]), dtype=np.int64)
                predictions = cols[np.argmax(logits[:, cols], axis=1)]
            else:
                predictions = np.argmax(logits, axis=1)
            correct += int(np.sum(predictions == labels[start : start + EVAL_CHUNK]))
        accuracies[j] = correct / len(images)
    return accuracies


def compute_metrics(matrix: AccuracyMatrix) -> MetricsReport:
    """The five metrics from a fully populated accuracy matrix."""
    if not matrix.is_complete():
        missing = [i for i, p in enumerate(matrix._populated) if not p]
        raise ValueError(f"accuracy matrix rows not populated: {missing}")
    a = matrix.rows
    t = matrix.num_tasks
    baseline = matrix.baseline
    acc = float(np.mean(a[t]))
    la = float(np.mean([a[i][i - 1] for i in range(1, t + 1)]))
    if t == 1:
        return MetricsReport(acc=acc, fm=0.0, bwt=0.0, fwt=0.0, la=la)
    bwt = float(np.mean([a[t][i - 1] - a[i][i - 1] for i in range(1, t)]))
    fm = float(np.mean([
        np.max(a[1:t, j - 1]) - a[t][j - 1] for j in range(1, t)
    ]))
    fwt = float(np.mean([a[i - 1][i - 1] - baseline[i - 1] for i in range(1, t)]))
    return MetricsReport(acc=acc, fm=fm, bwt=bwt, fwt=fwt, la=la)


def save_matrix_csv(path, matrix: AccuracyMatrix) -> None:
    header = "after_task," + ",".join(f"task_{j}" for j in range(matrix.num_tasks))
    lines = [header]
    for i in range(matrix.num_tasks + 1):
        lines.append(str(i) + "," + ",".join(repr(float(v)) for v in matrix.rows[i]))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_matrix_csv(path) -> AccuracyMatrix:
    with open(path) as fh:
        lines = [ln.strip() for ln in fh if ln.strip()]
    header = lines[0].split(",")
    if header[0] != "after_task" or len(header) < 2:
        raise ValueError(f"{path}: not an accuracy-matrix CSV (header {header[:3]}...)")
    num_tasks = len(header) - 1
    if len(lines) - 1 != num_tasks + 1:
        raise ValueError(f"{path}: expected {num_tasks + 1} rows, found {len(lines) - 1}")
    matrix = AccuracyMatrix(num_tasks)
    for line in lines[1:]:
        cells = line.split(",")
        matrix.set_row(int(cells[0]), [float(c) for c in cells[1:]])
    return matrix
