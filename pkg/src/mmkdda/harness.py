"""End-to-end experiment runner with MKD / DA / ML component toggles.

One run streams every task once. Per mini-batch: draw the current batch,
sample a replay batch, optionally CutMix the joined batch and append the
augmented copies, take k SGD steps on the joined data (distilling against
the previous-task snapshot when MKD is on), optionally interpolate back
toward the pre-batch parameters with the task-scheduled balance factor,
then write the current batch to memory. After every task the model is
evaluated on all test sets and snapshotted as the next teacher (snapshots
are cheap, so they are taken even when MKD is off).

All randomness flows from four generators derived from the run seed
(dataset synthesis/split, init, memory sampling, CutMix), each consumed
only by its concern, so disabled components leave the remaining streams
untouched and toggled-off runs match the standalone baselines exactly.

Every artifact a run emits is a pure function of (config, seed): float
formatting is repr() round-trip text and wall-clock time never enters a
file, so reruns hash identically.
"""

from __future__ import annotations

import hashlib
import os
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .config import ConfigError, ExperimentConfig, config_snapshot, with_toggles
from .data import concat_batches
from .losses import loss_and_grad
from .memory import EpisodicMemory
from .meta import MetaConfig, inner_sgd, interpolate_update
from .metrics import AccuracyMatrix, MetricsReport, compute_metrics, evaluate_row, save_matrix_csv
from .cutmix import cutmix
from .network import default_arch, init_model
from .serialize import save_model
from .stream import load_dataset, split_tasks, synth_dataset

# Desk-scale benchmark defaults (overridden only by an explicit dataset file).
DEFAULT_CLASSES = 10
DEFAULT_PER_CLASS = 250
DEFAULT_IMAGE_SHAPE = (1, 8, 8)
DEFAULT_NOISE = 0.3
DEFAULT_TEST_FRACTION = 0.2
DISTILL_SCALES = (1, 2)

_SEED_STREAMS = ("synth", "split", "init", "memory", "cutmix")


class HarnessError(RuntimeError):
    """A run aborted; the message names the failing task/step/phase."""


def derived_seeds(seed: int) -> dict:
    """Independent named seed per randomness concern, from one run seed."""
    state = np.random.SeedSequence(seed).generate_state(len(_SEED_STREAMS))
    return {name: int(value) for name, value in zip(_SEED_STREAMS, state)}


@dataclass
class RunRecord:
    config: ExperimentConfig
    matrix: AccuracyMatrix
    report: MetricsReport
    loss_rows: list            # (step, task, LossReport)
    seed: int
    wall_clock: float
    param_digests: list = field(default_factory=list)
    final_model: object = None
    memory: object = None


def _digest(params) -> str:
    return hashlib.sha256(np.ascontiguousarray(params).tobytes()).hexdigest()


def build_stream(cfg: ExperimentConfig):
    """The run's task stream from the synthetic benchmark or an MMDS file."""
    seeds = derived_seeds(cfg.seed)
    if cfg.data is not None:
        dataset = load_dataset(cfg.data)
    else:
        dataset = synth_dataset(
            DEFAULT_CLASSES, DEFAULT_PER_CLASS, image_shape=DEFAULT_IMAGE_SHAPE,
            seed=seeds["synth"], noise=DEFAULT_NOISE,
        )
    classes_per_task = dataset.num_classes // cfg.tasks
    if classes_per_task < 1:
        raise ConfigError(
            f"{cfg.tasks} tasks need at least {cfg.tasks} classes, "
            f"dataset has {dataset.num_classes}"
        )
    return split_tasks(
        dataset, cfg.tasks, classes_per_task, seed=seeds["split"],
        batch_size=cfg.batch, test_fraction=DEFAULT_TEST_FRACTION,
    )


def run_experiment(cfg: ExperimentConfig, trace_params: bool = False,
                   multi_head: bool = False) -> RunRecord:
    """Execute one full run; writes artifacts when cfg.out is set."""
    started = time.perf_counter()
    seeds = derived_seeds(cfg.seed)
    stream = build_stream(cfg)
    image_shape = stream.tasks[0].train_images.shape[1:]
    arch = default_arch(input_shape=image_shape, num_classes=stream.num_classes)
    from .distill import validate_scales
    validate_scales([arch.feature_shapes()[t] for t in arch.tap_layers], DISTILL_SCALES)

    model = init_model(arch, seeds["init"])
    memory = EpisodicMemory(cfg.mem_per_task)
    memory_rng = np.random.default_rng(seeds["memory"])
    cutmix_rng = np.random.default_rng(seeds["cutmix"])
    meta_cfg = MetaConfig(
        inner_steps=cfg.inner_steps, inner_lr=cfg.effective_inner_lr,
        decay_rate=cfg.rho, total_tasks=stream.num_tasks,
    )
    test_sets = stream.test_sets()
    class_sets = stream.class_sets() if multi_head else None

    matrix = AccuracyMatrix(stream.num_tasks)
    matrix.set_row(0, evaluate_row(model, test_sets, class_sets))
    loss_rows = []
    digests = []
    teacher = None
    step = 0
    for task_index in range(stream.num_tasks):
        for batch in stream.iter_batches(task_index):
            phase = "sample-memory"
            try:
                replay = memory.sample(cfg.batch, memory_rng)
                joined = concat_batches([batch, replay], role="joined")
                if cfg.da:
                    phase = "cutmix"
                    augmented = cutmix(joined, cutmix_rng)
                    train_batch = concat_batches([joined, augmented], role="joined")
                else:
                    train_batch = joined
                phase = "update"
                kd_teacher = teacher if cfg.mkd else None

                def loss_fn(state, data):
                    return loss_and_grad(state, kd_teacher, data, cfg.kd_weight,
                                         DISTILL_SCALES)

                adapted, reports = inner_sgd(model, train_batch, meta_cfg, loss_fn)
                model = interpolate_update(model, adapted, task_index, meta_cfg) \
                    if cfg.ml else adapted
                phase = "write-memory"
                memory.write(task_index, batch)
            except Exception as exc:
                raise HarnessError(
                    f"run aborted at task {task_index}, step {step}, phase {phase}: {exc}"
                ) from exc
            loss_rows.append((step, task_index, reports[0]))
            if trace_params:
                digests.append(_digest(model.params))
            step += 1
        matrix.set_row(task_index + 1, evaluate_row(model, test_sets, class_sets))
        teacher = model  # states are immutable, so this IS a deep snapshot
    report = compute_metrics(matrix)
    record = RunRecord(
        config=cfg, matrix=matrix, report=report, loss_rows=loss_rows,
        seed=cfg.seed, wall_clock=time.perf_counter() - started,
        param_digests=digests, final_model=model, memory=memory,
    )
    if cfg.out:
        write_run_outputs(record, cfg.out)
    return record


def write_run_outputs(record: RunRecord, out_dir) -> None:
    os.makedirs(out_dir, exist_ok=True)
    join = lambda name: os.path.join(out_dir, name)
    with open(join("config.txt"), "w") as fh:
        fh.write(config_snapshot(record.config))
    with open(join("losses.csv"), "w") as fh:
        fh.write("step,task,ce,kd,total\n")
        for step, task, report in record.loss_rows:
            fh.write(f"{step},{task},{report.ce!r},{report.kd!r},{report.total!r}\n")
    save_matrix_csv(join("accuracy_matrix.csv"), record.matrix)
    with open(join("metrics.json"), "w") as fh:
        fh.write(record.report.to_json())
    rows = record.matrix.rows
    t = record.matrix.num_tasks
    with open(join("curve_avg_accuracy.csv"), "w") as fh:
        fh.write("after_task,acc_seen_tasks,acc_all_tasks\n")
        for i in range(1, t + 1):
            fh.write(f"{i},{float(np.mean(rows[i][:i]))!r},{float(np.mean(rows[i]))!r}\n")
    with open(join("final_task_accuracy.csv"), "w") as fh:
        fh.write("task,accuracy\n")
        for j in range(t):
            fh.write(f"{j},{float(rows[t][j])!r}\n")
    save_model(join("checkpoint.mmkd"), record.final_model, memory=record.memory)


ABLATION_ROWS = (
    ("base", False, False, False),
    ("+mkd", True, False, False),
    ("+da", False, True, False),
    ("mkd+da", True, True, False),
    ("mkd+da+ml", True, True, True),
)


@dataclass
class AblationCell:
    method: str
    seed: int
    report: MetricsReport | None
    error: str | None = None


@dataclass
class AblationTable:
    rows: list  # (method, mkd, da, ml, stats dict, failures)
    cells: list

    def to_csv(self) -> str:
        header = ("method,mkd,da,ml,acc_mean,acc_std,la_mean,la_std,"
                  "fm_mean,fm_std,failures\n")
        lines = [header]
        for method, mkd, da, ml, stats, failures in self.rows:
            cells = [method, int(mkd), int(da), int(ml)]
            for key in ("acc", "la", "fm"):
                cells.append(repr(stats[key + "_mean"]))
                cells.append(repr(stats[key + "_std"]))
            cells.append(failures)
            lines.append(",".join(str(c) for c in cells) + "\n")
        return "".join(lines)


def run_ablation_grid(base_cfg: ExperimentConfig, repeats: int) -> AblationTable:
    """The five-toggle-combination grid, `repeats` seeds per row.

    Row r, repeat i runs with seed base_seed + i, so every row shares the
    same task splits and stream order per repeat. Failed cells are
    recorded and leave the row marked partial instead of aborting the
    grid; std uses the population convention (0 for a single repeat).
    """
    if repeats < 1:
        raise ConfigError(f"repeats must be >= 1, got {repeats}")
    out_root = base_cfg.out
    rows = []
    all_cells = []
    for method, mkd, da, ml in ABLATION_ROWS:
        reports = []
        failures = 0
        for i in range(repeats):
            out = None
            if out_root:
                out = os.path.join(out_root, method.replace("+", "_"), f"seed_{base_cfg.seed + i}")
            cfg = replace(with_toggles(base_cfg, mkd, da, ml),
                          seed=base_cfg.seed + i, out=out)
            try:
                record = run_experiment(cfg)
                reports.append(record.report)
                all_cells.append(AblationCell(method, cfg.seed, record.report))
            except HarnessError as exc:
                failures += 1
                all_cells.append(AblationCell(method, cfg.seed, None, error=str(exc)))
        stats = {}
        for key in ("acc", "la", "fm"):
            values = [getattr(r, key) for r in reports]
            stats[key + "_mean"] = float(np.mean(values)) if values else float("nan")
            stats[key + "_std"] = float(np.std(values)) if values else float("nan")
        label = f"{failures}/{repeats} failed" if failures else "none"
        rows.append((method, mkd, da, ml, stats, label))
    table = AblationTable(rows=rows, cells=all_cells)
    if out_root:
        os.makedirs(out_root, exist_ok=True)
        with open(os.path.join(out_root, "ablation.csv"), "w") as fh:
            fh.write(table.to_csv())
    return table
