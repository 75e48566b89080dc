"""Training objective: soft-label cross-entropy plus the weighted
multi-scale distillation term.

Labels are dense probability rows so CutMix targets need no special
casing: CE against a mixed row equals the same mixture of the one-hot
losses. The teacher forward runs without gradient recording; when no
teacher exists (first task) or the distillation weight is zero the
total is exactly the cross-entropy.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .data import Batch
from .distill import multiscale_kd_loss
from .network import ModelState, flatten_grads, forward, forward_with_params, param_tensors

LABEL_SUM_TOL = 1e-6


@dataclass
class LossReport:
    total: float
    ce: float
    kd: float
    kd_weight: float


@dataclass
class TotalLoss:
    """Differentiable total plus the per-term report and the parameter
    leaves whose .grad backward() will fill."""

    total: Tensor
    report: LossReport
    params: dict


def cross_entropy(logits: Tensor, soft_labels) -> Tensor:
    """Mean over the batch of -sum_k y_k log softmax(logits)_k."""
    soft_labels = np.asarray(soft_labels, dtype=np.float64)
    if logits.shape != soft_labels.shape:
        raise ad.ShapeError(
            f"cross_entropy: logits {logits.shape} vs labels {soft_labels.shape}"
        )
    sums = soft_labels.sum(axis=1)
    if soft_labels.shape[0] and np.max(np.abs(sums - 1.0)) > LABEL_SUM_TOL:
        worst = int(np.argmax(np.abs(sums - 1.0)))
        raise ValueError(f"cross_entropy: label row {worst} sums to {sums[worst]!r}")
    log_probs = ad.log_softmax(logits)
    per_example = ad.neg(ad.tensor_sum(ad.mul(log_probs, Tensor(soft_labels)), axis=1))
    return ad.mean(per_example)


def total_loss(
    model: ModelState,
    teacher: ModelState | None,
    batch: Batch,
    kd_weight: float,
    scales=(1, 2),
    normalize_kd: bool = False,
) -> TotalLoss:
    """One forward pass with taps; CE plus weighted distillation to the teacher."""
    if len(batch) == 0:
        raise ValueError("total_loss: empty batch")
    params = param_tensors(model, requires_grad=True)
    with_taps = teacher is not None
    result = forward_with_params(model.arch, params, Tensor(batch.images), with_taps=with_taps)
    ce = cross_entropy(result.logits, batch.labels)
    kd_value = 0.0
    total = ce
    if teacher is not None:
        teacher_taps = [t.detach() for t in forward(teacher, batch.images, with_taps=True).taps]
        kd = multiscale_kd_loss(result.taps, teacher_taps, scales, normalize=normalize_kd)
        kd_value = kd.item()
        if kd_weight != 0.0:
            total = ad.add(ce, ad.mul_scalar(kd, kd_weight))
    report = LossReport(total=total.item(), ce=ce.item(), kd=kd_value, kd_weight=float(kd_weight))
    return TotalLoss(total=total, report=report, params=params)


def loss_and_grad(
    model: ModelState,
    teacher: ModelState | None,
    batch: Batch,
    kd_weight: float,
    scales=(1, 2),
    normalize_kd: bool = False,
):
    """(report, flat gradient vector) of the total loss at `model`."""
    result = total_loss(model, teacher, batch, kd_weight, scales, normalize_kd)
    ad.backward(result.total)
    return result.report, flatten_grads(result.params, model.arch)
