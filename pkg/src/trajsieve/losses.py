"""Training objectives and displacement metrics.

The trajectory loss is the squared L2 displacement averaged over the
predicted steps. The variance loss -log(variance + eps) rewards spread in
the importance scores and is skipped (None) for scenes with fewer than two
neighbors; the total objective adds it with weight alpha. ADE/FDE are the
standard mean and final displacement errors in meters.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .errors import ContractError

VARIANCE_EPSILON = 1e-6


@dataclass(frozen=True)
class LossBreakdown:
    """Scalar record of one objective evaluation; ``variance_term`` is None
    for scenes where the variance loss did not apply, in which case total
    equals trajectory exactly."""

    trajectory: float
    variance_term: float | None
    total: float
    alpha: float


def trajectory_loss(pred: ad.Tensor, truth) -> ad.Tensor:
    """Mean over predicted steps of squared L2 displacement (m^2)."""
    truth = np.asarray(truth, dtype=np.float64)
    if pred.data.shape != truth.shape or truth.ndim != 2 or truth.shape[1] != 2:
        raise ContractError(
            f"trajectory_loss: shapes differ or are not (T, 2): {pred.data.shape} vs {truth.shape}"
        )
    if not np.all(np.isfinite(truth)):
        raise ContractError("trajectory_loss: truth contains non-finite values")
    diff = ad.sub(pred, ad.constant(truth))
    return ad.scale(ad.sum_all(ad.mul(diff, diff)), 1.0 / truth.shape[0])


def variance_loss(scores: ad.Tensor, epsilon: float = VARIANCE_EPSILON) -> ad.Tensor | None:
    """-log(population variance of scores + epsilon); None when fewer than
    two scores exist (such scenes are excluded from the batch mean)."""
    if epsilon <= 0:
        raise ContractError(f"variance_loss: epsilon must be positive, got {epsilon}")
    if scores.data.size < 2:
        return None
    return ad.neg(ad.log(ad.add(ad.variance(scores), ad.constant(float(epsilon)))))


def total_loss(traj: ad.Tensor, var_term: ad.Tensor | None,
               alpha: float = 1.0) -> tuple[ad.Tensor, LossBreakdown]:
    """Combine the two objectives; with alpha 0 or no variance term the
    returned tensor is the trajectory loss itself, bit for bit."""
    if alpha < 0:
        raise ContractError(f"total_loss: alpha must be non-negative, got {alpha}")
    traj_value = traj.item()
    if var_term is None or alpha == 0.0:
        var_value = None if var_term is None else var_term.item()
        return traj, LossBreakdown(traj_value, var_value, traj_value, alpha)
    combined = ad.add(traj, ad.scale(var_term, alpha))
    return combined, LossBreakdown(traj_value, var_term.item(), combined.item(), alpha)


def _check_metric_shapes(pred, truth):
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if pred.shape != truth.shape or pred.ndim != 2 or pred.shape[1] != 2:
        raise ContractError(
            f"metric: shapes differ or are not (T, 2): {pred.shape} vs {truth.shape}"
        )
    return pred, truth


def ade(pred, truth) -> float:
    """Average displacement error: mean L2 distance over predicted steps."""
    pred, truth = _check_metric_shapes(pred, truth)
    return float(np.linalg.norm(pred - truth, axis=-1).mean())


def fde(pred, truth) -> float:
    """Final displacement error: L2 distance at the last predicted step."""
    pred, truth = _check_metric_shapes(pred, truth)
    return float(np.linalg.norm(pred[-1] - truth[-1]))
