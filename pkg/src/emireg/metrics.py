"""Evaluation metric (mean Pearson over the six targets) and run bookkeeping."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ShapeError
from .tensor import Array, as_tensor

N_TARGETS = 6
DEGENERATE_EPS = 1e-12


def pearson(x, y, eps: float = DEGENERATE_EPS) -> tuple[float, bool]:
    """Population Pearson correlation of two equal-length vectors.

    Computed in a single pass over raw moments with a fixed summation order.
    Returns ``(r, degenerate)``; a variance at or below ``eps`` on either
    side yields the degenerate value 0 with the flag set.
    """
    x = as_tensor(x).ravel()
    y = as_tensor(y).ravel()
    if x.size != y.size:
        raise ShapeError(f"pearson length mismatch: {x.size} vs {y.size}")
    n = x.size
    if n < 2:
        raise ShapeError(f"pearson needs length >= 2, got {n}")
    sx = float(np.sum(x))
    sy = float(np.sum(y))
    sxx = float(np.sum(x * x))
    syy = float(np.sum(y * y))
    sxy = float(np.sum(x * y))
    mean_x = sx / n
    mean_y = sy / n
    var_x = sxx / n - mean_x * mean_x
    var_y = syy / n - mean_y * mean_y
    if var_x <= eps or var_y <= eps:
        return 0.0, True
    cov = sxy / n - mean_x * mean_y
    return cov / float(np.sqrt(var_x * var_y)), False


@dataclass
class EvalReport:
    """Per-dimension Pearson scores over an evaluation split and their mean."""

    p: list[float]
    p_mean: float
    n: int
    degenerate_dims: list[int] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "p": self.p,
            "p_mean": self.p_mean,
            "n": self.n,
            "degenerate_dims": self.degenerate_dims,
        }


def mean_pcc(predictions, targets) -> EvalReport:
    """Challenge metric: per-column Pearson, averaged across the six targets.

    Degenerate columns score 0 and are flagged instead of erroring, so an
    evaluation always produces a report.
    """
    predictions = as_tensor(predictions)
    targets = as_tensor(targets)
    if predictions.shape != targets.shape:
        raise ShapeError(
            f"mean_pcc shapes differ: {predictions.shape} vs {targets.shape}"
        )
    if predictions.ndim != 2 or predictions.shape[1] != N_TARGETS:
        raise ShapeError(f"mean_pcc expects [N x {N_TARGETS}], got {predictions.shape}")
    if predictions.shape[0] < 2:
        raise ShapeError(f"mean_pcc needs N >= 2, got {predictions.shape[0]}")
    scores: list[float] = []
    degenerate: list[int] = []
    for dim in range(N_TARGETS):
        r, flag = pearson(predictions[:, dim], targets[:, dim])
        scores.append(r)
        if flag:
            degenerate.append(dim)
    return EvalReport(
        p=scores,
        p_mean=float(sum(scores) / N_TARGETS),
        n=predictions.shape[0],
        degenerate_dims=degenerate,
    )


class EarlyStopper:
    """Stop when the metric has not strictly improved for ``patience`` epochs."""

    def __init__(self, patience: int):
        if patience < 1:
            raise ConfigError(f"patience must be >= 1, got {patience}")
        self.patience = patience
        self.best = -np.inf
        self.best_epoch = 0
        self.epoch = 0
        self.stale = 0

    def update(self, p_mean: float) -> tuple[bool, bool]:
        """Record one epoch's metric; returns ``(improved, stop)``."""
        self.epoch += 1
        if p_mean > self.best:
            self.best = p_mean
            self.best_epoch = self.epoch
            self.stale = 0
            return True, False
        self.stale += 1
        return False, self.stale >= self.patience
