"""The four training objectives and their weighted composition.

Every loss returns both its value and the analytic gradient with respect to
the predictions it consumes, so a single backward pass can accumulate all
terms. All functions are pure.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ShapeError
from .tensor import Array, as_tensor, ensure_finite

N_TARGETS = 6
DEFAULT_CORR_EPS = 1e-8


@dataclass(frozen=True)
class LossWeights:
    """Non-negative weights of the composite objective.

    ``corr``/``aux``/``vad`` weigh whole terms; ``aux_visual``/``aux_audio``/
    ``aux_text`` weigh the per-branch pieces inside the auxiliary term.
    """

    corr: float = 0.5
    aux: float = 0.3
    vad: float = 0.1
    aux_visual: float = 1.0
    aux_audio: float = 1.0
    aux_text: float = 1.0

    def __post_init__(self):
        for name, value in self.__dict__.items():
            if not np.isfinite(value) or value < 0:
                raise ConfigError(f"loss weight {name} must be finite and >= 0, got {value}")

    def per_branch(self) -> dict[str, float]:
        return {"visual": self.aux_visual, "audio": self.aux_audio, "text": self.aux_text}


@dataclass
class LossBreakdown:
    """Per-step report of the objective terms and the weighted total."""

    mse: float
    corr: float
    aux: float
    vad: float
    total: float
    aux_per_branch: dict[str, float] = field(default_factory=dict)

    def to_dict(self) -> dict:
        out = {
            "mse": self.mse,
            "corr": self.corr,
            "aux": self.aux,
            "vad": self.vad,
            "total": self.total,
        }
        for name, value in self.aux_per_branch.items():
            out[f"aux_{name}"] = value
        return out


@dataclass
class LossGrads:
    """Gradients of the weighted total w.r.t. the model outputs."""

    y_hat: Array
    aux: dict[str, Array]
    v_hat: Array | None


def _check_pred_target(y_hat: Array, y: Array, op: str) -> None:
    if y_hat.shape != y.shape:
        raise ShapeError(f"{op}: prediction {y_hat.shape} vs target {y.shape}")
    if y_hat.ndim != 2 or y_hat.shape[1] != N_TARGETS:
        raise ShapeError(f"{op}: expected [batch x {N_TARGETS}], got {y_hat.shape}")


def mse_loss(y_hat, y) -> tuple[float, Array]:
    """Mean over the batch of the per-sample mean squared error over 6 dims."""
    y_hat = as_tensor(y_hat)
    y = as_tensor(y)
    _check_pred_target(y_hat, y, "mse_loss")
    diff = y_hat - y
    value = float(np.mean(diff * diff))
    grad = 2.0 * diff / diff.size
    return value, grad


def pearson_loss(
    y_hat,
    y,
    eps: float = DEFAULT_CORR_EPS,
    mode: str = "per_dim",
) -> tuple[float, Array]:
    """Batch-level correlation objective: 1 - mean PCC.

    ``per_dim`` computes one PCC per target dimension over the batch and
    averages the six; ``flat`` computes a single PCC over all entries.
    Dimensions whose prediction or target variance falls below ``eps``
    contribute PCC = 0 (so 1 to the loss) with a zero gradient, which keeps
    collapsed predictions penalized but gradient-safe.
    """
    y_hat = as_tensor(y_hat)
    y = as_tensor(y)
    _check_pred_target(y_hat, y, "pearson_loss")
    if y_hat.shape[0] < 2:
        raise ShapeError(f"pearson_loss needs batch >= 2, got {y_hat.shape[0]}")
    if mode == "flat":
        value, grad_flat = _pcc_with_grad(y_hat.ravel(), y.ravel(), eps)
        return 1.0 - value, -grad_flat.reshape(y_hat.shape)
    if mode != "per_dim":
        raise ConfigError(f"unknown pearson mode {mode!r}")
    grad = np.zeros_like(y_hat)
    total = 0.0
    for dim in range(N_TARGETS):
        value, g = _pcc_with_grad(y_hat[:, dim], y[:, dim], eps)
        total += value
        grad[:, dim] = -g / N_TARGETS
    return 1.0 - total / N_TARGETS, grad


def _pcc_with_grad(x: Array, t: Array, eps: float) -> tuple[float, Array]:
    """Population PCC of x against fixed t, and d PCC / d x. Degenerate -> (0, 0)."""
    n = x.size
    xc = x - x.mean()
    tc = t - t.mean()
    var_x = float(xc @ xc) / n
    var_t = float(tc @ tc) / n
    if var_x < eps or var_t < eps:
        return 0.0, np.zeros_like(x)
    sx = float(np.sqrt(xc @ xc))
    st = float(np.sqrt(tc @ tc))
    cov = float(xc @ tc)
    r = cov / (sx * st)
    grad = tc / (sx * st) - (r / (sx * sx)) * xc
    return r, grad


def aux_loss(
    aux_preds: dict[str, Array],
    y,
    weights: LossWeights,
) -> tuple[float, dict[str, Array], dict[str, float]]:
    """Weighted sum of per-branch MSE against the shared 6-D target."""
    per_branch_w = weights.per_branch()
    grads: dict[str, Array] = {}
    values: dict[str, float] = {}
    total = 0.0
    for name, pred in aux_preds.items():
        value, grad = mse_loss(pred, y)
        values[name] = value
        grads[name] = per_branch_w[name] * grad
        total += per_branch_w[name] * value
    return total, grads, values


def vad_reg_loss(v_hat) -> tuple[float, Array]:
    """Mean over the batch of the squared distance of v_hat to (0.5, 0.5, 0.5)."""
    v_hat = as_tensor(v_hat)
    if v_hat.ndim != 2 or v_hat.shape[1] != 3:
        raise ShapeError(f"vad_reg_loss expects [batch x 3], got {v_hat.shape}")
    diff = v_hat - 0.5
    batch = v_hat.shape[0]
    value = float(np.sum(diff * diff) / batch)
    return value, 2.0 * diff / batch


def total_loss(
    y_hat,
    y,
    aux_preds: dict[str, Array],
    v_hat,
    weights: LossWeights,
    corr_eps: float = DEFAULT_CORR_EPS,
    corr_mode: str = "per_dim",
) -> tuple[LossBreakdown, LossGrads]:
    """Compose the four terms; gradients of zero-weighted terms are skipped.

    Every term is still evaluated for the breakdown so that logs stay
    comparable across configurations. A batch of one sample, which the
    trainer can produce as the final short batch, is treated as all-degenerate
    for the correlation term (value 1, zero gradient) rather than an error.
    """
    y_hat = as_tensor(y_hat)
    y = as_tensor(y)
    mse_value, mse_grad = mse_loss(y_hat, y)
    d_y_hat = mse_grad

    if y_hat.shape[0] >= 2:
        corr_value, corr_grad = pearson_loss(y_hat, y, eps=corr_eps, mode=corr_mode)
    else:
        corr_value, corr_grad = 1.0, np.zeros_like(y_hat)
    if weights.corr > 0:
        d_y_hat = d_y_hat + weights.corr * corr_grad

    aux_value, aux_grads, aux_values = aux_loss(aux_preds, y, weights)
    d_aux = {
        name: (weights.aux * g if weights.aux > 0 else np.zeros_like(g))
        for name, g in aux_grads.items()
    }

    if v_hat is not None:
        vad_value, vad_grad = vad_reg_loss(v_hat)
        d_v_hat = weights.vad * vad_grad if weights.vad > 0 else np.zeros_like(vad_grad)
    else:
        vad_value, d_v_hat = 0.0, None

    total = (
        mse_value
        + weights.corr * corr_value
        + weights.aux * aux_value
        + weights.vad * vad_value
    )
    ensure_finite(np.asarray(total), "total_loss")
    breakdown = LossBreakdown(
        mse=mse_value,
        corr=corr_value,
        aux=aux_value,
        vad=vad_value,
        total=total,
        aux_per_branch=aux_values,
    )
    return breakdown, LossGrads(y_hat=d_y_hat, aux=d_aux, v_hat=d_v_hat)
