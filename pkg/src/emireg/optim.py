"""Decoupled-weight-decay Adam, cosine schedule, norm clipping, EMA shadows."""

from __future__ import annotations

import numpy as np

from .errors import ConfigError, NumericError
from .layers import Param
from .tensor import Array


def clip_global_norm(params: dict[str, Param], max_norm: float) -> tuple[float, float]:
    """Scale all gradients so their joint L2 norm is at most ``max_norm``.

    Returns ``(scale factor applied, pre-clip norm)``. The factor is 1.0 when
    no clipping was needed.
    """
    total = 0.0
    for p in params.values():
        total += float(np.sum(p.grad * p.grad))
    norm = float(np.sqrt(total))
    if not np.isfinite(norm):
        raise NumericError("non-finite gradient norm; aborting step")
    if norm <= max_norm or norm == 0.0:
        return 1.0, norm
    factor = max_norm / norm
    for p in params.values():
        p.grad *= factor
    return factor, norm


def cosine_lr(t: float, total: int, eta0: float, eta_min: float = 0.0) -> float:
    """Cosine annealing from eta0 at t=0 down to eta_min at t=total."""
    if total <= 0:
        raise ConfigError(f"cosine schedule length must be positive, got {total}")
    if not 0 <= t <= total:
        raise ConfigError(f"schedule position {t} outside [0, {total}]")
    return eta_min + 0.5 * (eta0 - eta_min) * (1.0 + float(np.cos(np.pi * t / total)))


class AdamW:
    """Adam with decoupled weight decay over a named parameter dict.

    The learning rate is supplied per step so the schedule stays outside the
    optimizer. Moments live per parameter name; the step counter is global.
    """

    def __init__(
        self,
        params: dict[str, Param],
        weight_decay: float = 1e-4,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
    ):
        self.params = params
        self.weight_decay = weight_decay
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {name: np.zeros_like(p.value) for name, p in params.items()}
        self.v = {name: np.zeros_like(p.value) for name, p in params.items()}

    def step(self, lr: float) -> None:
        if lr < 0:
            raise ConfigError(f"learning rate must be >= 0, got {lr}")
        self.t += 1
        bc1 = 1.0 - self.beta1**self.t
        bc2 = 1.0 - self.beta2**self.t
        for name, p in self.params.items():
            g = p.grad
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            update = (m / bc1) / (np.sqrt(v / bc2) + self.eps)
            if self.weight_decay != 0.0:
                update = update + self.weight_decay * p.value
            p.value -= lr * update
            if not np.all(np.isfinite(p.value)):
                raise NumericError(f"non-finite parameter {name!r} after optimizer step")


class Ema:
    """Exponential moving average of parameter values (shadow weights).

    Shadows start as a copy of the initial parameters and follow
    ``shadow <- d * shadow + (1 - d) * value`` on every update.
    """

    def __init__(self, params: dict[str, Param], decay: float):
        if not 0.0 <= decay <= 1.0:
            raise ConfigError(f"EMA decay must be in [0, 1], got {decay}")
        self.decay = decay
        self.shadows: dict[str, Array] = {
            name: p.value.copy() for name, p in params.items()
        }

    def update(self, params: dict[str, Param]) -> None:
        d = self.decay
        for name, p in params.items():
            shadow = self.shadows[name]
            shadow *= d
            shadow += (1.0 - d) * p.value
