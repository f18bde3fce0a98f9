"""Dense float64 arrays and the primitive operations layers are built from.

All arrays are C-contiguous float64 ("row-major 64-bit reals"). Operations
are pure functions: they never mutate their inputs, they are deterministic
(same inputs give bit-identical outputs on a fixed platform), and they
raise :class:`~emireg.errors.NumericError` instead of silently propagating
NaN/Inf.
"""

from __future__ import annotations

from typing import Callable

import numpy as np

from .errors import NumericError, ShapeError

Array = np.ndarray


def as_tensor(data) -> Array:
    """Coerce to a C-contiguous float64 array (no copy when already one)."""
    return np.ascontiguousarray(data, dtype=np.float64)


def ensure_finite(x: Array, context: str) -> Array:
    """Return ``x`` unchanged, raising NumericError if any element is NaN/Inf."""
    if not np.all(np.isfinite(x)):
        raise NumericError(f"non-finite values produced by {context}")
    return x


def _require_same_shape(a: Array, b: Array, op: str) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} differ")


def matmul(a, b) -> Array:
    """Strict 2-D matrix product a[m,k] @ b[k,n]."""
    a = as_tensor(a)
    b = as_tensor(b)
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul expects 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul inner extents differ: {a.shape} x {b.shape}")
    return ensure_finite(a @ b, "matmul")


def add(a, b) -> Array:
    a = as_tensor(a)
    b = as_tensor(b)
    _require_same_shape(a, b, "add")
    return ensure_finite(a + b, "add")


def sub(a, b) -> Array:
    a = as_tensor(a)
    b = as_tensor(b)
    _require_same_shape(a, b, "sub")
    return ensure_finite(a - b, "sub")


def mul(a, b) -> Array:
    a = as_tensor(a)
    b = as_tensor(b)
    _require_same_shape(a, b, "mul")
    return ensure_finite(a * b, "mul")


def scale(x, c: float) -> Array:
    return ensure_finite(as_tensor(x) * float(c), "scale")


def sigmoid(x) -> Array:
    """Numerically stable logistic function, elementwise; range (0, 1)."""
    x = as_tensor(x)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return ensure_finite(out, "sigmoid")


def sigmoid_grad_from_output(y: Array) -> Array:
    """d sigmoid / d x expressed through the forward output y = sigmoid(x)."""
    return y * (1.0 - y)


def relu(x) -> Array:
    return np.maximum(as_tensor(x), 0.0)


def relu_grad_mask(x: Array) -> Array:
    """Derivative of relu at the pre-activation x (0 at the kink itself)."""
    return (x > 0).astype(np.float64)


def reduce_mean(x, axis: int) -> Array:
    """Arithmetic mean along ``axis``; the output drops that axis."""
    x = as_tensor(x)
    if not 0 <= axis < x.ndim:
        raise ShapeError(f"reduce_mean axis {axis} out of range for rank {x.ndim}")
    if x.shape[axis] == 0:
        raise ShapeError(f"reduce_mean over empty axis {axis} of shape {x.shape}")
    return ensure_finite(np.mean(x, axis=axis), "reduce_mean")


def grad_check(
    f: Callable[[Array], tuple[float, Array]],
    x,
    eps: float = 1e-5,
) -> float:
    """Compare f's analytic gradient against central finite differences.

    ``f`` maps an array to ``(scalar value, gradient array of x's shape)``.
    Returns the max over coordinates of
    ``|analytic - numeric| / max(1, |analytic|, |numeric|)``.
    """
    x = as_tensor(x).copy()
    _, analytic = f(x)
    analytic = as_tensor(analytic)
    if analytic.shape != x.shape:
        raise ShapeError(
            f"gradient shape {analytic.shape} does not match input shape {x.shape}"
        )
    flat = x.reshape(-1)
    grad_flat = analytic.reshape(-1)
    worst = 0.0
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        up, _ = f(x)
        flat[i] = orig - eps
        down, _ = f(x)
        flat[i] = orig
        if not (np.isfinite(up) and np.isfinite(down)):
            raise NumericError("non-finite value while probing finite differences")
        numeric = (up - down) / (2.0 * eps)
        a = grad_flat[i]
        err = abs(a - numeric) / max(1.0, abs(a), abs(numeric))
        worst = max(worst, err)
    return worst
