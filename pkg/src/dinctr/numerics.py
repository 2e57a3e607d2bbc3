"""Deterministic float64 numerics shared by every other module.

Conventions
-----------
Matrices are plain 2-D C-contiguous ``numpy.ndarray`` values of dtype
float64 (row-major, ``data length == rows * cols``); vectors are 1-D
float64. Public operations validate shapes and guarantee finite outputs.
Everything here runs in 64-bit: gradient checking is unreliable in 32-bit.

Randomness comes from :func:`make_rng`, which pins the PCG64 bit generator.
PCG64 is a fixed, documented algorithm whose output stream for a given seed
is identical across runs and platforms, so datasets and parameter
initialisations reproduce bit for bit. The platform-default global RNG is
never used.
"""

from __future__ import annotations

from typing import Callable

import numpy as np


def make_rng(seed: int, stream: int = 0) -> np.random.Generator:
    """Seeded PCG64 generator.

    ``stream`` separates independent uses of the same user-facing seed
    (0 = data generation, 1 = parameter init, 2 = epoch shuffling).
    """
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, stream])))


def as_matrix(a, name: str = "matrix") -> np.ndarray:
    """Coerce to a 2-D C-contiguous float64 array, validating the shape."""
    m = np.ascontiguousarray(a, dtype=np.float64)
    if m.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got shape {m.shape}")
    if m.shape[0] < 1 or m.shape[1] < 1:
        raise ValueError(f"{name} must have positive dimensions, got {m.shape}")
    return m


def matmul(a, b) -> np.ndarray:
    """Matrix product with explicit shape checking.

    result[i][j] = sum_k a[i][k] * b[k][j]. Raises on inner-dimension
    mismatch, naming both shapes, and on non-finite output.
    """
    a = as_matrix(a, "left operand")
    b = as_matrix(b, "right operand")
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"cannot multiply {a.shape} by {b.shape}: inner dimensions differ")
    out = a @ b
    if not np.isfinite(out).all():
        raise FloatingPointError("matmul produced non-finite entries")
    return out


def sigmoid(x):
    """Numerically stable logistic function, 1 / (1 + exp(-x)).

    Computed via exp(-|x|) so it saturates instead of overflowing for any
    finite input. Scalar in, scalar out; arrays are mapped elementwise.
    """
    arr = np.asarray(x, dtype=np.float64)
    e = np.exp(-np.abs(arr))
    out = np.where(arr >= 0.0, 1.0 / (1.0 + e), e / (1.0 + e))
    if out.ndim == 0:
        return float(out)
    return out


def softmax(scores, mask=None) -> np.ndarray:
    """Masked softmax over a 1-D score vector.

    Masked-out positions are excluded before exponentiation and come back
    as exact zeros; the surviving weights are positive and sum to 1. Uses
    max-subtraction for stability.

    Raises ``ValueError("empty behavior sequence")`` when every position is
    masked out.
    """
    s = np.ascontiguousarray(scores, dtype=np.float64)
    if s.ndim != 1:
        raise ValueError(f"scores must be 1-D, got shape {s.shape}")
    if mask is None:
        m = np.ones(s.shape, dtype=bool)
    else:
        m = np.asarray(mask, dtype=bool)
        if m.shape != s.shape:
            raise ValueError(f"mask shape {m.shape} != scores shape {s.shape}")
    if not m.any():
        raise ValueError("empty behavior sequence")
    out = np.zeros_like(s)
    live = s[m]
    z = np.exp(live - live.max())
    out[m] = z / z.sum()
    return out


def grad_check(
    loss_fn: Callable[[np.ndarray], float],
    params,
    analytic_grad,
    eps: float = 1e-5,
) -> float:
    """Compare an analytic gradient against central finite differences.

    For each coordinate i the numeric gradient is
    (loss(p + eps*e_i) - loss(p - eps*e_i)) / (2*eps) and the returned value
    is the maximum over coordinates of

        |analytic - numeric| / max(1e-8, |analytic| + |numeric|).

    ``loss_fn`` must be pure and deterministic. Raises on non-finite loss
    evaluations and on non-positive ``eps``.
    """
    if eps <= 0.0:
        raise ValueError("eps must be positive")
    p = np.array(params, dtype=np.float64).ravel()
    g = np.asarray(analytic_grad, dtype=np.float64).ravel()
    if g.shape != p.shape:
        raise ValueError(f"gradient shape {g.shape} != params shape {p.shape}")
    worst = 0.0
    for i in range(p.size):
        orig = p[i]
        p[i] = orig + eps
        f_plus = float(loss_fn(p))
        p[i] = orig - eps
        f_minus = float(loss_fn(p))
        p[i] = orig
        if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
            raise FloatingPointError(f"non-finite loss while perturbing coordinate {i}")
        numeric = (f_plus - f_minus) / (2.0 * eps)
        rel = abs(g[i] - numeric) / max(1e-8, abs(g[i]) + abs(numeric))
        if rel > worst:
            worst = float(rel)
    return worst
