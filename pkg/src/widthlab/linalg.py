"""Norms, spectral estimation, and log-log power-law fitting.

All matrices are dense float64 numpy arrays with shape (fan_out, fan_in);
vectors are 1-D arrays. The RMS norm measures typical entry size
independently of dimension, which is what makes width-scaling exponents
comparable across layers:

    rms_norm(v)        = dim^{-1/2} * ||v||_2
    rms_matrix_norm(W) = (fan_in * fan_out)^{-1/2} * ||W||_F
    rms_op_norm(W)     = sqrt(fan_in / fan_out) * sigma_max(W)

sigma_max comes from power iteration on the Gram matrix (max 1000
iterations, relative tolerance 1e-9, deterministic all-ones start with one
seeded random restart if the first pass lands on a zero direction).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .rng import Rng

POWER_ITER_MAX = 1000
POWER_ITER_TOL = 1e-9  # relative change of successive sigma estimates
_RESTART_SEED = 0x5EED


def rms_norm(v: np.ndarray) -> float:
    """Root-mean-square norm of a vector: sqrt(mean of squared entries)."""
    v = np.asarray(v, dtype=np.float64)
    if v.ndim != 1 or v.size < 1:
        raise ValueError("rms_norm expects a 1-D vector with dim >= 1")
    # Divergent runs feed huge-but-finite values here; inf is the answer.
    with np.errstate(over="ignore"):
        return float(np.sqrt(np.mean(v * v)))


def rms_matrix_norm(w: np.ndarray) -> float:
    """Entrywise RMS of a matrix: (fan_in*fan_out)^{-1/2} * Frobenius norm."""
    w = np.asarray(w, dtype=np.float64)
    if w.ndim != 2 or w.shape[0] < 1 or w.shape[1] < 1:
        raise ValueError("rms_matrix_norm expects a 2-D matrix")
    with np.errstate(over="ignore"):
        return float(np.sqrt(np.mean(w * w)))


@dataclass(frozen=True)
class SpectralEstimate:
    """Largest singular value estimate from power iteration."""

    value: float
    converged: bool
    iterations: int


def spectral_norm(w: np.ndarray) -> SpectralEstimate:
    """sigma_max(W) by power iteration on the smaller Gram matrix.

    Deterministic: all-ones start vector; if that run converges to an
    essentially zero direction for a nonzero matrix (the start vector can be
    orthogonal to the top singular direction), one seeded random restart is
    taken. Non-convergence after POWER_ITER_MAX iterations returns the best
    estimate with converged=False.
    """
    w = np.asarray(w, dtype=np.float64)
    if w.ndim != 2:
        raise ValueError("spectral_norm expects a 2-D matrix")
    frob = float(np.linalg.norm(w))
    if frob == 0.0:
        return SpectralEstimate(0.0, True, 0)
    # Work with B = W^T W or W W^T, whichever is smaller.
    gram_on_cols = w.shape[1] <= w.shape[0]
    dim = w.shape[1] if gram_on_cols else w.shape[0]

    def apply_gram(v: np.ndarray) -> np.ndarray:
        if gram_on_cols:
            return w.T @ (w @ v)
        return w @ (w.T @ v)

    def iterate(v0: np.ndarray) -> SpectralEstimate:
        v = v0 / np.linalg.norm(v0)
        sigma = 0.0
        for it in range(1, POWER_ITER_MAX + 1):
            bv = apply_gram(v)
            lam = float(np.linalg.norm(bv))
            new_sigma = np.sqrt(lam)
            if lam == 0.0:
                return SpectralEstimate(0.0, True, it)
            v = bv / lam
            if abs(new_sigma - sigma) <= POWER_ITER_TOL * max(new_sigma, sigma):
                return SpectralEstimate(new_sigma, True, it)
            sigma = new_sigma
        return SpectralEstimate(sigma, False, POWER_ITER_MAX)

    est = iterate(np.ones(dim, dtype=np.float64))
    # A zero estimate for a nonzero matrix means the start vector was
    # (numerically) orthogonal to every significant direction; retry once.
    if est.value <= 1e-12 * frob:
        restart = Rng(_RESTART_SEED, dim).normal(dim)
        est = iterate(restart)
    return est


def rms_op_norm(w: np.ndarray) -> float:
    """Operator norm w.r.t. RMS norms: sup_x ||Wx||_RMS / ||x||_RMS.

    Equals sqrt(fan_in/fan_out) * sigma_max(W). Uses the best power-iteration
    estimate even when unconverged (see `spectral_norm` for the flag).
    """
    w = np.asarray(w, dtype=np.float64)
    fan_out, fan_in = w.shape
    return float(np.sqrt(fan_in / fan_out) * spectral_norm(w).value)


@dataclass(frozen=True)
class PowerLawFit:
    """OLS fit of log(value) against log(n)."""

    exponent: float
    intercept: float  # log-space intercept, base e
    r_squared: float
    n_points: int

    @property
    def prefactor(self) -> float:
        """Multiplicative constant c in value = c * n^exponent."""
        return float(np.exp(self.intercept))


def power_law_fit(points) -> PowerLawFit:
    """Fit value = c * n^p by least squares on (log n, log value).

    points: iterable of (n, value) pairs, n > 0 and value > 0 required.
    A nonpositive value raises with the offending n named, so callers can
    decide whether it signals divergence. Constant data fits exactly with
    r_squared = 1.
    """
    pts = [(float(n), float(v)) for n, v in points]
    if len(pts) < 2:
        raise ValueError(f"power_law_fit needs >= 2 points, got {len(pts)}")
    for n, v in pts:
        if not (n > 0):
            raise ValueError(f"power_law_fit: nonpositive n {n}")
        if not (v > 0):
            raise ValueError(f"power_law_fit: nonpositive value {v} at n={n:g}")
    x = np.log(np.array([n for n, _ in pts]))
    y = np.log(np.array([v for _, v in pts]))
    xm, ym = x.mean(), y.mean()
    sxx = float(np.sum((x - xm) ** 2))
    if sxx == 0.0:
        raise ValueError("power_law_fit: all n identical, slope undefined")
    slope = float(np.sum((x - xm) * (y - ym)) / sxx)
    intercept = ym - slope * xm
    resid = y - (intercept + slope * x)
    ss_res = float(np.sum(resid**2))
    ss_tot = float(np.sum((y - ym) ** 2))
    r2 = 1.0 if ss_tot == 0.0 else 1.0 - ss_res / ss_tot
    return PowerLawFit(slope, float(intercept), float(r2), len(pts))
