"""Two-layer linear model f = (mult) * v^T (u x): exact GD dynamics.

For scalar data this model's full-batch GD orbit closes over just two
numbers: the prediction f and a normalized curvature lambda (the squared
gradient norm of f in the model's own learning-rate geometry, i.e. the
instantaneous NTK contracted so that one GD step moves f by
-eta_eff * chi * lambda at leading order). With chi = f - y and s = ||x||^2
the one-step maps are, writing e = eta:

    mup:  f' = f (1 + e^2 chi^2 s) - e chi lam
          lam' = lam + s e chi (e chi lam - 4 f)
    sp(c): with e_c = e n^-c,
          f' = f (1 + e_c^2 chi^2 s) - n e_c chi lam
          lam' = lam + e_c chi s (e_c chi lam - 4 f / n)
    ntp:  f' = f (1 + e^2 chi^2 s / n) - e chi lam
          lam' = lam + e chi s (e chi lam - 4 f) / n

The wide limits with fresh data close over (g, k) where f = g * x and
lam = k * x^2: mup keeps its full quadratic map with k_0 -> 1/d + 1;
sp(c=1) and ntp linearize to g' = g - e chi x k with k frozen
(k_0 -> 1 for sp, 1 + 1/d... see uv_init notes; for d=1: sp 1, ntp 2).

Stability and curvature directions follow sign identities on the exact
map: sharpness increases iff e chi (e chi lam - 4 (chi + y) / n_sp) > 0
and the loss strictly decreases iff
A = e^2 chi f ||x||^2 / n_ntp - e n_sp lam lies strictly inside (-2, 0),
since chi' = chi (1 + A). n_sp is n for the sp parameterization (1
otherwise) and n_ntp is n for ntp (1 otherwise); e is the learning rate
actually applied per step (already including n^-c for sp).
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, replace

import numpy as np

from .rng import Rng

F_OVERFLOW = 1e12
BOUNDARY_TOL = 1e-12


class UvKind(enum.Enum):
    NTP = "ntp"
    SP = "sp"
    MUP = "mup"


@dataclass(frozen=True)
class UvParam:
    """Parameterization tag plus the sp learning-rate exponent c
    (eta per step = eta * n^-c; ignored for ntp/mup)."""

    kind: UvKind
    sp_exponent: float = 0.0

    @classmethod
    def parse(cls, name: str, sp_exponent: float = 0.0) -> "UvParam":
        return cls(UvKind(name), sp_exponent)


@dataclass(frozen=True)
class UvWeights:
    """Raw factor weights; u has shape (n, d), v has shape (n,)."""

    u: np.ndarray
    v: np.ndarray
    kind: UvKind
    n: int
    d: int


@dataclass(frozen=True)
class UvState:
    """Closed dynamics state for a fixed scalar-output regression pair."""

    f: float
    lam: float
    param: UvParam
    n: int
    eta: float
    y: float
    x2: float
    diverged: bool = False

    @property
    def chi(self) -> float:
        return self.f - self.y


def _predict(w: UvWeights, x: np.ndarray) -> float:
    z = w.u @ x
    f = float(w.v @ z)
    if w.kind is UvKind.NTP:
        f /= np.sqrt(w.n)
    return f


def _kernel(w: UvWeights, x: np.ndarray) -> float:
    """Normalized curvature lambda(x) such that one GD step at the
    parameterization's own rates moves f by -eta * chi * lambda * (n
    factor per the maps above) at first order."""
    s = float(x @ x)
    ux2 = float(np.sum((w.u @ x) ** 2))
    v2 = float(w.v @ w.v)
    if w.kind is UvKind.MUP:
        return w.n * v2 * s + ux2 / w.n
    # ntp and sp share the 1/n normalization.
    return (v2 * s + ux2) / w.n


def uv_init(
    rng: Rng,
    param: UvParam,
    n: int,
    d: int = 1,
    x=1.0,
    y: float = 0.0,
    eta: float = 0.01,
):
    """Sample factor weights and derive the matching closed-form state.

    Init variances: ntp u, v ~ N(0, 1) (with the n^-1/2 output multiplier
    folded into the forward pass); sp u ~ N(0, 1/d), v ~ N(0, 1/n);
    mup u ~ N(0, 1/d), v ~ N(0, 1/n^2). At large n the initial lambda
    concentrates on x^2 * (1/d + 1) for ntp and mup, and x^2 / d for sp.
    """
    if n < 1 or d < 1:
        raise ValueError(f"need n, d >= 1, got n={n} d={d}")
    x = np.atleast_1d(np.asarray(x, dtype=np.float64))
    if x.shape != (d,):
        raise ValueError(f"x shape {x.shape} does not match d={d}")
    if param.kind is UvKind.NTP:
        u_var, v_var = 1.0, 1.0
    elif param.kind is UvKind.SP:
        u_var, v_var = 1.0 / d, 1.0 / n
    elif param.kind is UvKind.MUP:
        u_var, v_var = 1.0 / d, 1.0 / (n * n)
    else:
        raise ValueError(f"unknown uv kind {param.kind}")
    u = rng.split("u").normal((n, d)) * np.sqrt(u_var)
    v = rng.split("v").normal(n) * np.sqrt(v_var)
    weights = UvWeights(u=u, v=v, kind=param.kind, n=n, d=d)
    state = UvState(
        f=_predict(weights, x),
        lam=_kernel(weights, x),
        param=param,
        n=n,
        eta=eta,
        y=y,
        x2=float(x @ x),
    )
    return weights, state


def step_eta(state: UvState) -> float:
    """Learning rate actually applied this step (n^-c folded in for sp)."""
    if state.param.kind is UvKind.SP:
        return state.eta * state.n ** (-state.param.sp_exponent)
    return state.eta


def uv_step(state: UvState) -> UvState:
    """One exact GD step of the closed (f, lambda) map."""
    if state.diverged:
        return state
    chi = state.chi
    s = state.x2
    n = state.n
    e = step_eta(state)
    if state.param.kind is UvKind.MUP:
        f_new = state.f * (1.0 + e * e * chi * chi * s) - e * chi * state.lam
        lam_new = state.lam + s * e * chi * (e * chi * state.lam - 4.0 * state.f)
    elif state.param.kind is UvKind.SP:
        f_new = state.f * (1.0 + e * e * chi * chi * s) - n * e * chi * state.lam
        lam_new = state.lam + e * chi * s * (e * chi * state.lam - 4.0 * state.f / n)
    elif state.param.kind is UvKind.NTP:
        f_new = state.f * (1.0 + e * e * chi * chi * s / n) - e * chi * state.lam
        lam_new = state.lam + e * chi * s * (e * chi * state.lam - 4.0 * state.f) / n
    else:
        raise ValueError(f"unknown uv kind {state.param.kind}")
    diverged = not (np.isfinite(f_new) and np.isfinite(lam_new)) or abs(f_new) > F_OVERFLOW
    return replace(state, f=f_new, lam=lam_new, diverged=diverged)


def sharpness_change_sign(state: UvState) -> int:
    """Sign of the upcoming lambda change: +1 increase, -1 decrease,
    0 on the (tolerance-banded) boundary. chi = 0 always gives 0."""
    chi = state.chi
    n_sp = state.n if state.param.kind is UvKind.SP else 1
    e = step_eta(state)
    product = e * chi * (e * chi * state.lam - 4.0 * (chi + state.y) / n_sp)
    scale = max(abs(e * chi) * (abs(e * chi * state.lam) + 4.0 * abs(chi + state.y) / n_sp), 1.0)
    if abs(product) <= BOUNDARY_TOL * scale:
        return 0
    return 1 if product > 0 else -1


def sharpness_increases(state: UvState) -> bool:
    """Whether lambda strictly increases at the next step."""
    return sharpness_change_sign(state) > 0


def loss_change_sign(state: UvState) -> int:
    """Sign of the upcoming |chi| change via chi' = chi (1 + A):
    -1 strict decrease (A strictly inside (-2, 0)), +1 strict increase,
    0 on the boundary (A = 0 or -2 within tolerance) or when chi = 0
    or eta = 0 (the loss cannot move)."""
    chi = state.chi
    if chi == 0.0 or state.eta == 0.0:
        return 0
    n_sp = state.n if state.param.kind is UvKind.SP else 1
    n_ntp = state.n if state.param.kind is UvKind.NTP else 1
    e = step_eta(state)
    a = e * e * chi * (chi + state.y) * state.x2 / n_ntp - e * n_sp * state.lam
    scale = max(abs(e * e * chi * (chi + state.y) * state.x2 / n_ntp)
                + abs(e * n_sp * state.lam), 1.0)
    if abs(a) <= BOUNDARY_TOL * scale or abs(a + 2.0) <= BOUNDARY_TOL * scale:
        return 0
    return -1 if -2.0 < a < 0.0 else 1


def loss_decreases(state: UvState) -> bool:
    """Whether |chi| strictly decreases at the next step (boundary and
    frozen cases return False)."""
    return loss_change_sign(state) < 0


def uv_explicit_train(weights: UvWeights, param: UvParam, eta: float, data, steps: int):
    """Plain GD on the raw (u, v) weights for a fixed pair (x, y).

    Returns (f_traj, lam_traj, diverged): trajectories of length at most
    steps + 1 including the initial point, truncated on overflow. Used to
    cross-check the closed (f, lambda) map against real weight updates.
    """
    x, y = data
    x = np.atleast_1d(np.asarray(x, dtype=np.float64))
    u = weights.u.copy()
    v = weights.v.copy()
    n, d = weights.n, weights.d
    if x.shape != (d,):
        raise ValueError(f"x shape {x.shape} does not match d={d}")
    kind = param.kind
    if kind is not weights.kind:
        raise ValueError(f"weights were drawn for {weights.kind}, not {kind}")
    if kind is UvKind.SP:
        eta_u = eta_v = eta * n ** (-param.sp_exponent)
    elif kind is UvKind.MUP:
        eta_u, eta_v = eta * n, eta / n
    else:
        eta_u = eta_v = eta
    f_traj, lam_traj = [], []
    diverged = False
    for _ in range(steps + 1):
        w = UvWeights(u=u, v=v, kind=kind, n=n, d=d)
        f = _predict(w, x)
        lam = _kernel(w, x)
        if not (np.isfinite(f) and np.isfinite(lam)) or abs(f) > F_OVERFLOW:
            diverged = True
            break
        f_traj.append(f)
        lam_traj.append(lam)
        chi = f - y
        mult = 1.0 / np.sqrt(n) if kind is UvKind.NTP else 1.0
        ux = u @ x
        gu = mult * chi * np.outer(v, x)
        gv = mult * chi * ux
        u = u - eta_u * gu
        v = v - eta_v * gv
    return np.array(f_traj), np.array(lam_traj), diverged


def uv_gk_step(param: UvParam, n: int, g: float, k: float, x: float, y: float, eta: float):
    """One finite-width step of the fresh-data sufficient statistic
    (g, k), where f(x) = g x and lambda(x) = k x^2 for scalar inputs."""
    chi = g * x - y
    kind = param.kind
    if kind is UvKind.MUP:
        g_new = g * (1.0 + eta * eta * chi * chi * x * x) - eta * chi * k * x
        k_new = k + eta * chi * x * (eta * chi * x * k - 4.0 * g)
    elif kind is UvKind.SP:
        e = eta * n ** (-param.sp_exponent)
        g_new = g * (1.0 + e * e * chi * chi * x * x) - n * e * chi * k * x
        k_new = k + e * chi * x * (e * chi * x * k - 4.0 * g / n)
    elif kind is UvKind.NTP:
        g_new = g * (1.0 + eta * eta * chi * chi * x * x / n) - eta * chi * k * x
        k_new = k + eta * chi * x * (eta * chi * x * k - 4.0 * g) / n
    else:
        raise ValueError(f"unknown uv kind {kind}")
    return g_new, k_new


def uv_gk_limit_step(param: UvParam, g: float, k: float, x: float, y: float, eta: float):
    """Infinite-width counterpart of uv_gk_step. mup keeps its quadratic
    map; sp (at c = 1, so the step size n^-1 eta cancels the n in the
    kernel term) and ntp reduce to kernel GD with frozen k. The eta here
    is the base rate (the n^-c factor is absorbed by the limit)."""
    chi = g * x - y
    if param.kind is UvKind.MUP:
        g_new = g * (1.0 + eta * eta * chi * chi * x * x) - eta * chi * k * x
        k_new = k + eta * chi * x * (eta * chi * x * k - 4.0 * g)
        return g_new, k_new
    return g - eta * chi * k * x, k


def uv_limit_k0(param: UvParam, d: int = 1) -> float:
    """Large-n limit of the initial curvature statistic k = lambda / x^2
    for scalar inputs: both weight Gram terms concentrate, giving 2 for
    ntp and mup and 1 for sp (whose output Gram term vanishes)."""
    if d != 1:
        raise ValueError("limit statistics implemented for d = 1 only")
    if param.kind is UvKind.SP:
        return 1.0
    return 2.0


def uv_max_stable_lr(
    param: UvParam,
    n: int,
    eta_grid,
    steps: int,
    chi_blowup: float = 10.0,
    seed: int = 0,
    x: float = 1.0,
    y: float = 1.0,
):
    """Largest grid learning rate whose closed-map trajectory stays finite
    with |chi_final| <= chi_blowup * |chi_0|. None if every rate fails.

    The (x, y) pair is fixed across the grid; the initial state is drawn
    once per rate from the same seed so the scan varies only eta.
    """
    best = None
    for eta in sorted(float(e) for e in eta_grid):
        rng = Rng(seed).split("uv_scan", param.kind.value, n)
        _, state = uv_init(rng, param, n, d=1, x=x, y=y, eta=eta)
        chi0 = abs(state.chi)
        for _ in range(steps):
            state = uv_step(state)
            if state.diverged:
                break
        if state.diverged or not np.isfinite(state.f):
            continue
        if abs(state.chi) <= chi_blowup * max(chi0, 1e-300):
            best = eta
    return best


def uv_limit_distance(
    param: UvParam,
    widths,
    steps: int,
    seeds: int,
    eta: float,
    seed: int = 0,
):
    """Mean |g_t - g_limit_t| between a finite-width trajectory and its
    wide-limit law, driven by the same fresh standard-normal (x, y) stream
    and started from the finite model's own g_0 (k starts at the limit
    value for the limit trajectory, at the sampled kernel for the finite
    one). Returns dict with 'widths', 'gaps' (len(widths) x (steps+1)),
    and 'final' (the t = steps column)."""
    widths = [int(n) for n in widths]
    gaps = np.zeros((len(widths), steps + 1))
    for s in range(seeds):
        data_rng = Rng(seed).split("uv_limit_data", s)
        xs = data_rng.split("x").normal(steps)
        ys = data_rng.split("y").normal(steps)
        for wi, n in enumerate(widths):
            init_rng = Rng(seed).split("uv_limit_init", s, n)
            weights, state0 = uv_init(init_rng, param, n, d=1, x=1.0, y=0.0, eta=eta)
            g = state0.f  # probe at x = 1 makes f the coefficient itself
            k = state0.lam
            g_lim = g
            k_lim = uv_limit_k0(param)
            gaps[wi, 0] += abs(g - g_lim)
            for t in range(steps):
                g, k = uv_gk_step(param, n, g, k, float(xs[t]), float(ys[t]), eta)
                g_lim, k_lim = uv_gk_limit_step(param, g_lim, k_lim, float(xs[t]),
                                                float(ys[t]), eta)
                gaps[wi, t + 1] += abs(g - g_lim)
    gaps /= seeds
    return {"widths": widths, "gaps": gaps, "final": gaps[:, -1].copy()}
