"""Coordinate-check diagnostics: update decompositions, alignment, rank.

The central identity: for layer l with frozen initial weights W_0 and
current weights W_t = W_0 + dW, the pre-activation change on a fixed probe
input decomposes exactly as

    h_t - h_0 = dW @ x_t + W_0 @ (x_t - x_0)

(effective term: the layer's own weight update acting on the current
incoming activation; propagating term: upstream changes carried through
the frozen initial weights). The identity is algebraic, so its residual is
a float-roundoff check, not a modeling approximation. For the first layer
the incoming activation is the fixed probe input, so the propagating term
is exactly zero.

Alignment ratios measure how strongly a matrix amplifies a given batch of
vectors relative to its average (RMS) or worst-case (operator) action:

    alignment_rms(A, xs) = mean_i ||A x_i||_rms / (||A||_rms ||x_i||_rms)
    alignment_op(A, xs)  = mean_i ||A x_i||_rms / (||A||_op  ||x_i||_rms)

alignment_op lies in (0, 1]; it equals 1 iff every sample sits in the top
singular direction (e.g. any rank-1 A = g x^T probed with x itself). The
two ratios differ only by which matrix norm divides the same per-sample
mean, so alignment_rms == alignment_op * ||A||_op / ||A||_rms holds to
roundoff. For a rank-1 aligned pair, alignment_rms equals fan_in exactly.

Missing values (zero matrix, zero samples, skipped cosines) are reported
as None, never coerced to 0 or NaN.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .linalg import rms_matrix_norm, rms_op_norm
from .net import ForwardTrace, NetworkState


@dataclass(frozen=True)
class ProbeSnapshot:
    """State captured at a probe step: the live network plus forward traces
    of the fixed probe batch at time 0 and time t. Only valid while
    net.weights still hold the time-t values; consume eagerly."""

    net: NetworkState
    trace0: ForwardTrace
    trace_t: ForwardTrace
    step: int


def rcc(snapshot: ProbeSnapshot, layer: int):
    """Per-sample decomposition terms for one layer (1-based).

    Returns (effective, propagating, delta_h), each of shape
    (batch, fan_out). effective + propagating == delta_h up to roundoff;
    layer 1's propagating term is exactly zero.
    """
    depth = snapshot.net.depth
    if not 1 <= layer <= depth:
        raise ValueError(f"layer {layer} out of range 1..{depth}")
    i = layer - 1
    dw = snapshot.net.delta_w(i)
    x_prev_t = snapshot.trace_t.xs[i]
    x_prev_0 = snapshot.trace0.xs[i]
    effective = x_prev_t @ dw.T
    if i == 0:
        propagating = np.zeros_like(effective)
    else:
        propagating = (x_prev_t - x_prev_0) @ snapshot.net.weights_0[i].T
    delta_h = snapshot.trace_t.hs[i] - snapshot.trace0.hs[i]
    return effective, propagating, delta_h


def _row_norms(mat: np.ndarray) -> np.ndarray:
    return np.sqrt(np.sum(mat * mat, axis=1))


def _mean_sample_rms(mat: np.ndarray) -> float:
    return float(np.mean(np.sqrt(np.mean(mat * mat, axis=1))))


def _alignment_base(a: np.ndarray, xs: np.ndarray) -> float | None:
    """mean_i ||A x_i||_rms / ||x_i||_rms over samples with x_i != 0."""
    a = np.asarray(a, dtype=np.float64)
    xs = np.atleast_2d(np.asarray(xs, dtype=np.float64))
    if xs.shape[1] != a.shape[1]:
        raise ValueError(f"samples dim {xs.shape[1]} vs fan_in {a.shape[1]}")
    x_rms = _row_norms(xs) / np.sqrt(xs.shape[1])
    keep = x_rms > 0.0
    if not keep.any():
        return None
    out = xs[keep] @ a.T
    out_rms = _row_norms(out) / np.sqrt(a.shape[0])
    return float(np.mean(out_rms / x_rms[keep]))


def alignment_rms(a: np.ndarray, xs: np.ndarray) -> float | None:
    """Batch-mean alignment against the RMS matrix norm. None if A == 0
    or no sample has nonzero norm."""
    denom = rms_matrix_norm(np.asarray(a, dtype=np.float64))
    if denom == 0.0:
        return None
    base = _alignment_base(a, xs)
    return None if base is None else base / denom


def alignment_op(a: np.ndarray, xs: np.ndarray) -> float | None:
    """Batch-mean alignment against the RMS operator norm; in (0, 1] for
    nonzero inputs. None if A == 0 or no sample has nonzero norm."""
    a = np.asarray(a, dtype=np.float64)
    if not a.any():
        return None
    denom = rms_op_norm(a)
    if denom == 0.0:
        return None
    base = _alignment_base(a, xs)
    return None if base is None else base / denom


def effective_rank(dw: np.ndarray) -> float | None:
    """Frobenius over spectral norm: 1 for rank-1, grows toward
    sqrt(min dim) for isotropic matrices. None for the zero matrix."""
    dw = np.asarray(dw, dtype=np.float64)
    frob = float(np.linalg.norm(dw))
    if frob == 0.0:
        return None
    from .linalg import spectral_norm

    return frob / spectral_norm(dw).value


def activation_sparsity(x: np.ndarray) -> float:
    """Fraction of exactly-zero entries (ReLU kills negatives exactly)."""
    x = np.asarray(x)
    return float(np.mean(x == 0.0))


def activation_cosine(x0: np.ndarray, xt: np.ndarray):
    """Mean per-sample cosine between activations at time 0 and time t.

    Samples where either vector is zero are skipped. Returns
    (mean_or_None, skipped_count).
    """
    x0 = np.atleast_2d(np.asarray(x0, dtype=np.float64))
    xt = np.atleast_2d(np.asarray(xt, dtype=np.float64))
    if x0.shape != xt.shape:
        raise ValueError(f"shape mismatch {x0.shape} vs {xt.shape}")
    n0 = _row_norms(x0)
    nt = _row_norms(xt)
    keep = (n0 > 0.0) & (nt > 0.0)
    skipped = int(np.sum(~keep))
    if not keep.any():
        return None, skipped
    cos = np.sum(x0[keep] * xt[keep], axis=1) / (n0[keep] * nt[keep])
    return float(np.mean(cos)), skipped


@dataclass
class LayerDiagnostics:
    """Probe measurements for one layer; None marks undefined quantities."""

    layer: int
    eff_rms: float
    prop_rms: float
    delta_h_rms: float
    rcc_rel_err: float
    align_rms_dw: float | None = None
    align_op_dw: float | None = None
    align_rms_w0: float | None = None
    align_op_w0: float | None = None
    eff_rank: float | None = None
    sparsity: float | None = None
    cosine: float | None = None
    cosine_skipped: int | None = None
    grad_rms: float | None = None


@dataclass
class DiagnosticRecord:
    """All layer diagnostics plus logit-level summaries at one probe step."""

    step: int
    layers: tuple
    logit_rms: float
    delta_f_rms: float
    probe_loss: float | None = None
    probe_accuracy: float | None = None
    probe_chi_inf: float | None = None
    level: str = "full"


def compute_record(
    net: NetworkState,
    trace0: ForwardTrace,
    trace_t: ForwardTrace,
    step: int,
    level: str = "full",
    probe_loss: float | None = None,
    probe_accuracy: float | None = None,
    probe_chi_inf: float | None = None,
    grads=None,
) -> DiagnosticRecord:
    """Evaluate every diagnostic on a probe snapshot.

    level "rcc" computes only the decomposition magnitudes (no spectral
    estimates, which need power iterations per layer); "full" adds
    alignment ratios, effective rank, sparsity, and cosines.
    """
    if level not in ("rcc", "full"):
        raise ValueError(f"unknown diagnostic level {level!r}")
    snapshot = ProbeSnapshot(net, trace0, trace_t, step)
    layers = []
    for i in range(net.depth):
        eff, prop, dh = rcc(snapshot, i + 1)
        resid = float(np.max(_row_norms(eff + prop - dh)))
        denom = float(np.max(_row_norms(dh)))
        if denom > 0.0:
            rel = resid / denom
        else:
            rel = 0.0 if resid == 0.0 else float("inf")
        entry = LayerDiagnostics(
            layer=i + 1,
            eff_rms=_mean_sample_rms(eff),
            prop_rms=_mean_sample_rms(prop),
            delta_h_rms=_mean_sample_rms(dh),
            rcc_rel_err=rel,
        )
        if grads is not None:
            entry.grad_rms = rms_matrix_norm(grads[i])
        if level == "full":
            dw = net.delta_w(i)
            x_prev_t = trace_t.xs[i]
            entry.align_rms_dw = alignment_rms(dw, x_prev_t)
            entry.align_op_dw = alignment_op(dw, x_prev_t)
            if i > 0:
                dx_prev = x_prev_t - trace0.xs[i]
                if dx_prev.any():
                    entry.align_rms_w0 = alignment_rms(net.weights_0[i], dx_prev)
                    entry.align_op_w0 = alignment_op(net.weights_0[i], dx_prev)
            entry.eff_rank = effective_rank(dw)
            if i < net.depth - 1:
                entry.sparsity = activation_sparsity(trace_t.xs[i + 1])
                cos, skipped = activation_cosine(trace0.xs[i + 1], trace_t.xs[i + 1])
                entry.cosine = cos
                entry.cosine_skipped = skipped
        layers.append(entry)
    delta_f = trace_t.logits - trace0.logits
    return DiagnosticRecord(
        step=step,
        layers=tuple(layers),
        logit_rms=_mean_sample_rms(trace_t.logits),
        delta_f_rms=_mean_sample_rms(delta_f),
        probe_loss=probe_loss,
        probe_accuracy=probe_accuracy,
        probe_chi_inf=probe_chi_inf,
        level=level,
    )


_LAYER_COLS = (
    "eff_rms",
    "prop_rms",
    "delta_h_rms",
    "rcc_rel_err",
    "align_rms_dw",
    "align_op_dw",
    "align_rms_w0",
    "align_op_w0",
    "eff_rank",
    "sparsity",
    "cosine",
    "cosine_skipped",
    "grad_rms",
)


def diagnostics_to_csv(records, path) -> None:
    """One row per (probe step, layer); None becomes an empty cell."""
    import csv

    cols = ["step", "layer"] + list(_LAYER_COLS)
    cols += ["logit_rms", "delta_f_rms", "probe_loss", "probe_accuracy",
             "probe_chi_inf", "level"]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(cols)
        for rec in records:
            for entry in rec.layers:
                vals = [rec.step, entry.layer]
                vals += [_cell(getattr(entry, c)) for c in _LAYER_COLS]
                vals += [_cell(rec.logit_rms), _cell(rec.delta_f_rms),
                         _cell(rec.probe_loss), _cell(rec.probe_accuracy),
                         _cell(rec.probe_chi_inf), rec.level]
                writer.writerow(vals)


def _cell(value):
    if value is None:
        return ""
    if isinstance(value, bool):
        return int(value)
    if isinstance(value, (int, np.integer)):
        return int(value)
    return repr(float(value))
