"""Losses, optimizers, and the training loop with divergence monitoring.

Loss gradients follow the classification conventions throughout:

    CrossEntropy  chi = softmax(f) - y     (one-hot y; log-sum-exp loss)
    MSE           chi = f - y              (loss 0.5 * ||f - y||^2 per sample)
    MSESoftmax    chi_j = sum_i (s_i - y_i) * s_i * (delta_ij - s_j),
                  s = softmax(f)           (loss 0.5 * ||s - y||^2 per sample)

`loss_and_chi` returns the gradient of the MEAN-over-batch loss w.r.t. the
logits (the 1/batch factor is inside chi), so `net.backward` is a pure chain
rule and one SGD step on the output layer is exactly
W <- W - eta * chi^T @ x^L. Per-sample gradient magnitudes reported in
metrics are batch_size * chi, which is batch-size independent.

Divergence in the loop means: non-finite loss or gradient anywhere, or
cross-entropy loss above CE_LOSS_CAP (safely above ln d_out for every
dataset here; the cap applies to CE only, since MSE legitimately passes
through large transients in the catapult regime and diverges to non-finite
values on its own). Once set the flag is sticky and the loop halts with the
weights of the failing step untouched.
"""

from __future__ import annotations

import csv
import enum
from dataclasses import dataclass, field

import numpy as np

from . import diagnostics as diag
from .linalg import rms_matrix_norm
from .net import NetworkState, backward, forward
from .params import Optimizer, ParamSpec, scaled_lr

CE_LOSS_CAP = 50.0


class Loss(enum.Enum):
    CROSS_ENTROPY = "ce"
    MSE = "mse"
    MSE_SOFTMAX = "mse_softmax"


def softmax(logits: np.ndarray) -> np.ndarray:
    """Row-wise softmax with max subtraction for stability."""
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def log_sum_exp(logits: np.ndarray) -> np.ndarray:
    """Row-wise log(sum(exp(f))) with max subtraction."""
    m = logits.max(axis=1)
    return m + np.log(np.exp(logits - m[:, None]).sum(axis=1))


def loss_and_chi(loss: Loss, logits: np.ndarray, targets: np.ndarray):
    """Mean loss and its gradient w.r.t. the logits.

    Non-finite logits yield (inf, zero chi) so the caller can flag
    divergence and halt instead of propagating NaNs.
    """
    logits = np.asarray(logits, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    if logits.shape != targets.shape:
        raise ValueError(f"logits {logits.shape} vs targets {targets.shape}")
    batch = logits.shape[0]
    if not np.isfinite(logits).all():
        return float("inf"), np.zeros_like(logits)
    # Finite but huge logits may still overflow to inf here; the training
    # loop treats a non-finite loss as divergence, so no warning is wanted.
    with np.errstate(over="ignore", invalid="ignore"):
        if loss is Loss.CROSS_ENTROPY:
            per_sample = log_sum_exp(logits) - np.sum(targets * logits, axis=1)
            chi = (softmax(logits) - targets) / batch
            return float(per_sample.mean()), chi
        if loss is Loss.MSE:
            resid = logits - targets
            per_sample = 0.5 * np.sum(resid * resid, axis=1)
            return float(per_sample.mean()), resid / batch
        if loss is Loss.MSE_SOFTMAX:
            s = softmax(logits)
            d = s - targets
            per_sample = 0.5 * np.sum(d * d, axis=1)
            # d_j s_j - s_j <d, s>: the softmax inner derivative contracted with d.
            chi = s * (d - np.sum(d * s, axis=1, keepdims=True))
            return float(per_sample.mean()), chi / batch
    raise ValueError(f"unknown loss {loss}")


def accuracy(logits: np.ndarray, targets: np.ndarray) -> float:
    """Fraction of samples whose argmax logit matches the argmax target.

    Ties broken toward the lowest index (numpy argmax first occurrence).
    """
    pred = np.argmax(logits, axis=1)
    true = np.argmax(targets, axis=1)
    return float(np.mean(pred == true))


@dataclass
class AdamConfig:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


@dataclass
class AdamState:
    """Bias-corrected first/second moments per weight matrix."""

    m: list
    v: list
    step: int
    config: AdamConfig

    @classmethod
    def init(cls, net: NetworkState, config: AdamConfig | None = None) -> "AdamState":
        return cls(
            m=[np.zeros_like(w) for w in net.weights],
            v=[np.zeros_like(w) for w in net.weights],
            step=0,
            config=config or AdamConfig(),
        )


def _grads_finite(grads) -> bool:
    return all(np.isfinite(g).all() for g in grads)


def sgd_step(net: NetworkState, grads, spec: ParamSpec, width: int) -> bool:
    """One SGD update with layerwise learning rates. Returns False (and
    leaves weights untouched) on non-finite gradients."""
    if not _grads_finite(grads):
        net.diverged = True
        return False
    for i, g in enumerate(grads):
        net.weights[i] -= scaled_lr(spec, i, width) * g
    return True


def adam_step(
    net: NetworkState, opt: AdamState, grads, spec: ParamSpec, width: int
) -> bool:
    """One Adam update with bias-corrected moments and layerwise rates."""
    if not _grads_finite(grads):
        net.diverged = True
        return False
    cfg = opt.config
    opt.step += 1
    b1c = 1.0 - cfg.beta1**opt.step
    b2c = 1.0 - cfg.beta2**opt.step
    for i, g in enumerate(grads):
        opt.m[i] = cfg.beta1 * opt.m[i] + (1.0 - cfg.beta1) * g
        opt.v[i] = cfg.beta2 * opt.v[i] + (1.0 - cfg.beta2) * (g * g)
        m_hat = opt.m[i] / b1c
        v_hat = opt.v[i] / b2c
        net.weights[i] -= scaled_lr(spec, i, width) * m_hat / (np.sqrt(v_hat) + cfg.eps)
    return True


@dataclass
class StepRow:
    """One logged training step (values measured before the update)."""

    step: int
    loss: float
    accuracy: float
    logit_rms: float
    chi_rms: float
    chi_inf: float
    grad_rms: tuple
    diverged: bool


@dataclass
class RunMetrics:
    """Time series plus probe diagnostics for one training run."""

    rows: list = field(default_factory=list)
    probes: list = field(default_factory=list)
    steps_run: int = 0
    diverged: bool = False
    diverged_step: int | None = None
    final_loss: float | None = None
    final_accuracy: float | None = None
    max_chi_inf: float = 0.0


def _mean_sample_rms(mat: np.ndarray) -> float:
    """Mean over rows of per-row RMS norms."""
    with np.errstate(over="ignore"):
        return float(np.mean(np.sqrt(np.mean(mat * mat, axis=1))))


def train(
    net: NetworkState,
    stream,
    loss: Loss,
    spec: ParamSpec,
    steps: int,
    probe_steps=(),
    probe_batch=None,
    eval_set=None,
    log_every: int = 1,
    diag_level: str = "full",
    adam: AdamConfig | None = None,
) -> RunMetrics:
    """Run `steps` optimizer updates with scheduled probe diagnostics.

    stream yields (inputs, targets) batches; exhaustion ends the run early.
    The probe batch defaults to the first training batch (fixed per run,
    reused at t=0 and every probe step so activation updates are measured
    on identical inputs). eval_set, when given as (inputs, targets), is
    scored once at the end for the run's final loss/accuracy.
    """
    probe_steps = set(int(s) for s in probe_steps)
    metrics = RunMetrics()
    opt_state = AdamState.init(net, adam) if spec.optimizer is Optimizer.ADAM else None

    stream = iter(stream)
    first_batch = None
    if probe_batch is None:
        try:
            first_batch = next(stream)
        except StopIteration:
            first_batch = None
        probe_batch = first_batch

    trace0 = forward(net, probe_batch[0]) if probe_batch is not None else None

    def take_probe(step: int) -> None:
        if trace0 is None:
            return
        px, py = probe_batch
        trace_t = forward(net, px)
        p_loss, p_chi = loss_and_chi(loss, trace_t.logits, py)
        p_grads = None
        p_acc = None
        p_chi_inf = None
        if np.isfinite(p_loss):
            p_grads = backward(net, trace_t, p_chi)
            p_acc = accuracy(trace_t.logits, py)
            p_chi_inf = float(np.max(np.abs(px.shape[0] * p_chi)))
        record = diag.compute_record(
            net,
            trace0,
            trace_t,
            step,
            level=diag_level,
            probe_loss=p_loss,
            probe_accuracy=p_acc,
            probe_chi_inf=p_chi_inf,
            grads=p_grads,
        )
        metrics.probes.append(record)

    take_probe(0)

    def batches():
        if first_batch is not None:
            yield first_batch
        yield from stream

    batch_iter = batches()
    for t in range(1, steps + 1):
        try:
            bx, by = next(batch_iter)
        except StopIteration:
            break
        trace = forward(net, bx)
        loss_val, chi = loss_and_chi(loss, trace.logits, by)
        ce_blown = loss is Loss.CROSS_ENTROPY and loss_val > CE_LOSS_CAP
        if trace.diverged or not np.isfinite(loss_val) or ce_blown:
            metrics.diverged = True
            metrics.diverged_step = t
            metrics.rows.append(
                StepRow(t, loss_val, float("nan"), float("nan"), float("nan"),
                        float("nan"), (), True)
            )
            break
        grads = backward(net, trace, chi)
        batch_size = bx.shape[0]
        chi_per_sample = batch_size * chi
        chi_inf = float(np.max(np.abs(chi_per_sample)))
        metrics.max_chi_inf = max(metrics.max_chi_inf, chi_inf)
        if t % log_every == 0 or t == steps or t in probe_steps:
            metrics.rows.append(
                StepRow(
                    step=t,
                    loss=loss_val,
                    accuracy=accuracy(trace.logits, by),
                    logit_rms=_mean_sample_rms(trace.logits),
                    chi_rms=_mean_sample_rms(chi_per_sample),
                    chi_inf=chi_inf,
                    grad_rms=tuple(rms_matrix_norm(g) for g in grads),
                    diverged=False,
                )
            )
        if spec.optimizer is Optimizer.ADAM:
            applied = adam_step(net, opt_state, grads, spec, net.width)
        else:
            applied = sgd_step(net, grads, spec, net.width)
        if not applied:
            metrics.diverged = True
            metrics.diverged_step = t
            break
        metrics.steps_run = t
        if t in probe_steps:
            take_probe(t)

    if eval_set is not None and not metrics.diverged:
        ex, ey = eval_set
        trace = forward(net, ex)
        if trace.diverged:
            metrics.diverged = True
            metrics.diverged_step = metrics.diverged_step or metrics.steps_run
        else:
            metrics.final_loss, _ = loss_and_chi(loss, trace.logits, ey)
            metrics.final_accuracy = accuracy(trace.logits, ey)
    elif metrics.rows and not metrics.diverged:
        last = metrics.rows[-1]
        metrics.final_loss = last.loss
        metrics.final_accuracy = last.accuracy
    return metrics


def metrics_to_csv(metrics: RunMetrics, path, depth: int) -> None:
    """One row per logged step; missing values rendered as empty cells."""
    cols = ["step", "loss", "accuracy", "logit_rms", "chi_rms", "chi_inf"]
    cols += [f"grad_rms_l{i + 1}" for i in range(depth)]
    cols += ["diverged"]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(cols)
        for row in metrics.rows:
            grad = list(row.grad_rms) + [""] * (depth - len(row.grad_rms))
            vals = [row.step, _fmt(row.loss), _fmt(row.accuracy),
                    _fmt(row.logit_rms), _fmt(row.chi_rms), _fmt(row.chi_inf)]
            vals += [_fmt(g) for g in grad]
            vals += [int(row.diverged)]
            writer.writerow(vals)


def _fmt(value) -> str:
    if value is None or value == "":
        return ""
    if isinstance(value, float) and not np.isfinite(value):
        return repr(value)  # 'inf' / 'nan' round-trip via float()
    return repr(float(value))


def run_summary(metrics: RunMetrics) -> dict:
    """JSON-ready summary of one run."""
    return {
        "steps_run": metrics.steps_run,
        "diverged": metrics.diverged,
        "diverged_step": metrics.diverged_step,
        "final_loss": metrics.final_loss,
        "final_accuracy": metrics.final_accuracy,
        "max_chi_inf": metrics.max_chi_inf,
        "probe_steps": [p.step for p in metrics.probes],
    }
