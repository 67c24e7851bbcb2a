"""Width x learning-rate sweep orchestration and exponent extraction.

A sweep trains one network per (width, learning rate, seed) cell, records
a compact summary per cell, and reduces the grid to per-width scalars:
the smallest unstable learning rate (divergence or accuracy-floor
criterion) and the best-performing learning rate. Fitting those scalars
against width on log-log axes yields the transfer exponents; a shared
power-law fitter also serves the coordinate-check studies, which track
per-layer update magnitudes and alignment ratios across widths.

Learning-rate grids are in BASE units: the parameterization applies its
own width scaling per layer, so a preset with a global exponent reports
raw-rate exponents while mup-style presets should show flat optima.

Cells are independently seeded and persisted as they finish (one JSON
per cell under <out_dir>/cells), so an interrupted sweep resumes by
skipping completed cells. Every cell of a sweep shares the same dataset
and batch order; the seed only varies the weight initialization.
"""

from __future__ import annotations

import json
import multiprocessing
import os
from dataclasses import dataclass, field, replace

import numpy as np

from . import data as data_mod
from .linalg import power_law_fit
from .net import init_network, make_activation
from .params import Optimizer, PresetName, resolve_preset
from .rng import Rng
from .training import Loss, run_summary, train

DEFAULT_MIN_FIT_WIDTH = 256


@dataclass(frozen=True)
class SweepPlan:
    """Shared settings for every run in a study. lrs are base rates."""

    dataset: dict
    depth: int = 3
    d_out: int | None = None
    activation: str = "relu"
    activation_sigma: float = 1.0
    activation_gain: float = 2.0
    preset: str = "sp"
    optimizer: str = "sgd"
    alpha: float | None = None
    n_base: int = 256
    loss: str = "ce"
    steps: int = 100
    batch_size: int = 64
    widths: tuple = ()
    lrs: tuple = ()
    seeds: tuple = (0,)
    eval_on: str = "train"
    probe_steps: tuple = ()
    diag_level: str = "rcc"


def log_grid(lo: float, hi: float, points_per_decade: int = 2):
    """Geometric grid from lo to hi inclusive with the given density."""
    if not 0 < lo <= hi:
        raise ValueError(f"need 0 < lo <= hi, got {lo}, {hi}")
    if points_per_decade < 1:
        raise ValueError("points_per_decade must be >= 1")
    decades = np.log10(hi) - np.log10(lo)
    count = int(round(decades * points_per_decade)) + 1
    exps = np.log10(lo) + np.arange(count) / points_per_decade
    return tuple(float(10.0**e) for e in exps)


_DATASET_CACHE: dict = {}


def _datasets_for(cfg: dict):
    """(train, test_or_None) for a dataset config, cached per process."""
    key = json.dumps(cfg, sort_keys=True)
    if key not in _DATASET_CACHE:
        _DATASET_CACHE[key] = _build_datasets(cfg)
    return _DATASET_CACHE[key]


def _build_datasets(cfg: dict):
    kind = cfg.get("kind")
    if kind == "multi_index":
        return data_mod.gen_multi_index(
            seed=cfg.get("seed", 0),
            n_train=cfg.get("n_train", 1000),
            n_test=cfg.get("n_test", 10000),
            d_in=cfg.get("d_in", 100),
        )
    if kind == "file":
        train_ds = data_mod.load_dataset(cfg["train"])
        test_ds = data_mod.load_dataset(cfg["test"]) if cfg.get("test") else None
        return train_ds, test_ds
    if kind == "idx":
        train_ds = data_mod.idx_image_dataset(cfg["train_images"], cfg["train_labels"])
        test_ds = None
        if cfg.get("test_images"):
            test_ds = data_mod.idx_image_dataset(cfg["test_images"], cfg["test_labels"])
        return train_ds, test_ds
    if kind == "cifar10":
        train_ds = data_mod.load_cifar10_bin(cfg["train_paths"])
        test_ds = None
        if cfg.get("test_paths"):
            test_ds = data_mod.load_cifar10_bin(cfg["test_paths"])
        return train_ds, test_ds
    raise ValueError(f"unknown dataset kind {kind!r}")


def make_spec(plan: SweepPlan, base_lr: float):
    return resolve_preset(
        PresetName(plan.preset),
        depth=plan.depth,
        activation_gain=plan.activation_gain,
        optimizer=Optimizer(plan.optimizer),
        alpha=plan.alpha,
        base_lr=base_lr,
        n_base=plan.n_base,
    )


def run_single(plan: SweepPlan, width: int, lr: float, seed: int,
               want_metrics: bool = False, log_every: int | None = None):
    """Train one cell; returns (summary dict, RunMetrics or None).
    Sweeps keep the default sparse logging (final step only); pass
    log_every for dense single-run time series."""
    train_ds, test_ds = _datasets_for(plan.dataset)
    d_out = plan.d_out if plan.d_out is not None else train_ds.d_out
    spec = make_spec(plan, lr)
    activation = make_activation(plan.activation, plan.activation_sigma)
    net = init_network(
        Rng(seed).split("net", width), spec, width,
        d_in=train_ds.d_in, d_out=d_out, activation=activation,
    )
    stream = data_mod.batch_stream(train_ds, plan.batch_size, limit=plan.steps)
    if plan.eval_on == "train":
        eval_set = (train_ds.inputs, train_ds.targets)
    elif plan.eval_on == "test":
        if test_ds is None:
            raise ValueError("eval_on='test' but the dataset has no test split")
        eval_set = (test_ds.inputs, test_ds.targets)
    elif plan.eval_on == "none":
        eval_set = None
    else:
        raise ValueError(f"unknown eval_on {plan.eval_on!r}")
    metrics = train(
        net,
        stream,
        Loss(plan.loss),
        spec,
        steps=plan.steps,
        probe_steps=plan.probe_steps,
        eval_set=eval_set,
        log_every=log_every if log_every is not None else max(plan.steps, 1),
        diag_level=plan.diag_level,
    )
    summary = run_summary(metrics)
    summary.update({"width": width, "lr": lr, "seed": seed})
    return summary, (metrics if want_metrics else None)


def _cell_worker(args):
    plan, width, lr, lr_index, seed = args
    summary, _ = run_single(plan, width, lr, seed)
    return width, lr_index, seed, summary


@dataclass
class SweepGrid:
    """Cell summaries indexed by (width, lr_index, seed)."""

    widths: tuple
    lrs: tuple
    seeds: tuple
    cells: dict = field(default_factory=dict)

    def cell(self, width: int, lr_index: int, seed: int) -> dict:
        return self.cells[(width, lr_index, seed)]

    def seed_cells(self, width: int, lr_index: int):
        return [self.cells[(width, lr_index, s)] for s in self.seeds]

    def to_json(self) -> dict:
        return {
            "widths": list(self.widths),
            "lrs": list(self.lrs),
            "seeds": list(self.seeds),
            "cells": [
                {"width": w, "lr_index": li, "seed": s, "summary": summ}
                for (w, li, s), summ in sorted(self.cells.items())
            ],
        }

    @classmethod
    def from_json(cls, blob: dict) -> "SweepGrid":
        grid = cls(
            widths=tuple(blob["widths"]),
            lrs=tuple(blob["lrs"]),
            seeds=tuple(blob["seeds"]),
        )
        for cell in blob["cells"]:
            grid.cells[(cell["width"], cell["lr_index"], cell["seed"])] = cell["summary"]
        return grid


def _cell_path(out_dir: str, width: int, lr_index: int, seed: int) -> str:
    return os.path.join(out_dir, "cells", f"cell_w{width}_lr{lr_index}_s{seed}.json")


def run_sweep(plan: SweepPlan, out_dir: str | None = None, jobs: int = 1,
              seed_offset: int = 0) -> SweepGrid:
    """Train every (width, lr, seed) cell, skipping cells already saved
    under out_dir from a previous partial run."""
    if not plan.widths or not plan.lrs:
        raise ValueError("sweep needs at least one width and one learning rate")
    seeds = tuple(int(s) + seed_offset for s in plan.seeds)
    grid = SweepGrid(widths=tuple(plan.widths), lrs=tuple(plan.lrs), seeds=seeds)
    if out_dir:
        os.makedirs(os.path.join(out_dir, "cells"), exist_ok=True)
    pending = []
    for width in grid.widths:
        for li, lr in enumerate(grid.lrs):
            for seed in seeds:
                if out_dir:
                    path = _cell_path(out_dir, width, li, seed)
                    if os.path.exists(path):
                        with open(path) as fh:
                            grid.cells[(width, li, seed)] = json.load(fh)
                        continue
                pending.append((plan, width, lr, li, seed))

    def record(width, li, seed, summary):
        grid.cells[(width, li, seed)] = summary
        if out_dir:
            path = _cell_path(out_dir, width, li, seed)
            with open(path, "w") as fh:
                json.dump(summary, fh, indent=1)

    if jobs > 1 and len(pending) > 1:
        with multiprocessing.Pool(jobs) as pool:
            for width, li, seed, summary in pool.imap_unordered(_cell_worker, pending):
                record(width, li, seed, summary)
    else:
        for args in pending:
            width, li, seed, summary = _cell_worker(args)
            record(width, li, seed, summary)
    if out_dir:
        with open(os.path.join(out_dir, "sweep.json"), "w") as fh:
            json.dump(grid.to_json(), fh, indent=1)
    return grid


def _parse_criterion(criterion):
    """Normalize to ('nan', None) or ('accuracy', floor)."""
    if isinstance(criterion, str):
        if criterion == "nan":
            return "nan", None
        raise ValueError(f"unknown instability criterion {criterion!r}")
    if isinstance(criterion, dict):
        kind = criterion.get("kind")
        if kind == "nan":
            return "nan", None
        if kind == "accuracy":
            return "accuracy", float(criterion["floor"])
        raise ValueError(f"unknown instability criterion {criterion!r}")
    kind, floor = criterion
    if kind == "accuracy":
        return "accuracy", float(floor)
    if kind == "nan":
        return "nan", None
    raise ValueError(f"unknown instability criterion {criterion!r}")


def _lr_unstable(grid: SweepGrid, width: int, lr_index: int, criterion) -> bool:
    kind, floor = _parse_criterion(criterion)
    cells = grid.seed_cells(width, lr_index)
    if kind == "nan":
        return any(c["diverged"] for c in cells)
    # Accuracy floor: a diverged seed counts as zero accuracy, so any
    # divergence pulls the mean toward unstable rather than hiding it.
    accs = [0.0 if c["diverged"] or c["final_accuracy"] is None
            else c["final_accuracy"] for c in cells]
    return float(np.mean(accs)) < floor


def min_unstable_lr(grid: SweepGrid, width: int, criterion) -> float | None:
    """Smallest grid rate meeting the instability criterion at this
    width; None when every rate is stable."""
    for li in range(len(grid.lrs)):
        if _lr_unstable(grid, width, li, criterion):
            return grid.lrs[li]
    return None


def optimal_lr(grid: SweepGrid, width: int, objective: str = "accuracy") -> float | None:
    """Best-scoring rate at this width: highest mean final accuracy or
    lowest mean final loss over seeds. Rates with any diverged seed are
    skipped (unless every rate has one, then partially finished rates
    compete on their surviving seeds). Ties go to the smaller rate."""
    if objective not in ("accuracy", "loss"):
        raise ValueError(f"unknown objective {objective!r}")
    candidates = []
    for li in range(len(grid.lrs)):
        cells = grid.seed_cells(width, li)
        alive = [c for c in cells if not c["diverged"]]
        candidates.append((li, cells, alive))
    clean = [(li, alive) for li, cells, alive in candidates
             if alive and len(alive) == len(cells)]
    if not clean:
        clean = [(li, alive) for li, cells, alive in candidates if alive]
    if not clean:
        return None
    best_li, best_score = None, None
    for li, alive in clean:
        key = "final_accuracy" if objective == "accuracy" else "final_loss"
        vals = [c[key] for c in alive if c[key] is not None]
        if not vals:
            continue
        score = float(np.mean(vals))
        if objective == "loss":
            score = -score
        if best_score is None or score > best_score:
            best_li, best_score = li, score
    return None if best_li is None else grid.lrs[best_li]


def lr_series(grid: SweepGrid, criterion=None, objective=None):
    """Per-width scalar series [(width, lr)] from a grid, using either an
    instability criterion or a performance objective (exactly one)."""
    if (criterion is None) == (objective is None):
        raise ValueError("pass exactly one of criterion/objective")
    out = []
    for width in grid.widths:
        if criterion is not None:
            lr = min_unstable_lr(grid, width, criterion)
        else:
            lr = optimal_lr(grid, width, objective)
        if lr is not None:
            out.append((width, lr))
    return out


@dataclass
class ExponentReport:
    """Named power-law fits over width, plus the raw per-width series."""

    fits: dict
    series: dict

    def to_json(self) -> dict:
        return {
            "fits": {
                key: {
                    "exponent": fit.exponent,
                    "intercept": fit.intercept,
                    "prefactor": fit.prefactor,
                    "r_squared": fit.r_squared,
                    "n_points": fit.n_points,
                }
                for key, fit in self.fits.items()
            },
            "series": {key: [[n, v] for n, v in pts]
                       for key, pts in self.series.items()},
        }


def exponent_report(series: dict, min_width: int = DEFAULT_MIN_FIT_WIDTH) -> ExponentReport:
    """Fit value ~ width^e per named series, using widths >= min_width
    and skipping series with missing values or fewer than two points."""
    fits = {}
    kept = {}
    for key, pts in series.items():
        pts = [(int(n), v) for n, v in pts if v is not None]
        kept[key] = pts
        fit_pts = [(n, v) for n, v in pts if n >= min_width and v > 0]
        if len(fit_pts) >= 2 and len({n for n, _ in fit_pts}) >= 2:
            fits[key] = power_law_fit(fit_pts)
    return ExponentReport(fits=fits, series=kept)


_COORD_METRICS = (
    "eff_rms", "prop_rms", "delta_h_rms", "align_rms_dw", "align_op_dw",
    "align_rms_w0", "align_op_w0", "eff_rank", "sparsity", "cosine", "grad_rms",
)


@dataclass
class CoordcheckStudy:
    """Seed-averaged probe diagnostics per width with width-scaling fits."""

    widths: tuple
    probe_steps: tuple
    depth: int
    level: str
    means: dict
    globals_: dict
    report: ExponentReport


def coordcheck_study(plan: SweepPlan, lr: float,
                     fit_step: int | None = None,
                     min_fit_width: int = DEFAULT_MIN_FIT_WIDTH) -> CoordcheckStudy:
    """Train at every width/seed with probes on, average diagnostics over
    seeds, and fit per-layer width exponents at fit_step (default: the
    last probe step)."""
    if not plan.probe_steps:
        raise ValueError("coordcheck needs probe_steps")
    probe_steps = (0,) + tuple(int(s) for s in plan.probe_steps)
    fit_step = plan.probe_steps[-1] if fit_step is None else fit_step
    sums: dict = {}
    counts: dict = {}
    gsums: dict = {}
    gcounts: dict = {}
    depth = plan.depth
    for width in plan.widths:
        for seed in plan.seeds:
            _, metrics = run_single(plan, width, lr, seed, want_metrics=True)
            for rec in metrics.probes:
                gkey = (width, rec.step)
                for name, val in (("logit_rms", rec.logit_rms),
                                  ("delta_f_rms", rec.delta_f_rms),
                                  ("probe_loss", rec.probe_loss),
                                  ("probe_accuracy", rec.probe_accuracy)):
                    if val is not None:
                        gsums[(gkey, name)] = gsums.get((gkey, name), 0.0) + val
                        gcounts[(gkey, name)] = gcounts.get((gkey, name), 0) + 1
                for entry in rec.layers:
                    key = (width, rec.step, entry.layer)
                    for metric in _COORD_METRICS:
                        val = getattr(entry, metric)
                        if val is not None:
                            sums[(key, metric)] = sums.get((key, metric), 0.0) + val
                            counts[(key, metric)] = counts.get((key, metric), 0) + 1
    means: dict = {}
    for width in plan.widths:
        for step in probe_steps:
            for layer in range(1, depth + 1):
                key = (width, step, layer)
                means[key] = {
                    metric: (sums[(key, metric)] / counts[(key, metric)]
                             if (key, metric) in sums else None)
                    for metric in _COORD_METRICS
                }
    globals_: dict = {}
    for width in plan.widths:
        for step in probe_steps:
            gkey = (width, step)
            globals_[gkey] = {
                name: (gsums[(gkey, name)] / gcounts[(gkey, name)]
                       if (gkey, name) in gsums else None)
                for name in ("logit_rms", "delta_f_rms", "probe_loss",
                             "probe_accuracy")
            }
    series: dict = {}
    for layer in range(1, depth + 1):
        for metric in _COORD_METRICS:
            pts = [(w, means[(w, fit_step, layer)][metric]) for w in plan.widths]
            if any(v is not None for _, v in pts):
                series[f"{metric}_l{layer}"] = pts
    for name in ("logit_rms", "delta_f_rms"):
        pts = [(w, globals_[(w, fit_step)][name]) for w in plan.widths]
        if any(v is not None for _, v in pts):
            series[name] = pts
    report = exponent_report(series, min_width=min_fit_width)
    return CoordcheckStudy(
        widths=tuple(plan.widths),
        probe_steps=probe_steps,
        depth=depth,
        level=plan.diag_level,
        means=means,
        globals_=globals_,
        report=report,
    )


def coordcheck_to_json(study: CoordcheckStudy) -> dict:
    rows = []
    for (width, step, layer), metrics in sorted(study.means.items()):
        row = {"width": width, "step": step, "layer": layer}
        row.update(metrics)
        rows.append(row)
    grows = []
    for (width, step), vals in sorted(study.globals_.items()):
        row = {"width": width, "step": step}
        row.update(vals)
        grows.append(row)
    return {
        "widths": list(study.widths),
        "probe_steps": list(study.probe_steps),
        "depth": study.depth,
        "level": study.level,
        "layers": rows,
        "globals": grows,
        "report": study.report.to_json(),
    }


def align_study(plan: SweepPlan, lr: float):
    """One-step, batch-size-1 alignment probe: after a single update the
    output layer's weight change is exactly an outer product with the
    probe activation, so its operator alignment is 1 and its RMS
    alignment equals the layer fan-in. Returns one row per
    (width, seed, layer)."""
    plan = replace(plan, batch_size=1, steps=1, probe_steps=(1,),
                   diag_level="full", eval_on="none")
    rows = []
    for width in plan.widths:
        for seed in plan.seeds:
            _, metrics = run_single(plan, width, lr, seed, want_metrics=True)
            final = [r for r in metrics.probes if r.step == 1]
            if not final:
                continue
            for entry in final[0].layers:
                rows.append({
                    "width": width,
                    "seed": seed,
                    "layer": entry.layer,
                    "align_rms_dw": entry.align_rms_dw,
                    "align_op_dw": entry.align_op_dw,
                    "eff_rank": entry.eff_rank,
                })
    return rows
