"""Command-line front end: JSON-configured studies with file outputs.

Every subcommand reads a strict JSON config (unknown keys are rejected so
typos fail loudly), writes machine-readable outputs under --out, and
echoes the resolved config alongside them. Logs go to stderr; outputs are
files, never stdout. Exit codes: 0 success, 1 I/O failure, 2 bad config.

Subcommands:
    train       one run: metrics.csv, diagnostics.csv, summary.json
    sweep       width x lr grid: sweep.json, report.json
    coordcheck  probe diagnostics across widths: coordcheck.json
    align       one-step alignment probe: align.json
    uvmodel     two-layer linear model studies: uv_<mode>.json
    gendata     generate + persist the synthetic dataset
    report      refit exponents from saved sweep/series outputs
"""

from __future__ import annotations

import argparse
import json
import os
import sys

from . import __version__
from .data import gen_multi_index, save_dataset
from .diagnostics import diagnostics_to_csv
from .rng import Rng
from .sweeps import (
    SweepGrid,
    SweepPlan,
    align_study,
    coordcheck_study,
    coordcheck_to_json,
    exponent_report,
    log_grid,
    lr_series,
    run_single,
    run_sweep,
)
from .training import metrics_to_csv, run_summary
from .uvmodel import (
    UvParam,
    uv_explicit_train,
    uv_init,
    uv_limit_distance,
    uv_max_stable_lr,
    uv_step,
)

OUT_ENV = "WIDTHLAB_OUT"


class ConfigError(ValueError):
    """Invalid or inconsistent configuration."""


def _check_keys(obj: dict, allowed, where: str) -> None:
    if not isinstance(obj, dict):
        raise ConfigError(f"{where} must be a JSON object")
    unknown = sorted(set(obj) - set(allowed))
    if unknown:
        raise ConfigError(f"{where}: unknown key(s) {', '.join(unknown)}")


def _require(obj: dict, key: str, where: str):
    if key not in obj:
        raise ConfigError(f"{where}: missing required key {key!r}")
    return obj[key]


_DATASET_KEYS = {
    "multi_index": {"kind", "seed", "n_train", "n_test", "d_in"},
    "file": {"kind", "train", "test"},
    "idx": {"kind", "train_images", "train_labels", "test_images", "test_labels"},
    "cifar10": {"kind", "train_paths", "test_paths"},
}


def _parse_dataset(cfg: dict) -> dict:
    kind = _require(cfg, "kind", "dataset")
    if kind not in _DATASET_KEYS:
        raise ConfigError(f"dataset: unknown kind {kind!r}")
    _check_keys(cfg, _DATASET_KEYS[kind], "dataset")
    return dict(cfg)


def _parse_plan(cfg: dict, command: str) -> SweepPlan:
    """Assemble the shared run settings from dataset/arch/preset/training
    sections; width/lr/seed specifics stay with each subcommand."""
    _check_keys(cfg.get("arch", {}), {"depth", "activation", "sigma", "gain", "d_out"},
                "arch")
    _check_keys(cfg.get("preset", {}), {"name", "optimizer", "alpha", "n_base"},
                "preset")
    _check_keys(cfg.get("training", {}),
                {"loss", "steps", "batch_size", "log_every", "eval_on"}, "training")
    dataset = _parse_dataset(_require(cfg, "dataset", command))
    arch = cfg.get("arch", {})
    preset = cfg.get("preset", {})
    training = cfg.get("training", {})
    return SweepPlan(
        dataset=dataset,
        depth=int(arch.get("depth", 3)),
        d_out=arch.get("d_out"),
        activation=arch.get("activation", "relu"),
        activation_sigma=float(arch.get("sigma", 1.0)),
        activation_gain=float(arch.get("gain", 2.0)),
        preset=preset.get("name", "sp"),
        optimizer=preset.get("optimizer", "sgd"),
        alpha=preset.get("alpha"),
        n_base=int(preset.get("n_base", 256)),
        loss=training.get("loss", "ce"),
        steps=int(training.get("steps", 100)),
        batch_size=int(training.get("batch_size", 64)),
        eval_on=training.get("eval_on", "train"),
    )


def _parse_lrs(section: dict, where: str):
    has_list = "lrs" in section
    has_grid = "lr_grid" in section
    if has_list == has_grid:
        raise ConfigError(f"{where}: give exactly one of 'lrs' or 'lr_grid'")
    if has_list:
        return tuple(float(v) for v in section["lrs"])
    grid = section["lr_grid"]
    _check_keys(grid, {"min", "max", "points_per_decade"}, f"{where}.lr_grid")
    return log_grid(float(_require(grid, "min", "lr_grid")),
                    float(_require(grid, "max", "lr_grid")),
                    int(grid.get("points_per_decade", 2)))


def _log(msg: str) -> None:
    print(msg, file=sys.stderr)


def _write_json(path: str, blob) -> None:
    with open(path, "w") as fh:
        json.dump(blob, fh, indent=1, sort_keys=True)
    _log(f"wrote {path}")


def _echo_config(out_dir: str, command: str, cfg: dict, args) -> None:
    _write_json(os.path.join(out_dir, "config_echo.json"), {
        "command": command,
        "config": cfg,
        "jobs": args.jobs,
        "seed_offset": args.seed_offset,
        "version": __version__,
    })


def _cmd_train(cfg: dict, args, out_dir: str) -> int:
    _check_keys(cfg, {"dataset", "arch", "preset", "training", "run"}, "config")
    plan = _parse_plan(cfg, "train")
    run = _require(cfg, "run", "config")
    _check_keys(run, {"width", "lr", "seed", "probe_steps", "diag_level",
                      "log_every", "save_weights"}, "run")
    plan = _with_probes(plan, run)
    width = int(_require(run, "width", "run"))
    lr = float(_require(run, "lr", "run"))
    seed = int(run.get("seed", 0)) + args.seed_offset
    summary, metrics = run_single(plan, width, lr, seed, want_metrics=True,
                                  log_every=int(run.get("log_every", 1)))
    metrics_to_csv(metrics, os.path.join(out_dir, "metrics.csv"), plan.depth)
    diagnostics_to_csv(metrics.probes, os.path.join(out_dir, "diagnostics.csv"))
    _write_json(os.path.join(out_dir, "summary.json"), summary)
    _log(f"train: width={width} lr={lr} seed={seed} "
         f"diverged={summary['diverged']} final_acc={summary['final_accuracy']}")
    return 0


def _with_probes(plan: SweepPlan, section: dict) -> SweepPlan:
    from dataclasses import replace

    return replace(
        plan,
        probe_steps=tuple(int(s) for s in section.get("probe_steps", ())),
        diag_level=section.get("diag_level", "full"),
    )


def _cmd_sweep(cfg: dict, args, out_dir: str) -> int:
    _check_keys(cfg, {"dataset", "arch", "preset", "training", "sweep"}, "config")
    plan = _parse_plan(cfg, "sweep")
    sweep = _require(cfg, "sweep", "config")
    _check_keys(sweep, {"widths", "lrs", "lr_grid", "seeds", "instability",
                        "objective", "min_fit_width"}, "sweep")
    from dataclasses import replace

    plan = replace(
        plan,
        widths=tuple(int(w) for w in _require(sweep, "widths", "sweep")),
        lrs=_parse_lrs(sweep, "sweep"),
        seeds=tuple(int(s) for s in sweep.get("seeds", [0])),
        diag_level="rcc",
    )
    grid = run_sweep(plan, out_dir=out_dir, jobs=args.jobs,
                     seed_offset=args.seed_offset)
    series = {}
    if "instability" in sweep:
        series["min_unstable_lr"] = lr_series(grid, criterion=sweep["instability"])
    if "objective" in sweep:
        series["optimal_lr"] = lr_series(grid, objective=sweep["objective"])
    report = exponent_report(series,
                             min_width=int(sweep.get("min_fit_width", 256)))
    _write_json(os.path.join(out_dir, "report.json"), report.to_json())
    for key, fit in report.fits.items():
        _log(f"sweep: {key} exponent={fit.exponent:+.3f} r2={fit.r_squared:.4f}")
    return 0


def _cmd_coordcheck(cfg: dict, args, out_dir: str) -> int:
    _check_keys(cfg, {"dataset", "arch", "preset", "training", "coordcheck"},
                "config")
    plan = _parse_plan(cfg, "coordcheck")
    section = _require(cfg, "coordcheck", "config")
    _check_keys(section, {"widths", "seeds", "lr", "probe_steps", "diag_level",
                          "fit_step", "min_fit_width"}, "coordcheck")
    from dataclasses import replace

    plan = replace(
        _with_probes(plan, section),
        widths=tuple(int(w) for w in _require(section, "widths", "coordcheck")),
        seeds=tuple(int(s) + args.seed_offset for s in section.get("seeds", [0])),
        eval_on="none",
    )
    if not plan.probe_steps:
        raise ConfigError("coordcheck: probe_steps must be non-empty")
    study = coordcheck_study(
        plan,
        lr=float(_require(section, "lr", "coordcheck")),
        fit_step=section.get("fit_step"),
        min_fit_width=int(section.get("min_fit_width", 256)),
    )
    _write_json(os.path.join(out_dir, "coordcheck.json"), coordcheck_to_json(study))
    for key, fit in sorted(study.report.fits.items()):
        _log(f"coordcheck: {key} exponent={fit.exponent:+.3f} r2={fit.r_squared:.4f}")
    return 0


def _cmd_align(cfg: dict, args, out_dir: str) -> int:
    _check_keys(cfg, {"dataset", "arch", "preset", "training", "align"}, "config")
    plan = _parse_plan(cfg, "align")
    section = _require(cfg, "align", "config")
    _check_keys(section, {"widths", "seeds", "lr"}, "align")
    from dataclasses import replace

    plan = replace(
        plan,
        widths=tuple(int(w) for w in _require(section, "widths", "align")),
        seeds=tuple(int(s) + args.seed_offset for s in section.get("seeds", [0])),
    )
    rows = align_study(plan, lr=float(_require(section, "lr", "align")))
    _write_json(os.path.join(out_dir, "align.json"), {"rows": rows})
    return 0


_UV_KEYS = {"mode", "param", "sp_exponent", "widths", "steps", "seeds", "eta",
            "eta_grid", "x", "y", "chi_blowup", "seed", "n", "d"}


def _cmd_uvmodel(cfg: dict, args, out_dir: str) -> int:
    _check_keys(cfg, {"uv"}, "config")
    uv = _require(cfg, "uv", "config")
    _check_keys(uv, _UV_KEYS, "uv")
    mode = _require(uv, "mode", "uv")
    param = UvParam.parse(_require(uv, "param", "uv"),
                          float(uv.get("sp_exponent", 0.0)))
    seed = int(uv.get("seed", 0)) + args.seed_offset
    steps = int(uv.get("steps", 50))
    if mode == "stability":
        widths = [int(w) for w in _require(uv, "widths", "uv")]
        grid_cfg = _require(uv, "eta_grid", "uv")
        if isinstance(grid_cfg, dict):
            _check_keys(grid_cfg, {"min", "max", "points_per_decade"}, "uv.eta_grid")
            grid = log_grid(float(grid_cfg["min"]), float(grid_cfg["max"]),
                            int(grid_cfg.get("points_per_decade", 8)))
        else:
            grid = tuple(float(v) for v in grid_cfg)
        series = []
        for n in widths:
            eta = uv_max_stable_lr(param, n, grid, steps,
                                   chi_blowup=float(uv.get("chi_blowup", 10.0)),
                                   seed=seed, x=float(uv.get("x", 1.0)),
                                   y=float(uv.get("y", 1.0)))
            series.append((n, eta))
            _log(f"uvmodel: {param.kind.value} n={n} max_stable_lr={eta}")
        report = exponent_report({"max_stable_lr": series}, min_width=0)
        _write_json(os.path.join(out_dir, "uv_stability.json"), report.to_json())
        return 0
    if mode == "limit":
        widths = [int(w) for w in _require(uv, "widths", "uv")]
        result = uv_limit_distance(param, widths, steps,
                                   seeds=int(uv.get("seeds", 4)),
                                   eta=float(_require(uv, "eta", "uv")), seed=seed)
        series = list(zip(result["widths"], result["final"].tolist()))
        report = exponent_report({"limit_gap": series}, min_width=0)
        blob = report.to_json()
        blob["gaps"] = result["gaps"].tolist()
        _write_json(os.path.join(out_dir, "uv_limit.json"), blob)
        return 0
    if mode == "trajectory":
        n = int(_require(uv, "n", "uv"))
        eta = float(_require(uv, "eta", "uv"))
        x = float(uv.get("x", 1.0))
        y = float(uv.get("y", 1.0))
        rng = Rng(seed).split("uv_traj", param.kind.value, n)
        weights, state = uv_init(rng, param, n, d=int(uv.get("d", 1)),
                                 x=x, y=y, eta=eta)
        closed_f, closed_lam = [state.f], [state.lam]
        for _ in range(steps):
            state = uv_step(state)
            if state.diverged:
                break
            closed_f.append(state.f)
            closed_lam.append(state.lam)
        exp_f, exp_lam, diverged = uv_explicit_train(weights, param, eta, (x, y), steps)
        _write_json(os.path.join(out_dir, "uv_trajectory.json"), {
            "closed_f": closed_f,
            "closed_lam": closed_lam,
            "explicit_f": exp_f.tolist(),
            "explicit_lam": exp_lam.tolist(),
            "explicit_diverged": diverged,
        })
        return 0
    raise ConfigError(f"uv: unknown mode {mode!r}")


def _cmd_gendata(cfg: dict, args, out_dir: str) -> int:
    _check_keys(cfg, {"dataset"}, "config")
    dataset = _parse_dataset(_require(cfg, "dataset", "config"))
    if dataset["kind"] != "multi_index":
        raise ConfigError("gendata supports only the multi_index kind")
    train, test = gen_multi_index(
        seed=int(dataset.get("seed", 0)) + args.seed_offset,
        n_train=int(dataset.get("n_train", 1000)),
        n_test=int(dataset.get("n_test", 10000)),
        d_in=int(dataset.get("d_in", 100)),
    )
    train_path = os.path.join(out_dir, "train.bin")
    test_path = os.path.join(out_dir, "test.bin")
    save_dataset(train, train_path)
    save_dataset(test, test_path)
    _log(f"gendata: wrote {train_path} ({len(train)} rows), "
         f"{test_path} ({len(test)} rows)")
    return 0


def _cmd_report(cfg: dict, args, out_dir: str) -> int:
    _check_keys(cfg, {"inputs", "min_fit_width"}, "config")
    series = {}
    for i, item in enumerate(_require(cfg, "inputs", "config")):
        where = f"inputs[{i}]"
        _check_keys(item, {"kind", "path", "label", "criterion", "objective",
                           "points"}, where)
        label = _require(item, "label", where)
        kind = _require(item, "kind", where)
        if kind == "sweep":
            if ("criterion" in item) == ("objective" in item):
                raise ConfigError(f"{where}: give exactly one of criterion/objective")
            with open(_require(item, "path", where)) as fh:
                grid = SweepGrid.from_json(json.load(fh))
            series[label] = lr_series(grid, criterion=item.get("criterion"),
                                      objective=item.get("objective"))
        elif kind == "series":
            series[label] = [(int(n), float(v))
                             for n, v in _require(item, "points", where)]
        else:
            raise ConfigError(f"{where}: unknown kind {kind!r}")
    report = exponent_report(series, min_width=int(cfg.get("min_fit_width", 256)))
    _write_json(os.path.join(out_dir, "report.json"), report.to_json())
    for key, fit in sorted(report.fits.items()):
        _log(f"report: {key} exponent={fit.exponent:+.3f} r2={fit.r_squared:.4f}")
    return 0


_COMMANDS = {
    "train": _cmd_train,
    "sweep": _cmd_sweep,
    "coordcheck": _cmd_coordcheck,
    "align": _cmd_align,
    "uvmodel": _cmd_uvmodel,
    "gendata": _cmd_gendata,
    "report": _cmd_report,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="widthlab",
        description="Width-scaling studies for MLP parameterizations.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in _COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="JSON config path")
        p.add_argument("--out", default=None,
                       help=f"output directory (default ${OUT_ENV} or ./widthlab_out)")
        p.add_argument("--jobs", type=int, default=1,
                       help="parallel worker processes for sweeps")
        p.add_argument("--seed-offset", type=int, default=0,
                       help="added to every configured seed")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        with open(args.config) as fh:
            try:
                cfg = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"{args.config}: {exc}") from exc
        if not isinstance(cfg, dict):
            raise ConfigError(f"{args.config}: top level must be a JSON object")
        out_dir = args.out or os.environ.get(OUT_ENV) or "widthlab_out"
        os.makedirs(out_dir, exist_ok=True)
        _echo_config(out_dir, args.command, cfg, args)
        return _COMMANDS[args.command](cfg, args, out_dir)
    except ConfigError as exc:
        _log(f"config error: {exc}")
        return 2
    except OSError as exc:
        _log(f"i/o error: {exc}")
        return 1
    except (ValueError, KeyError) as exc:
        _log(f"config error: {exc}")
        return 2


if __name__ == "__main__":
    sys.exit(main())
