"""Command-line front end.

Exit codes: 0 success, 1 comparison verdict failed, 2 usage/config/IO/numerical error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from ldnn import TOOL_NAME, __version__
from ldnn.core import ExperimentConfig, PriorFileError, load_config
from ldnn.experiments import (
    DEFAULT_LAMBDA_GRID,
    PRESETS,
    SWEEP_AXES,
    agg_rows,
    compare,
    pred_rows,
    sweep,
    sweep_rows,
    trial_rows,
    tune_lambda,
    tune_rows,
)
from ldnn.io import header, read_csv, write_csv, write_json
from ldnn.linalg import SolveError
from ldnn.simulate import run_trials
from ldnn.state_evolution import se_trajectory

SEED_ENV = "LDNN_SEED"


def _floats(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _resolve_config(args) -> ExperimentConfig:
    cfg = load_config(args.config)
    # precedence: --seed, then LDNN_SEED, then the config document
    seed = getattr(args, "seed", None)
    if seed is None and os.environ.get(SEED_ENV):
        seed = int(os.environ[SEED_ENV])
    changes = {}
    if seed is not None:
        changes["seed"] = seed
    if getattr(args, "trials", None) is not None:
        changes["trials"] = args.trials
    if getattr(args, "particles", None) is not None:
        changes["particles"] = args.particles
    return cfg.with_(**changes) if changes else cfg


def cmd_simulate(args) -> int:
    cfg = _resolve_config(args)
    rec = run_trials(cfg, workers=args.workers)
    meta = dict(cfg.metadata(), trials=cfg.trials)
    out = Path(args.out)
    write_csv(out / "trials.csv", "trials", trial_rows(rec), header("trials", cfg.config_hash, meta))
    write_csv(out / "agg.csv", "agg", agg_rows(rec), header("agg", cfg.config_hash, meta))
    print(f"wrote {out / 'trials.csv'} and {out / 'agg.csv'} ({cfg.trials} trials, T={cfg.T})")
    return 0


def cmd_predict(args) -> int:
    cfg = _resolve_config(args)
    pred = se_trajectory(cfg)
    out = Path(args.out) / "pred.csv"
    write_csv(out, "pred", pred_rows(pred), header("pred", cfg.config_hash, pred.metadata))
    print(f"wrote {out} ({cfg.particles} particles, T={cfg.T})")
    return 0


def _load_side(path: str):
    """Map (t, metric) to (median, p25, p75) or prediction; a pred file counts as both."""
    head, rows = read_csv(path)
    kind = head.get("kind")
    if kind == "agg":
        emp = {(int(r["t"]), r["metric_name"]): (float(r["median"]), float(r["p25"]), float(r["p75"])) for r in rows}
        return head, emp, None
    if kind == "pred":
        prd = {(int(r["t"]), r["metric_name"]): float(r["predicted_value"]) for r in rows}
        return head, {k: (v, v, v) for k, v in prd.items()}, prd
    raise ValueError(f"{path}: expected an agg or pred CSV, got kind {kind!r}")


def cmd_compare(args) -> int:
    sim_head, emp, _ = _load_side(args.sim_csv)
    pred_head, _, prd = _load_side(args.pred_csv)
    if prd is None:
        raise ValueError(f"{args.pred_csv}: the prediction side must be a pred CSV")
    if sim_head.get("config_hash") != pred_head.get("config_hash"):
        raise ValueError(f"config hash mismatch: {sim_head.get('config_hash')} != {pred_head.get('config_hash')}")
    report = compare(emp, prd, rel_tol=args.rel_tol, abs_tol=args.abs_tol, config_hash=sim_head["config_hash"])
    doc = dict(report.to_dict(), tool=TOOL_NAME, version=__version__)
    if args.out:
        write_json(args.out, doc)
    if args.svg:
        from ldnn.plotting import comparison_svg

        comparison_svg(report, args.svg)
    for r in report.rows:
        verdict = {True: "PASS", False: "FAIL", None: "----"}[r.passed]
        gap = "" if r.abs_gap is None else f" abs_gap={r.abs_gap:.3e} rel_gap={r.rel_gap:.3f}"
        print(f"{verdict} t={r.t} {r.metric} predicted={r.predicted} median={r.median}{gap}")
    return 0 if report.all_passed else 1


def cmd_tune_lambda(args) -> int:
    cfg = _resolve_config(args)
    grid = args.grid if args.grid is not None else list(DEFAULT_LAMBDA_GRID)
    res = tune_lambda(cfg, grid)
    tuned = cfg.with_(lam=res.best_lambda)
    out = Path(args.out)
    meta = dict(cfg.metadata(), particles=cfg.particles)
    write_csv(out / "tune.csv", "tune", tune_rows(res), header("tune", cfg.config_hash, meta))
    write_json(out / "tune.json", {
        "tool": TOOL_NAME, "version": __version__, "config_hash": cfg.config_hash,
        "tuned_config_hash": tuned.config_hash, "best_lambda": res.best_lambda,
        "best_min_l1_error": res.best_error, "grid": list(res.grid), "objective": list(res.objective),
    })
    write_json(out / "tuned_config.json", tuned.to_dict())
    print(f"best lambda {res.best_lambda:.6g} (min predicted l1 error {res.best_error:.6g}); "
          f"wrote {out / 'tuned_config.json'}")
    return 0


def cmd_sweep(args) -> int:
    cfg = _resolve_config(args)
    values = [int(v) if args.axis == "b" else v for v in args.values]
    grid = None
    if args.tune:
        grid = args.grid if args.grid is not None else list(DEFAULT_LAMBDA_GRID)
    points = sweep(cfg, args.axis, values, lambda_grid=grid, simulate=args.simulate)
    out = Path(args.out) / "sweep.csv"
    head = header("sweep", cfg.config_hash, dict(cfg.metadata(), axis=args.axis,
                                                   point_hashes=[p.config.config_hash for p in points]))
    write_csv(out, "sweep", sweep_rows(points), head)
    print(f"wrote {out} ({len(points)} points)")
    return 0


def cmd_preset(args) -> int:
    kwargs = {}
    if args.psi:
        kwargs["psi"] = args.psi
    if args.b is not None:
        if args.name != "fig2":
            raise ValueError("--b applies to the fig2 preset only")
        kwargs["b"] = args.b
    if args.sigma is not None:
        if args.name != "fig1":
            raise ValueError("--sigma applies to the fig1 preset only")
        kwargs["sigma"] = args.sigma
    cfg = PRESETS[args.name](**kwargs)
    write_json(args.out, cfg.to_dict())
    print(f"wrote {args.out}; run tune-lambda on it before simulating")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog=TOOL_NAME, description="Batched reweighted least squares: "
                                     "simulation and state-evolution prediction")
    parser.add_argument("--version", action="version", version=f"{TOOL_NAME} {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, trials=False, particles=False):
        p.add_argument("-c", "--config", required=True, help="JSON experiment config")
        p.add_argument("-o", "--out", required=True, help="output directory")
        p.add_argument("--seed", type=int, help=f"override the seed (beats {SEED_ENV} and the config)")
        if trials:
            p.add_argument("--trials", type=int, help="override the trial count")
        if particles:
            p.add_argument("--particles", type=int, help="override the particle count")

    p = sub.add_parser("simulate", help="run finite-size trials")
    common(p, trials=True)
    p.add_argument("--workers", type=int, default=1, help="threads for concurrent trials")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("predict", help="run the state-evolution prediction")
    common(p, particles=True)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("compare", help="compare simulated medians with predictions")
    p.add_argument("sim_csv", help="agg.csv from simulate (or a pred.csv)")
    p.add_argument("pred_csv", help="pred.csv from predict")
    p.add_argument("--rel-tol", type=float, default=0.10)
    p.add_argument("--abs-tol", type=float, default=2e-3)
    p.add_argument("-o", "--out", help="report JSON path")
    p.add_argument("--svg", help="write an SVG overlay plot here")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("tune-lambda", help="choose lambda minimizing the predicted l1 error")
    common(p, particles=True)
    p.add_argument("--grid", type=_floats, help="comma-separated lambda values (default 10^-4..10^0, 17 points)")
    p.set_defaults(func=cmd_tune_lambda)

    p = sub.add_parser("sweep", help="predict across values of b, lambda or kappa")
    common(p, trials=True, particles=True)
    p.add_argument("--axis", required=True, choices=SWEEP_AXES)
    p.add_argument("--values", required=True, type=_floats)
    p.add_argument("--tune", action="store_true", help="tune lambda per point")
    p.add_argument("--grid", type=_floats, help="lambda grid for --tune")
    p.add_argument("--simulate", action="store_true", help="also simulate each point")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("preset", help="write a preset experiment config")
    p.add_argument("name", choices=sorted(PRESETS))
    p.add_argument("-o", "--out", required=True, help="config JSON path")
    p.add_argument("--psi")
    p.add_argument("--b", type=int)
    p.add_argument("--sigma", type=float)
    p.set_defaults(func=cmd_preset)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (OSError, ValueError, ArithmeticError, SolveError, PriorFileError) as exc:
        print(f"{TOOL_NAME} {args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
