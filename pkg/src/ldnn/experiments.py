"""Experiment orchestration: lambda tuning, sweeps, comparisons and presets."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Any, Iterable, Mapping, Sequence

import numpy as np

from ldnn.core import ConfigError, ExperimentConfig, config_from_dict
from ldnn.simulate import TrajectoryRecord, run_trials
from ldnn.state_evolution import PredictedTrajectory, se_trajectory

DEFAULT_LAMBDA_GRID = tuple(float(x) for x in np.logspace(-4, 0, 17))
REL_GAP_FLOOR = 1e-6


# -- rows for the CSV schemas ----------------------------------------------

def trial_rows(rec: TrajectoryRecord) -> list[tuple]:
    return [
        (trial, t + 1, m, float(rec.values[i, t, k]))
        for i, trial in enumerate(rec.trial_ids)
        for t in range(rec.T)
        for k, m in enumerate(rec.metrics)
    ]


def agg_rows(rec: TrajectoryRecord) -> list[tuple]:
    return [
        (t + 1, m, float(rec.median[t, k]), float(rec.p25[t, k]), float(rec.p75[t, k]))
        for t in range(rec.T)
        for k, m in enumerate(rec.metrics)
    ]


def pred_rows(pred: PredictedTrajectory) -> list[tuple]:
    return [
        (t + 1, s.gamma, s.beta, s.tau, m, float(pred.values[t, k]), float(pred.stderr[t, k]))
        for t, s in enumerate(pred.saddles)
        for k, m in enumerate(pred.metrics)
    ]


# -- lambda tuning ----------------------------------------------------------

@dataclass
class TuneResult:
    best_lambda: float
    best_error: float
    grid: tuple[float, ...]
    objective: tuple[float, ...]
    predictions: list[PredictedTrajectory] = field(repr=False)


def tune_lambda(config: ExperimentConfig, grid: Sequence[float], *, particles: int | None = None) -> TuneResult:
    """Pick the lambda whose predicted l1 error, minimized over t <= T, is smallest.

    Every grid point reuses the same seed, so candidates are compared on
    common random numbers. Ties go to the larger lambda.
    """
    grid = tuple(float(x) for x in grid)
    if not grid:
        raise ValueError("lambda grid is empty")
    if any(not (np.isfinite(x) and x > 0) for x in grid):
        raise ValueError("lambda grid values must be positive")
    if config.T < 1:
        raise ValueError("tuning needs T >= 1")
    metrics = config.metrics if "l1_error" in config.metrics else ("l1_error",) + config.metrics
    best: tuple[float, float] | None = None
    objective, preds = [], []
    for lam in grid:
        pred = se_trajectory(config.with_(lam=lam, metrics=metrics), particles=particles)
        score = float(pred.series("l1_error").min())
        objective.append(score)
        preds.append(pred)
        if best is None or score < best[1] or (score == best[1] and lam > best[0]):
            best = (lam, score)
    return TuneResult(best[0], best[1], grid, tuple(objective), preds)


def tune_rows(result: TuneResult) -> list[tuple]:
    rows = []
    for lam, pred in zip(result.grid, result.predictions):
        for t in range(pred.T):
            for k, m in enumerate(pred.metrics):
                rows.append((lam, t + 1, m, float(pred.values[t, k]), float(pred.stderr[t, k])))
    return rows


# -- sweeps -----------------------------------------------------------------

SWEEP_AXES = ("b", "lambda", "kappa")


def config_for_axis(config: ExperimentConfig, axis: str, value: float) -> ExperimentConfig:
    if axis == "b":
        if float(value) != int(value) or int(value) < 1:
            raise ConfigError("b", f"block size must be a positive integer, got {value}")
        return config.with_(b=int(value))
    if axis == "lambda":
        return config.with_(lam=float(value))
    if axis == "kappa":
        if not value > 0:
            raise ConfigError("kappa", f"must be positive, got {value}")
        n = config.d / float(value)
        if n != int(n) or n < 1:
            raise ConfigError("kappa", f"d / kappa = {n} is not a positive integer sample count")
        return config.with_(n=int(n))
    raise ValueError(f"unknown sweep axis {axis!r}; expected one of {SWEEP_AXES}")


@dataclass
class SweepPoint:
    axis: str
    value: float
    config: ExperimentConfig
    prediction: PredictedTrajectory
    simulation: TrajectoryRecord | None = None


def sweep(config: ExperimentConfig, axis: str, values: Iterable[float], *,
          lambda_grid: Sequence[float] | None = None, simulate: bool = False,
          particles: int | None = None, tune_particles: int | None = None) -> list[SweepPoint]:
    """One prediction (and optionally a simulation) per axis value.

    With ``lambda_grid`` each point first tunes lambda for its own setting.
    """
    values = list(values)
    if not values:
        raise ValueError("no sweep values")
    cfgs = [config_for_axis(config, axis, v) for v in values]
    points = []
    for v, cfg in zip(values, cfgs):
        if lambda_grid is not None and axis != "lambda":
            cfg = cfg.with_(lam=tune_lambda(cfg, lambda_grid, particles=tune_particles).best_lambda)
        pred = se_trajectory(cfg, particles=particles)
        sim = run_trials(cfg) if simulate else None
        points.append(SweepPoint(axis, v, cfg, pred, sim))
    return points


def sweep_rows(points: Sequence[SweepPoint]) -> list[tuple]:
    rows = []
    for pt in points:
        pred = pt.prediction
        for t, s in enumerate(pred.saddles):
            for k, m in enumerate(pred.metrics):
                sim = ("", "", "")
                if pt.simulation is not None:
                    rec = pt.simulation
                    sim = (float(rec.median[t, k]), float(rec.p25[t, k]), float(rec.p75[t, k]))
                rows.append((pt.axis, pt.value, pt.config.lam, t + 1, s.gamma, s.beta, s.tau, m,
                             float(pred.values[t, k]), float(pred.stderr[t, k])) + sim)
    return rows


# -- comparison -------------------------------------------------------------

@dataclass
class ComparisonRow:
    t: int
    metric: str
    predicted: float | None
    median: float | None
    p25: float | None
    p75: float | None
    abs_gap: float | None = None
    rel_gap: float | None = None
    passed: bool | None = None


@dataclass
class ComparisonReport:
    config_hash: str | None
    rel_tol: float
    abs_tol: float
    rows: list[ComparisonRow]

    @property
    def matched(self) -> list[ComparisonRow]:
        return [r for r in self.rows if r.passed is not None]

    @property
    def all_passed(self) -> bool:
        return bool(self.matched) and all(r.passed for r in self.matched)

    def to_dict(self) -> dict[str, Any]:
        return {
            "config_hash": self.config_hash,
            "rel_tol": self.rel_tol,
            "abs_tol": self.abs_tol,
            "all_passed": self.all_passed,
            "rows": [asdict(r) for r in self.rows],
        }


def compare(empirical: Mapping[tuple[int, str], tuple[float, float, float]],
            predicted: Mapping[tuple[int, str], float], *, rel_tol: float, abs_tol: float,
            config_hash: str | None = None) -> ComparisonReport:
    """Gap between empirical medians and predictions per (t, metric).

    A point passes when |median - prediction| <= max(rel_tol * |prediction|, abs_tol).
    Keys present on only one side are reported without gaps or verdict.
    """
    rows = []
    for key in sorted(set(empirical) | set(predicted)):
        t, metric = key
        emp = empirical.get(key)
        pred = predicted.get(key)
        row = ComparisonRow(t, metric, pred, *(emp if emp is not None else (None, None, None)))
        if emp is not None and pred is not None:
            row.abs_gap = abs(emp[0] - pred)
            row.rel_gap = row.abs_gap / max(abs(pred), REL_GAP_FLOOR)
            row.passed = bool(row.abs_gap <= max(rel_tol * abs(pred), abs_tol))
        rows.append(row)
    return ComparisonReport(config_hash, rel_tol, abs_tol, rows)


def compare_runs(rec: TrajectoryRecord, pred: PredictedTrajectory, *, rel_tol: float, abs_tol: float) -> ComparisonReport:
    if rec.config_hash != pred.config_hash:
        raise ValueError(f"config hash mismatch: {rec.config_hash} != {pred.config_hash}")
    emp = {(t + 1, m): (float(rec.median[t, k]), float(rec.p25[t, k]), float(rec.p75[t, k]))
           for t in range(rec.T) for k, m in enumerate(rec.metrics)}
    prd = {(t + 1, m): float(pred.values[t, k]) for t in range(pred.T) for k, m in enumerate(pred.metrics)}
    return compare(emp, prd, rel_tol=rel_tol, abs_tol=abs_tol, config_hash=rec.config_hash)


# -- presets ----------------------------------------------------------------

def fig1_config(psi: str = "tanh_abs", sigma: float = 0.1, lam: float = 0.01, **overrides) -> ExperimentConfig:
    """Sparse regression: n=250, d=2000, Bernoulli(0.01) signal, v0 = 1, T=8."""
    doc = {
        "n": 250, "d": 2000, "sigma": sigma, "lambda": lam, "b": 1, "T": 8,
        "trials": 100, "seed": 0,
        "psi": {"kind": psi},
        "prior": {"kind": "bernoulli", "p": 0.01, "init": {"kind": "ones"}},
    }
    doc.update(overrides)
    return config_from_dict(doc)


def fig2_config(psi: str = "group_aware_tanh", b: int = 8, lam: float = 0.01, **overrides) -> ExperimentConfig:
    """Group sparsity: n=500, d=4000, sigma=0.1, Bernoulli(0.01) * 1_b blocks, T=4."""
    doc = {
        "n": 500, "d": 4000, "sigma": 0.1, "lambda": lam, "b": b, "T": 4,
        "trials": 100, "seed": 0,
        "psi": {"kind": psi},
        "prior": {"kind": "group_bernoulli", "p": 0.01, "init": {"kind": "ones"}},
    }
    doc.update(overrides)
    return config_from_dict(doc)


PRESETS = {"fig1": fig1_config, "fig2": fig2_config}
