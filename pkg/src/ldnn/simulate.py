"""Finite-size simulation of the batched reweighting algorithm.

Each iteration draws a fresh batch (X, y), solves the weighted ridge problem
for u, evaluates the metrics on (u^{t+1}, v^{t}, theta*) and then updates
v^{t+1} = psi(u^{t+1}, v^{t}) block-wise.

Noise is redrawn with every batch, and (theta*, v0) are redrawn for every
trial from the prior.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Iterator, Sequence

import numpy as np

from ldnn.core import SIM_STREAM, ExperimentConfig, materialize_signal, substream
from ldnn.linalg import Batch, weighted_ridge_solve
from ldnn.reweight import apply_psi, apply_psi_scalar


def generate_batch(n: int, d: int, theta_star, sigma: float, rng: np.random.Generator) -> Batch:
    theta_star = np.asarray(theta_star, dtype=np.float64)
    if theta_star.shape != (d,):
        raise ValueError(f"theta_star has shape {theta_star.shape}, expected ({d},)")
    X = rng.standard_normal((n, d))
    eps = sigma * rng.standard_normal(n)
    y = X @ theta_star / np.sqrt(d) + eps
    return Batch(X, y, eps)


def l1_error(u, v, theta_star) -> float:
    """(1/d) * sum |u_i v_i - theta*_i|."""
    u, v, theta_star = (np.asarray(a, dtype=np.float64) for a in (u, v, theta_star))
    if not u.shape == v.shape == theta_star.shape:
        raise ValueError("u, v and theta_star must have equal lengths")
    return float(np.mean(np.abs(u * v - theta_star)))


def sq_error(u, v, theta_star) -> float:
    """(1/d) * sum (u_i v_i - theta*_i)^2; not PL(2), so outside the guarantee."""
    u, v, theta_star = (np.asarray(a, dtype=np.float64) for a in (u, v, theta_star))
    if not u.shape == v.shape == theta_star.shape:
        raise ValueError("u, v and theta_star must have equal lengths")
    r = u * v - theta_star
    return float(np.mean(r * r))


METRIC_FUNCS = {"l1_error": l1_error, "squared_error": sq_error}


@dataclass
class TrajectoryRecord:
    """Per-iteration metrics for one or more trials.

    ``values`` has shape (trials, T, len(metrics)); the quartile arrays have
    shape (T, len(metrics)).
    """

    config_hash: str
    metrics: tuple[str, ...]
    values: np.ndarray
    trial_ids: tuple[int, ...]
    metadata: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 3 or self.values.shape[2] != len(self.metrics):
            raise ValueError(f"values must be (trials, T, {len(self.metrics)}), got {self.values.shape}")
        if len(self.trial_ids) != self.values.shape[0]:
            raise ValueError("one trial id per row of values")
        if self.values.shape[0]:
            self.p25, self.median, self.p75 = np.quantile(self.values, [0.25, 0.5, 0.75], axis=0)
        else:
            empty = np.zeros(self.values.shape[1:])
            self.p25, self.median, self.p75 = empty, empty.copy(), empty.copy()

    @property
    def T(self) -> int:
        return self.values.shape[1]

    @property
    def n_trials(self) -> int:
        return self.values.shape[0]

    def series(self, metric: str, stat: str = "median") -> np.ndarray:
        return getattr(self, stat)[:, self.metrics.index(metric)]


@dataclass(frozen=True)
class Step:
    """State after one iteration of the algorithm."""

    t: int
    batch: Batch
    u: np.ndarray
    v_before: np.ndarray
    v_after: np.ndarray


def iterate(config: ExperimentConfig, trial: int = 0, *, grouped: bool | None = None,
            theta_star=None, v0=None) -> Iterator[Step]:
    """Yield successive iterates of one trial.

    Streams: the signal uses substream (SIM, trial, 0) and the batch of
    iteration t uses (SIM, trial, 1, t). ``grouped`` selects block-wise psi
    (default: only when b > 1); at b = 1 both paths agree bit-for-bit.
    """
    if grouped is None:
        grouped = config.b > 1
    if theta_star is None or v0 is None:
        theta_star, v0 = materialize_signal(
            config.prior, config.d, config.b, substream(config.seed, SIM_STREAM, trial, 0)
        )
    theta_star = np.asarray(theta_star, dtype=np.float64)
    v = np.asarray(v0, dtype=np.float64)
    for t in range(1, config.T + 1):
        rng = substream(config.seed, SIM_STREAM, trial, 1, t)
        batch = generate_batch(config.n, config.d, theta_star, config.sigma, rng)
        u = weighted_ridge_solve(batch, v, config.lam)
        if grouped:
            blocks = (config.M, config.b)
            v_next = apply_psi(config.psi, u.reshape(blocks), v.reshape(blocks)).reshape(config.d)
        else:
            v_next = apply_psi_scalar(config.psi, u, v)
        yield Step(t, batch, u, v, v_next)
        v = v_next


def run_trajectory(config: ExperimentConfig, trial: int = 0, *, grouped: bool | None = None) -> TrajectoryRecord:
    """Run a single trial and record every metric at t = 1..T."""
    theta_star, v0 = materialize_signal(
        config.prior, config.d, config.b, substream(config.seed, SIM_STREAM, trial, 0)
    )
    rows = []
    for step in iterate(config, trial, grouped=grouped, theta_star=theta_star, v0=v0):
        rows.append([METRIC_FUNCS[m](step.u, step.v_before, theta_star) for m in config.metrics])
    values = np.array(rows, dtype=np.float64).reshape(1, config.T, len(config.metrics))
    return TrajectoryRecord(config.config_hash, config.metrics, values, (trial,), config.metadata())


def aggregate_trials(records: Sequence[TrajectoryRecord]) -> TrajectoryRecord:
    """Pool trials; quartiles use linear interpolation between order statistics."""
    if not records:
        raise ValueError("no records to aggregate")
    first = records[0]
    for rec in records[1:]:
        if rec.config_hash != first.config_hash:
            raise ValueError(f"config hash mismatch: {rec.config_hash} != {first.config_hash}")
        if rec.metrics != first.metrics or rec.T != first.T:
            raise ValueError("records disagree on metrics or horizon")
    values = np.concatenate([r.values for r in records], axis=0)
    trial_ids = tuple(i for r in records for i in r.trial_ids)
    return TrajectoryRecord(first.config_hash, first.metrics, values, trial_ids, dict(first.metadata))


def run_trials(config: ExperimentConfig, *, workers: int = 1) -> TrajectoryRecord:
    """Run ``config.trials`` trials, optionally on a thread pool.

    Every trial owns its substreams and results are pooled in trial order,
    so the output does not depend on ``workers``.
    """
    ids = range(config.trials)
    if workers <= 1:
        records = [run_trajectory(config, k) for k in ids]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            records = list(pool.map(lambda k: run_trajectory(config, k), ids))
    return aggregate_trials(records)
