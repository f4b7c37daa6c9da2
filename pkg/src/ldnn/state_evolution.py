"""Asymptotic state evolution for the batched reweighting algorithm.

At every iteration the law of (V, Theta) is carried by a particle cloud.
One step solves the scalar saddle problem

    max_{tau >= 0} min_{beta >= 0}  tau sigma^2 / beta + tau beta (1 - kappa) - tau^2
        + tau lambda E[(1/b) sum_j (Theta_j^2 + beta^2 kappa) / (tau V_j^2 + beta lambda)],

draws Q = tau V (Theta + beta sqrt(kappa) G) / (tau V^2 + beta lambda) per
particle with G ~ N(0, I_b), and replaces V by psi(Q, V).

The production saddle path reduces the problem to a fixed point in
gamma = tau / beta solved by bisection, with beta and tau in closed form.
``saddle_bruteforce_oracle`` optimizes the objective directly and exists
only to cross-check it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Callable

import numpy as np

from ldnn.core import SE_STREAM, ExperimentConfig, ParticleCloud, sample_prior_particles, substream
from ldnn.reweight import ReweightSpec, apply_psi, apply_psi_scalar

GAMMA_TOL = 1e-12
BISECTION_CAP = 200


class ConvergenceError(ArithmeticError):
    pass


class DegenerateSaddleError(ArithmeticError):
    def __init__(self, denominator: float):
        self.denominator = denominator
        super().__init__(f"degenerate saddle: beta denominator {denominator!r} is not positive")


class BracketError(ArithmeticError):
    def __init__(self, message: str, trace: list[tuple[float, float]]):
        self.trace = trace
        super().__init__(f"{message}; scan trace: {trace}")


@dataclass(frozen=True)
class SaddleSolution:
    gamma: float
    beta: float
    tau: float
    fixed_point_residual: float
    denominator: float


@dataclass
class PredictedTrajectory:
    """Saddles and predicted metrics for t = 1..T.

    ``values``/``stderr`` have shape (T, len(metrics)); ``cloud`` is the
    particle cloud after the last step (the prior draw when T = 0).
    """

    config_hash: str
    metrics: tuple[str, ...]
    saddles: list[SaddleSolution]
    values: np.ndarray
    stderr: np.ndarray
    cloud: ParticleCloud
    metadata: dict[str, Any] = field(default_factory=dict)

    @property
    def T(self) -> int:
        return len(self.saddles)

    def series(self, metric: str) -> np.ndarray:
        return self.values[:, self.metrics.index(metric)]


def _flat(cloud: ParticleCloud) -> tuple[np.ndarray, np.ndarray]:
    # (1/b) sum_j over blocks then a cloud average == a mean over all entries
    return cloud.v_blocks.reshape(-1), cloud.theta_blocks.reshape(-1)


def fixed_point_rhs(gamma: float, v2: np.ndarray, lam: float, kappa: float) -> float:
    return 1.0 - kappa + lam * kappa * float(np.mean(1.0 / (gamma * v2 + lam)))


def gamma_fixed_point(cloud: ParticleCloud, lam: float, kappa: float) -> float:
    """Root of gamma = 1 - kappa + lambda kappa E[1 / (gamma V^2 + lambda)] in (0, 1].

    The right-hand side equals 1 at gamma = 0 and decreases, so bisection on
    [0, 1] brackets the unique root.
    """
    if not (lam > 0 and kappa > 0):
        raise ValueError("lambda and kappa must be positive")
    v, _ = _flat(cloud)
    v2 = v * v

    def h(g):
        return fixed_point_rhs(g, v2, lam, kappa) - g

    lo, hi = 0.0, 1.0
    h_lo, h_hi = h(lo), h(hi)
    if h_hi >= 0.0:
        return 1.0
    for _ in range(BISECTION_CAP):
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        h_mid = h(mid)
        if h_mid == 0.0:
            return mid
        if h_mid > 0.0:
            lo, h_lo = mid, h_mid
        else:
            hi, h_hi = mid, h_mid
    else:
        raise ConvergenceError(f"gamma bisection did not converge in {BISECTION_CAP} steps; bracket [{lo!r}, {hi!r}]")
    gamma = lo if abs(h_lo) <= abs(h_hi) else hi
    if min(abs(h_lo), abs(h_hi)) > GAMMA_TOL:
        raise ConvergenceError(
            f"gamma residual {min(abs(h_lo), abs(h_hi)):.3e} exceeds {GAMMA_TOL}; bracket [{lo!r}, {hi!r}]"
        )
    return gamma


def saddle_from_gamma(cloud: ParticleCloud, lam: float, kappa: float, sigma: float, gamma: float) -> SaddleSolution:
    """Closed-form beta and tau for a solved gamma."""
    v, theta = _flat(cloud)
    v2 = v * v
    w = 1.0 / (gamma * v2 + lam)
    w2 = w * w
    numerator = sigma**2 + lam**2 * float(np.mean(theta * theta * w2))
    denominator = 2.0 * gamma + kappa - 1.0 - lam**2 * kappa * float(np.mean(w2))
    if not denominator > 0.0:
        raise DegenerateSaddleError(denominator)
    beta = math.sqrt(numerator / denominator)
    residual = abs(gamma - fixed_point_rhs(gamma, v2, lam, kappa))
    return SaddleSolution(gamma, beta, gamma * beta, residual, denominator)


def solve_saddle(cloud: ParticleCloud, lam: float, kappa: float, sigma: float) -> SaddleSolution:
    return saddle_from_gamma(cloud, lam, kappa, sigma, gamma_fixed_point(cloud, lam, kappa))


# -- brute-force oracle -----------------------------------------------------

_INV_PHI = (math.sqrt(5.0) - 1.0) / 2.0


def _bracket_min(fun: Callable[[float], float], x0: float, lo_limit: float = 0.0,
                 factor: float = 2.0, max_steps: int = 400) -> tuple[float, float]:
    """Geometric scan from x0 to a bracket [a, c] around a minimum on (lo_limit, inf)."""
    trace = []

    def f(x):
        val = fun(x)
        trace.append((x, val))
        return val

    b, fb = x0, f(x0)
    up, fup = x0 * factor, f(x0 * factor)
    if fup < fb:
        a = b
        b, fb = up, fup
        for _ in range(max_steps):
            c = b * factor
            fc = f(c)
            if fc >= fb:
                return a, c
            a, b, fb = b, c, fc
        raise BracketError("no upper bracket", trace)
    c = up
    for _ in range(max_steps):
        a = b / factor
        if a <= lo_limit:
            return lo_limit, c
        fa = f(a)
        if fa >= fb:
            return a, c
        c, b, fb = b, a, fa
    raise BracketError("no lower bracket", trace)


def _golden_min(fun: Callable[[float], float], a: float, c: float, rtol: float = 1e-11) -> float:
    x1 = c - _INV_PHI * (c - a)
    x2 = a + _INV_PHI * (c - a)
    f1, f2 = fun(x1), fun(x2)
    while (c - a) > rtol * (abs(x1) + abs(x2)):
        if f1 < f2:
            c, x2, f2 = x2, x1, f1
            x1 = c - _INV_PHI * (c - a)
            f1 = fun(x1)
        else:
            a, x1, f1 = x1, x2, f2
            x2 = a + _INV_PHI * (c - a)
            f2 = fun(x2)
    return 0.5 * (a + c)


def saddle_objective(cloud: ParticleCloud, lam: float, kappa: float, sigma: float) -> Callable[[float, float], float]:
    """f(tau, beta) with the expectation taken over the cloud.

    Repeated (V, Theta) entries are collapsed with multiplicities, which leaves
    the empirical average unchanged.
    """
    v, theta = _flat(cloud)
    pairs, counts = np.unique(np.stack([v * v, theta * theta], axis=1), axis=0, return_counts=True)
    v2, th2 = pairs[:, 0], pairs[:, 1]
    weights = counts / counts.sum()

    def f(tau: float, beta: float) -> float:
        avg = float(np.dot(weights, (th2 + beta * beta * kappa) / (tau * v2 + beta * lam)))
        return tau * sigma**2 / beta + tau * beta * (1.0 - kappa) - tau * tau + tau * lam * avg

    return f


def saddle_bruteforce_oracle(cloud: ParticleCloud, lam: float, kappa: float, sigma: float) -> SaddleSolution:
    """Saddle by nested scalar search: golden-section max over tau of min over beta."""
    f = saddle_objective(cloud, lam, kappa, sigma)
    beta_floor = sigma if sigma > 0 else 0.0
    beta_start = max(sigma, 1e-3)

    def inner(tau: float) -> tuple[float, float]:
        obj = lambda beta: f(tau, beta)  # noqa: E731
        a, c = _bracket_min(obj, beta_start, lo_limit=beta_floor)
        beta = _golden_min(obj, a, c)
        return beta, obj(beta)

    neg_outer = lambda tau: -inner(tau)[1]  # noqa: E731
    a, c = _bracket_min(neg_outer, 1e-2)
    tau = _golden_min(neg_outer, a, c)
    beta, _ = inner(tau)
    gamma = tau / beta
    v, theta = _flat(cloud)
    v2 = v * v
    residual = abs(gamma - fixed_point_rhs(gamma, v2, lam, kappa))
    w = 1.0 / (gamma * v2 + lam)
    denominator = 2.0 * gamma + kappa - 1.0 - lam**2 * kappa * float(np.mean(w * w))
    return SaddleSolution(gamma, beta, tau, residual, denominator)


# -- propagation ------------------------------------------------------------

def se_step(cloud: ParticleCloud, saddle: SaddleSolution, psi: ReweightSpec, kappa: float, lam: float,
            rng: np.random.Generator, *, grouped: bool = True, noise_sign: float = 1.0
            ) -> tuple[ParticleCloud, np.ndarray]:
    """Propagate the cloud one iteration; returns (new cloud, Q blocks).

    ``grouped=False`` runs the scalar recursion and requires b = 1.
    ``noise_sign=-1`` negates every Gaussian draw.
    """
    tau, beta = saddle.tau, saddle.beta
    scale = beta * math.sqrt(kappa)
    if grouped:
        V, Th = cloud.v_blocks, cloud.theta_blocks
        G = noise_sign * rng.standard_normal(V.shape)
        Q = tau * V * (Th + scale * G) / (tau * V * V + beta * lam)
        return ParticleCloud(apply_psi(psi, Q, V), Th), Q
    if cloud.b != 1:
        raise ValueError("the scalar recursion needs b = 1")
    V, Th = cloud.v_blocks[:, 0], cloud.theta_blocks[:, 0]
    G = noise_sign * rng.standard_normal(V.shape[0])
    Q = tau * V * (Th + scale * G) / (tau * V * V + beta * lam)
    return ParticleCloud(apply_psi_scalar(psi, Q, V), Th), Q[:, None]


def predict_metric(q_blocks: np.ndarray, cloud_before: ParticleCloud, metric: str) -> tuple[float, float]:
    """Cloud average of (1/b) sum_j g(Q_j, V_j, Theta_j) and its Monte Carlo standard error."""
    r = np.asarray(q_blocks) * cloud_before.v_blocks - cloud_before.theta_blocks
    if metric == "l1_error":
        per_block = np.abs(r)
    elif metric == "squared_error":
        per_block = r * r
    else:
        raise ValueError(f"unknown metric {metric!r}")
    per_particle = per_block.mean(axis=1)
    count = per_particle.shape[0]
    stderr = float(np.std(per_particle, ddof=1) / math.sqrt(count)) if count > 1 else float("nan")
    return float(np.mean(per_particle)), stderr


def se_trajectory(config: ExperimentConfig, *, particles: int | None = None, cloud: ParticleCloud | None = None,
                  grouped: bool | None = None, noise_sign: float = 1.0, seed: int | None = None
                  ) -> PredictedTrajectory:
    """Run T rounds of saddle solve, propagation and metric prediction.

    The prior cloud uses substream (SE, 0) and the Gaussian draws of round t
    use (SE, 1, t). Passing ``cloud`` starts from a given cloud instead.
    """
    seed = config.seed if seed is None else seed
    if grouped is None:
        grouped = config.b > 1
    if cloud is None:
        count = config.particles if particles is None else particles
        cloud = sample_prior_particles(config.prior, config.b, count, substream(seed, SE_STREAM, 0))
    elif cloud.b != config.b:
        raise ValueError(f"cloud block size {cloud.b} != config b {config.b}")
    kappa, lam = config.kappa, config.lam
    saddles: list[SaddleSolution] = []
    values = np.zeros((config.T, len(config.metrics)))
    stderr = np.zeros_like(values)
    for t in range(1, config.T + 1):
        saddle = solve_saddle(cloud, lam, kappa, config.sigma)
        new_cloud, q = se_step(cloud, saddle, config.psi, kappa, lam, substream(seed, SE_STREAM, 1, t),
                               grouped=grouped, noise_sign=noise_sign)
        for k, m in enumerate(config.metrics):
            values[t - 1, k], stderr[t - 1, k] = predict_metric(q, cloud, m)
        saddles.append(saddle)
        cloud = new_cloud
    meta = config.metadata()
    meta["particles"] = cloud.count
    return PredictedTrajectory(config.config_hash, config.metrics, saddles, values, stderr, cloud, meta)
