"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run on its own with ``pytest tests/test_acceptance.py -v -s``. The whole
module takes several minutes on one core.
"""

import json
import math
import time
from functools import lru_cache
from pathlib import Path

import numpy as np
import pytest
from sklearn.linear_model import Ridge

from ldnn.cli import main
from ldnn.core import SE_STREAM, InitSpec, ParticleCloud, PriorSpec, load_config, sample_prior_particles, substream
from ldnn.experiments import fig1_config, fig2_config, tune_lambda
from ldnn.io import write_json
from ldnn.linalg import Batch, kkt_residual, solve_dual, solve_primal
from ldnn.reweight import ReweightSpec
from ldnn.simulate import TrajectoryRecord, aggregate_trials, iterate, run_trajectory, run_trials
from ldnn.state_evolution import (
    GAMMA_TOL,
    gamma_fixed_point,
    saddle_bruteforce_oracle,
    saddle_from_gamma,
    se_step,
    se_trajectory,
    solve_saddle,
)

from conftest import ACCEPTANCE_LINES

pytestmark = pytest.mark.slow

FIG_TRIALS = 100
TUNE_PARTICLES = 200_000
PRED_PARTICLES = 1_000_000


def verdict(number: int, name: str, ok: bool, detail: str = "") -> None:
    line = f"criterion {number} [{'PASS' if ok else 'FAIL'}] {name}" + (f": {detail}" if detail else "")
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, line


# -- 1 ----------------------------------------------------------------------

SADDLE_CASES = [
    # prior, b, kappa, sigma, lambda, psi used to propagate one step first (None: prior cloud)
    (PriorSpec("bernoulli", p=0.01), 1, 8.0, 0.1, 0.01, None),
    (PriorSpec("bernoulli", p=0.01), 1, 2.0, 0.001, 0.1, "tanh_abs"),
    (PriorSpec("bernoulli", p=0.01, init=InitSpec("gaussian", stddev=1.0)), 1, 8.0, 0.001, 0.1, None),
    (PriorSpec("group_bernoulli", p=0.01), 2, 8.0, 0.1, 0.01, "group_aware_tanh"),
    (PriorSpec("group_bernoulli", p=0.01, init=InitSpec("gaussian", stddev=1.0)), 2, 2.0, 0.1, 0.1, None),
    (PriorSpec("group_bernoulli", p=0.01), 8, 2.0, 0.001, 0.01, "group_aware_tanh"),
    (PriorSpec("group_bernoulli", p=0.01), 8, 8.0, 0.1, 0.1, None),
    (PriorSpec("point_mass", theta_value=0.0), 1, 2.0, 0.1, 0.01, None),
    (PriorSpec("point_mass", theta_value=1.0, init=InitSpec("gaussian", stddev=1.0)), 1, 8.0, 0.001, 0.01, None),
    (PriorSpec("point_mass", theta_value=1.0), 1, 2.0, 0.1, 0.1, "am"),
]


def test_criterion_1_saddle_cross_validation():
    start = time.perf_counter()
    worst_rel, worst_res, failures = 0.0, 0.0, []
    for k, (prior, b, kappa, sigma, lam, psi) in enumerate(SADDLE_CASES):
        # N_p = 1e5 scalar entries, i.e. 1e5 / b blocks
        cloud = sample_prior_particles(prior, b, 100_000 // b, substream(100, k))
        if psi is not None:
            s0 = solve_saddle(cloud, lam, kappa, sigma)
            cloud, _ = se_step(cloud, s0, ReweightSpec(psi), kappa, lam, substream(100, k, 1))
        gamma = gamma_fixed_point(cloud, lam, kappa)
        closed = saddle_from_gamma(cloud, lam, kappa, sigma, gamma)
        oracle = saddle_bruteforce_oracle(cloud, lam, kappa, sigma)
        rel = max(abs(oracle.tau - closed.tau) / closed.tau, abs(oracle.beta - closed.beta) / closed.beta)
        worst_rel = max(worst_rel, rel)
        worst_res = max(worst_res, closed.fixed_point_residual)
        if rel > 1e-3 or closed.fixed_point_residual > GAMMA_TOL or closed.beta < sigma:
            failures.append((k, rel, closed.fixed_point_residual, closed.beta, sigma))
    elapsed = time.perf_counter() - start
    ok = not failures and elapsed < 120.0
    verdict(1, "saddle closed form vs brute-force oracle", ok,
            f"10 cases, max rel diff {worst_rel:.2e}, max residual {worst_res:.1e}, {elapsed:.1f}s"
            + (f", failures {failures}" if failures else ""))


# -- 2 ----------------------------------------------------------------------

def test_criterion_2_closed_form_spot_value():
    start = time.perf_counter()
    cloud = ParticleCloud(np.ones((1000, 1)), np.ones((1000, 1)))
    gamma = gamma_fixed_point(cloud, 1.0, 1.0)
    elapsed = time.perf_counter() - start
    err = abs(gamma - (math.sqrt(5.0) - 1.0) / 2.0)
    verdict(2, "gamma for unit weights equals the golden-ratio root", err <= 1e-9 and elapsed < 1.0,
            f"gamma={gamma!r}, |err|={err:.1e}, {elapsed * 1e3:.1f}ms")


# -- 3 and 8: fig1 preset compared end to end through the command line --------

@lru_cache(maxsize=None)
def fig1_run(psi: str, root: str) -> dict:
    """tune-lambda, simulate, predict and compare for one psi; returns the report."""
    work = Path(root) / psi
    work.mkdir(parents=True, exist_ok=True)
    cfg = fig1_config(psi=psi, trials=FIG_TRIALS, metrics=("l1_error", "squared_error"))
    write_json(work / "config.json", cfg.to_dict())
    assert main(["tune-lambda", "-c", str(work / "config.json"), "-o", str(work),
                 "--particles", str(TUNE_PARTICLES)]) == 0
    tuned = str(work / "tuned_config.json")
    assert main(["simulate", "-c", tuned, "-o", str(work)]) == 0
    assert main(["predict", "-c", tuned, "-o", str(work), "--particles", str(PRED_PARTICLES)]) == 0
    main(["compare", str(work / "agg.csv"), str(work / "pred.csv"), "-o", str(work / "report.json"),
          "--svg", str(work / "comparison.svg")])
    report = json.loads((work / "report.json").read_text())
    report["lambda"] = load_config(tuned).lam
    report["tune"] = json.loads((work / "tune.json").read_text())
    return report


@pytest.fixture(scope="module")
def fig1_root(tmp_path_factory):
    return str(tmp_path_factory.mktemp("fig1"))


def within(report: dict, metric: str, rel_tol: float, abs_tol: float) -> tuple[bool, float, str]:
    rows = [r for r in report["rows"] if r["metric"] == metric]
    worst, bad = 0.0, []
    for r in rows:
        gap = abs(r["median"] - r["predicted"])
        allowed = max(rel_tol * abs(r["predicted"]), abs_tol)
        worst = max(worst, gap / allowed)
        if gap > allowed:
            bad.append(f"t={r['t']} median={r['median']:.4g} pred={r['predicted']:.4g}")
    return len(rows) == 8 and not bad, worst, "; ".join(bad)


@pytest.mark.parametrize("psi", ["tanh_abs", "am", "tanh_sq", "sqrt_abs"])
def test_criterion_3_theory_vs_simulation(psi, fig1_root):
    report = fig1_run(psi, fig1_root)
    ok, worst, bad = within(report, "l1_error", 0.10, 2e-3)
    verdict(3, f"fig1 l1 median vs prediction, psi={psi}", ok,
            f"lambda={report['lambda']:.4g}, {FIG_TRIALS} trials, worst gap/allowance {worst:.2f}"
            + (f", out of tolerance: {bad}" if bad else ""))


@pytest.mark.parametrize("psi, metric", [("abs_uv", "l1_error"), ("u_sq", "l1_error"), ("tanh_abs", "squared_error")])
def test_criterion_8_outside_guarantee(psi, metric, fig1_root):
    report = fig1_run(psi, fig1_root)
    ok, worst, bad = within(report, metric, 0.20, 5e-3)
    verdict(8, f"fig1 relaxed comparison, psi={psi}, metric={metric}", ok,
            f"lambda={report['lambda']:.4g}, worst gap/allowance {worst:.2f}" + (f", out of tolerance: {bad}" if bad else ""))


def test_fig1_median_strictly_decreasing(fig1_root):
    report = fig1_run("tanh_abs", fig1_root)
    med = [r["median"] for r in sorted(report["rows"], key=lambda r: r["t"]) if r["metric"] == "l1_error"]
    assert all(b < a for a, b in zip(med, med[1:])), med


def test_fig1_tuned_lambda_is_grid_minimum(fig1_root):
    tune = fig1_run("tanh_abs", fig1_root)["tune"]
    assert len(tune["grid"]) == 17
    assert tune["best_min_l1_error"] == min(tune["objective"])
    assert tune["best_lambda"] == tune["grid"][tune["objective"].index(min(tune["objective"]))]


def test_group_blind_roughly_flat_in_b():
    preds = [se_trajectory(fig2_config(psi="group_blind_tanh", b=b, lam=0.0316, particles=TUNE_PARTICLES // b))
             .series("l1_error")[-1] for b in (1, 2, 4, 8)]
    assert max(preds) / min(preds) < 1.15, preds


# -- 4 ----------------------------------------------------------------------

@pytest.fixture(scope="module")
def fig2_results():
    grid = np.logspace(-4, 0, 17)
    out = {}
    for psi, b in [("group_aware_tanh", 1), ("group_aware_tanh", 2), ("group_aware_tanh", 4),
                   ("group_aware_tanh", 8), ("group_blind_tanh", 8)]:
        # about 1e6 scalar entries per prediction whatever the block size
        cfg = fig2_config(psi=psi, b=b, trials=FIG_TRIALS, particles=PRED_PARTICLES // b)
        cfg = cfg.with_(lam=tune_lambda(cfg, grid, particles=TUNE_PARTICLES // b).best_lambda)
        pred = se_trajectory(cfg).series("l1_error")[-1]
        med = run_trials(cfg).series("l1_error")[-1]
        out[(psi, b)] = (cfg.lam, pred, med)
    return out


def _ordering(values: dict) -> bool:
    aware = [values[("group_aware_tanh", b)] for b in (1, 2, 4, 8)]
    return all(b <= a for a, b in zip(aware, aware[1:])) and aware[-1] < values[("group_blind_tanh", 8)]


def _describe(res: dict, idx: int) -> str:
    return ", ".join(f"{psi.split('_')[1]} b={b}: {v[idx]:.5f} (lambda {v[0]:.3g})" for (psi, b), v in res.items())


def test_criterion_4a_group_aware_prediction(fig2_results):
    ok = _ordering({k: v[1] for k, v in fig2_results.items()})
    verdict(4, "predicted T=4 error ordering over b (group-aware vs blind)", ok, _describe(fig2_results, 1))


def test_criterion_4b_group_aware_simulation(fig2_results):
    ok = _ordering({k: v[2] for k, v in fig2_results.items()})
    verdict(4, "simulated T=4 median ordering over b (group-aware vs blind)", ok, _describe(fig2_results, 2))


# -- 5 ----------------------------------------------------------------------

def test_criterion_5_degeneracy():
    cfg = fig1_config(psi="group_aware_tanh", T=3, trials=1, particles=100_000,
                      metrics=("l1_error", "squared_error"))
    se_equal = se_trajectory(cfg, grouped=True).values.tobytes() == se_trajectory(cfg, grouped=False).values.tobytes()
    sim_equal = run_trajectory(cfg, grouped=True).values.tobytes() == run_trajectory(cfg, grouped=False).values.tobytes()
    am = fig1_config(psi="am", T=1, lam=0.05)
    step = next(iterate(am))
    ridge = Ridge(alpha=am.lam * am.n / am.d, fit_intercept=False, solver="cholesky")
    coef = ridge.fit(step.batch.X / math.sqrt(am.d), step.batch.y).coef_
    rel = float(np.linalg.norm(step.u - coef) / np.linalg.norm(coef))
    verdict(5, "b=1 grouped equals scalar bit-for-bit; first AM step equals ridge",
            se_equal and sim_equal and rel <= 1e-8,
            f"state evolution identical={se_equal}, simulation identical={sim_equal}, ridge rel diff {rel:.1e}")


# -- 6 ----------------------------------------------------------------------

def test_criterion_6_solver_soundness():
    rng = np.random.default_rng(6)
    worst_gap, worst_kkt = 0.0, 0.0
    for _ in range(100):
        n, d = (int(x) for x in rng.integers(1, 65, size=2))
        X = rng.standard_normal((n, d))
        eps = 0.1 * rng.standard_normal(n)
        batch = Batch(X, X @ rng.standard_normal(d) / math.sqrt(d) + eps, eps)
        v = rng.standard_normal(d) * (rng.random(d) >= rng.uniform(0.0, 0.7))
        lam = 10.0 ** rng.uniform(-3, 1)
        up, ud = solve_primal(batch, v, lam), solve_dual(batch, v, lam)
        norm = np.linalg.norm(up)
        worst_gap = max(worst_gap, float(np.linalg.norm(up - ud) / norm) if norm > 0 else float(np.any(ud != 0)))
        worst_kkt = max(worst_kkt, kkt_residual(batch, v, lam, up), kkt_residual(batch, v, lam, ud))
    verdict(6, "dual and primal solves agree and satisfy stationarity", worst_gap <= 1e-8 and worst_kkt <= 1e-8,
            f"100 instances, max rel gap {worst_gap:.1e}, max KKT residual {worst_kkt:.1e}")


# -- 7 ----------------------------------------------------------------------

def numpy_linear_quantile(values, q):
    # order statistics with the same lerp numpy uses for its default method
    s = sorted(values)
    h = len(s) * q + (1.0 - q) - 1.0
    lo = math.floor(h)
    t = h - lo
    a, b = s[lo], s[min(lo + 1, len(s) - 1)]
    diff = b - a
    return b - diff * (1.0 - t) if t >= 0.5 else a + diff * t


def test_criterion_7_property_suite(tmp_path):
    cfg = fig1_config(T=4, lam=0.0316, particles=100_000)
    checks = {}

    base = se_trajectory(cfg)
    flipped = se_trajectory(cfg, noise_sign=-1.0)
    tol = 5 * np.sqrt(base.stderr**2 + flipped.stderr**2)
    checks["sign symmetry"] = bool(np.all(np.abs(base.values - flipped.values) <= tol))

    cloud = sample_prior_particles(cfg.prior, 1, cfg.particles, substream(cfg.seed, SE_STREAM, 0))
    shuffled = se_trajectory(cfg, cloud=cloud.permuted(np.random.default_rng(1).permutation(cloud.count)))
    tol = 5 * np.sqrt(base.stderr**2 + shuffled.stderr**2)
    checks["shuffle invariance"] = bool(np.all(np.abs(base.values - shuffled.values) <= tol))

    ratios = np.mean([se_trajectory(cfg, particles=400_000, seed=s).stderr
                      / se_trajectory(cfg, particles=100_000, seed=s).stderr for s in range(3)], axis=0)
    checks["stderr halves under 4x particles"] = bool(np.all(np.abs(ratios - 0.5) <= 0.05))

    path = tmp_path / "cfg.json"
    write_json(path, fig1_config(T=3, trials=5, particles=50_000).to_dict())
    for run in ("a", "b"):
        main(["simulate", "-c", str(path), "-o", str(tmp_path / run)])
        main(["predict", "-c", str(path), "-o", str(tmp_path / run)])
    checks["byte-identical CSVs"] = all((tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()
                                        for f in ("trials.csv", "agg.csv", "pred.csv"))

    rng = np.random.default_rng(7)
    exact = True
    for trials in (1, 2, 5, 50, 101):
        parts = [TrajectoryRecord("h", ("l1_error",), rng.random((1, 3, 1)), (k,)) for k in range(trials)]
        agg = aggregate_trials(parts)
        for t in range(3):
            col = [p.values[0, t, 0] for p in parts]
            exact &= agg.p25[t, 0] == numpy_linear_quantile(col, 0.25)
            exact &= agg.median[t, 0] == numpy_linear_quantile(col, 0.5)
            exact &= agg.p75[t, 0] == numpy_linear_quantile(col, 0.75)
    checks["aggregation equals sort oracle"] = bool(exact)

    verdict(7, "property suite", all(checks.values()),
            ", ".join(f"{k}={'ok' if v else 'FAILED'}" for k, v in checks.items()) + f", stderr ratios {ratios.round(3).tolist()}")
