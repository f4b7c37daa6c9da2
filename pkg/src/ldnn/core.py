"""Domain types, JSON configuration, priors and signal materialization."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, replace
from functools import lru_cache
from pathlib import Path
from typing import Any, Mapping

import numpy as np

from ldnn.reweight import OUTSIDE, WITHIN, ReweightSpec

DEFAULT_PARTICLES = 1_000_000

METRICS = ("l1_error", "squared_error")
METRIC_GUARANTEE = {"l1_error": WITHIN, "squared_error": OUTSIDE}

PRIOR_KINDS = ("bernoulli", "group_bernoulli", "gaussian", "point_mass", "particle_file")
INIT_KINDS = ("ones", "gaussian", "constant")

# spawn-key roots keep simulation and state-evolution streams disjoint
SIM_STREAM = 0
SE_STREAM = 1


class ConfigError(ValueError):
    """Invalid configuration; ``path`` names the offending field."""

    def __init__(self, path: str, message: str):
        self.path = path
        super().__init__(f"{path}: {message}" if path else message)


class PriorFileError(ValueError):
    pass


def substream(seed: int, *key: int) -> np.random.Generator:
    """Independent generator for the substream ``key`` of root ``seed``.

    Keys are hashed together with the seed by ``SeedSequence``, so distinct
    keys give statistically independent streams regardless of the order in
    which they are requested.
    """
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=tuple(key)))


@dataclass(frozen=True)
class InitSpec:
    """Distribution of the initial weights v0 (entry-wise i.i.d.)."""

    kind: str = "ones"
    stddev: float | None = None
    c: float | None = None

    def __post_init__(self):
        if self.kind not in INIT_KINDS:
            raise ValueError(f"unknown init kind {self.kind!r}")
        if self.kind == "gaussian" and not (self.stddev is not None and self.stddev > 0):
            raise ValueError("gaussian init needs stddev > 0")
        if self.kind == "constant" and (self.c is None or self.c == 0 or not np.isfinite(self.c)):
            raise ValueError("constant init needs a finite nonzero c")

    def draw(self, shape, rng: np.random.Generator) -> np.ndarray:
        if self.kind == "ones":
            return np.ones(shape)
        if self.kind == "constant":
            return np.full(shape, float(self.c))
        return rng.normal(0.0, self.stddev, size=shape)

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {"kind": self.kind}
        if self.kind == "gaussian":
            out["stddev"] = self.stddev
        if self.kind == "constant":
            out["c"] = self.c
        return out


@dataclass(frozen=True)
class PriorSpec:
    """Joint law of one (v0-block, theta*-block) pair.

    ``particle_file`` priors carry both coordinates in the file, so they take
    no ``init``.
    """

    kind: str
    p: float | None = None
    mean: float | None = None
    stddev: float | None = None
    theta_value: float | None = None
    path: str | None = None
    init: InitSpec | None = field(default_factory=InitSpec)

    def __post_init__(self):
        if self.kind not in PRIOR_KINDS:
            raise ValueError(f"unknown prior kind {self.kind!r}")
        if self.kind in ("bernoulli", "group_bernoulli"):
            if self.p is None or not 0.0 <= self.p <= 1.0:
                raise ValueError(f"p must lie in [0, 1], got {self.p}")
        if self.kind == "gaussian":
            if self.mean is None or self.stddev is None or self.stddev < 0:
                raise ValueError("gaussian prior needs mean and stddev >= 0")
        if self.kind == "point_mass" and (self.theta_value is None or not np.isfinite(self.theta_value)):
            raise ValueError("point_mass needs a finite theta_value")
        if self.kind == "particle_file":
            if not self.path:
                raise ValueError("particle_file needs a path")
            if self.init is not None:
                raise ValueError("particle_file priors take v0 from the file; init must be omitted")
        elif self.init is None:
            raise ValueError("init is required")

    @property
    def guarantee_flag(self) -> str:
        # theta* must be bounded; gaussian entries are not
        if self.kind == "gaussian" and self.stddev > 0:
            return OUTSIDE
        return WITHIN

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {"kind": self.kind}
        for name in ("p", "mean", "stddev", "theta_value", "path"):
            value = getattr(self, name)
            if value is not None:
                out[name] = value
        if self.init is not None:
            out["init"] = self.init.to_dict()
        return out


@dataclass
class ParticleCloud:
    """Finite sample of paired (V, Theta) blocks, each of shape (count, b)."""

    v_blocks: np.ndarray
    theta_blocks: np.ndarray

    def __post_init__(self):
        self.v_blocks = np.asarray(self.v_blocks, dtype=np.float64)
        self.theta_blocks = np.asarray(self.theta_blocks, dtype=np.float64)
        if self.v_blocks.ndim == 1:
            self.v_blocks = self.v_blocks[:, None]
        if self.theta_blocks.ndim == 1:
            self.theta_blocks = self.theta_blocks[:, None]
        if self.v_blocks.shape != self.theta_blocks.shape or self.v_blocks.ndim != 2:
            raise ValueError(
                f"paired blocks must share a (count, b) shape, got {self.v_blocks.shape} "
                f"and {self.theta_blocks.shape}"
            )
        if self.count == 0:
            raise ValueError("particle cloud is empty")

    @property
    def count(self) -> int:
        return self.v_blocks.shape[0]

    @property
    def b(self) -> int:
        return self.v_blocks.shape[1]

    def permuted(self, order: np.ndarray) -> "ParticleCloud":
        return ParticleCloud(self.v_blocks[order], self.theta_blocks[order])


@dataclass(frozen=True)
class ExperimentConfig:
    n: int
    d: int
    sigma: float
    lam: float
    b: int
    T: int
    trials: int
    seed: int
    psi: ReweightSpec
    prior: PriorSpec
    metrics: tuple[str, ...] = ("l1_error",)
    particles: int = DEFAULT_PARTICLES
    # ReweightSpec parameters filled from package defaults rather than the document
    psi_defaults: tuple[str, ...] = ()

    def __post_init__(self):
        _check_positive_int("n", self.n)
        _check_positive_int("d", self.d)
        _check_positive_int("b", self.b)
        _check_positive_int("T", self.T, allow_zero=True)
        _check_positive_int("trials", self.trials)
        _check_positive_int("particles", self.particles)
        if self.d % self.b:
            raise ConfigError("d", f"d not divisible by b ({self.d} % {self.b} != 0)")
        if not (np.isfinite(self.lam) and self.lam > 0):
            raise ConfigError("lambda", f"must be positive, got {self.lam}")
        if not (np.isfinite(self.sigma) and self.sigma >= 0):
            raise ConfigError("sigma", f"must be non-negative, got {self.sigma}")
        if isinstance(self.seed, bool) or not isinstance(self.seed, (int, np.integer)) or not 0 <= self.seed < 2**64:
            raise ConfigError("seed", f"must be an unsigned 64-bit integer, got {self.seed!r}")
        if not self.metrics:
            raise ConfigError("metrics", "must name at least one metric")
        for i, m in enumerate(self.metrics):
            if m not in METRICS:
                raise ConfigError(f"metrics[{i}]", f"unknown metric {m!r}; expected one of {METRICS}")

    @property
    def kappa(self) -> float:
        return self.d / self.n

    @property
    def M(self) -> int:
        return self.d // self.b

    def with_(self, **changes) -> "ExperimentConfig":
        return replace(self, **changes)

    def experiment_dict(self) -> dict[str, Any]:
        """Fields that define the experiment (excludes seed, trials, particles)."""
        return {
            "n": self.n,
            "d": self.d,
            "sigma": self.sigma,
            "lambda": self.lam,
            "b": self.b,
            "T": self.T,
            "psi": self.psi.to_dict(),
            "prior": self.prior.to_dict(),
            "metrics": list(self.metrics),
        }

    def to_dict(self) -> dict[str, Any]:
        out = self.experiment_dict()
        out.update(trials=self.trials, seed=self.seed, particles=self.particles)
        return out

    @property
    def config_hash(self) -> str:
        canon = json.dumps(self.experiment_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode()).hexdigest()[:16]

    def guarantee_flags(self) -> dict[str, str]:
        flags = {"psi": self.psi.guarantee_flag, "prior": self.prior.guarantee_flag}
        for m in self.metrics:
            flags[f"metric:{m}"] = METRIC_GUARANTEE[m]
        return flags

    def metadata(self) -> dict[str, Any]:
        meta: dict[str, Any] = {
            "config_hash": self.config_hash,
            "seed": self.seed,
            "guarantee": self.guarantee_flags(),
            "psi": self.psi.to_dict(),
        }
        if self.psi_defaults:
            meta["psi_package_defaults"] = list(self.psi_defaults)
        return meta


def _check_positive_int(name: str, value, allow_zero: bool = False):
    if isinstance(value, bool) or not isinstance(value, (int, np.integer)):
        raise ConfigError(name, f"must be an integer, got {value!r}")
    if value < 0 or (value == 0 and not allow_zero):
        raise ConfigError(name, f"must be positive, got {value}")


_REQUIRED = ("n", "d", "sigma", "lambda", "b", "T", "trials", "seed", "psi", "prior")
_OPTIONAL = ("metrics", "particles", "kappa")


def _number(doc: Mapping[str, Any], key: str, path: str) -> float:
    if key not in doc:
        raise ConfigError(f"{path}{key}", "missing field")
    value = doc[key]
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{path}{key}", f"must be a number, got {value!r}")
    return float(value)


def _parse_init(doc: Any) -> InitSpec:
    path = "prior.init"
    if not isinstance(doc, Mapping) or "kind" not in doc:
        raise ConfigError(path, "must be an object with a 'kind'")
    kind = doc["kind"]
    extra = set(doc) - {"kind", "stddev", "c"}
    if extra:
        raise ConfigError(path, f"unexpected keys {sorted(extra)}")
    try:
        if kind == "gaussian":
            return InitSpec(kind, stddev=_number(doc, "stddev", path + "."))
        if kind == "constant":
            return InitSpec(kind, c=_number(doc, "c", path + "."))
        return InitSpec(kind)
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(path, str(exc)) from None


def _parse_prior(doc: Any, base_dir: Path | None) -> PriorSpec:
    path = "prior"
    if not isinstance(doc, Mapping) or "kind" not in doc:
        raise ConfigError(path, "must be an object with a 'kind'")
    kind = doc["kind"]
    allowed = {
        "bernoulli": {"p"},
        "group_bernoulli": {"p"},
        "gaussian": {"mean", "stddev"},
        "point_mass": {"theta_value"},
        "particle_file": {"path"},
    }
    if kind not in allowed:
        raise ConfigError(f"{path}.kind", f"unknown prior {kind!r}; expected one of {PRIOR_KINDS}")
    keys = allowed[kind] | {"kind"} | ({"init"} if kind != "particle_file" else set())
    extra = set(doc) - keys
    if extra:
        raise ConfigError(path, f"unexpected keys {sorted(extra)} for prior {kind!r}")
    kwargs: dict[str, Any] = {}
    for key in sorted(allowed[kind]):
        if key == "path":
            if not isinstance(doc.get("path"), str):
                raise ConfigError("prior.path", "must be a string")
            p = Path(doc["path"])
            if base_dir is not None and not p.is_absolute():
                p = base_dir / p
            kwargs["path"] = str(p)
        else:
            kwargs[key] = _number(doc, key, "prior.")
    if kind == "particle_file":
        kwargs["init"] = None
    else:
        if "init" not in doc:
            raise ConfigError("prior.init", "missing field")
        kwargs["init"] = _parse_init(doc["init"])
    try:
        return PriorSpec(kind, **kwargs)
    except ValueError as exc:
        raise ConfigError(path, str(exc)) from None


def config_from_dict(doc: Mapping[str, Any], base_dir: Path | None = None) -> ExperimentConfig:
    """Validate a decoded JSON document and build the configuration."""
    if not isinstance(doc, Mapping):
        raise ConfigError("", "config document must be a JSON object")
    for key in _REQUIRED:
        if key not in doc:
            raise ConfigError(key, "missing field")
    extra = set(doc) - set(_REQUIRED) - set(_OPTIONAL)
    if extra:
        raise ConfigError("", f"unexpected keys {sorted(extra)}")

    psi_doc = doc["psi"]
    try:
        psi = ReweightSpec.from_dict(psi_doc)
    except ValueError as exc:
        raise ConfigError("psi", str(exc)) from None
    psi_defaults: tuple[str, ...] = ()
    if psi.kind == "irls_eps_alpha":
        given = psi_doc if isinstance(psi_doc, Mapping) else {}
        psi_defaults = tuple(k for k in ("eps", "alpha") if k not in given)

    metrics = doc.get("metrics", ["l1_error"])
    if isinstance(metrics, str) or not isinstance(metrics, (list, tuple)):
        raise ConfigError("metrics", "must be a list of metric names")

    cfg = ExperimentConfig(
        n=doc["n"],
        d=doc["d"],
        sigma=_number(doc, "sigma", ""),
        lam=_number(doc, "lambda", ""),
        b=doc["b"],
        T=doc["T"],
        trials=doc["trials"],
        seed=doc["seed"],
        psi=psi,
        prior=_parse_prior(doc["prior"], base_dir),
        metrics=tuple(metrics),
        particles=doc.get("particles", DEFAULT_PARTICLES),
        psi_defaults=psi_defaults,
    )
    if "kappa" in doc and _number(doc, "kappa", "") != cfg.kappa:
        raise ConfigError("kappa", f"inconsistent with d/n = {cfg.kappa}")
    return cfg


def parse_config(text: str, base_dir: Path | None = None) -> ExperimentConfig:
    """Parse a JSON configuration document."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError("", f"invalid JSON: {exc}") from None
    return config_from_dict(doc, base_dir)


def load_config(path: str | Path) -> ExperimentConfig:
    path = Path(path)
    return parse_config(path.read_text(), base_dir=path.parent)


@lru_cache(maxsize=8)
def _read_particle_file(path: str) -> np.ndarray:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise PriorFileError(f"cannot read particle file {path}: {exc}") from None
    rows = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            rows.append([float(x) for x in line.split(",")])
        except ValueError:
            raise PriorFileError(f"{path}:{lineno}: non-numeric entry") from None
        if len(rows[-1]) != len(rows[0]):
            raise PriorFileError(f"{path}:{lineno}: expected {len(rows[0])} columns, got {len(rows[-1])}")
    if not rows:
        raise PriorFileError(f"{path}: no particle rows")
    table = np.array(rows, dtype=np.float64)
    if not np.all(np.isfinite(table)):
        raise PriorFileError(f"{path}: non-finite entries")
    table.setflags(write=False)
    return table


def sample_prior_particles(prior: PriorSpec, b: int, count: int, rng: np.random.Generator) -> ParticleCloud:
    """Draw ``count`` i.i.d. (V0, Theta*) blocks of size ``b`` from the prior."""
    if count < 1:
        raise ValueError("count must be at least 1")
    shape = (count, b)
    if prior.kind == "particle_file":
        table = _read_particle_file(prior.path)
        if table.shape[1] != 2 * b:
            raise PriorFileError(f"{prior.path}: expected {2 * b} columns for b={b}, got {table.shape[1]}")
        # i.i.d. draws from the empirical law of the file rows
        rows = table[rng.integers(0, table.shape[0], size=count)]
        return ParticleCloud(rows[:, :b].copy(), rows[:, b:].copy())

    if prior.kind == "bernoulli":
        theta = (rng.random(shape) < prior.p).astype(np.float64)
    elif prior.kind == "group_bernoulli":
        active = (rng.random((count, 1)) < prior.p).astype(np.float64)
        theta = np.repeat(active, b, axis=1)
    elif prior.kind == "gaussian":
        theta = rng.normal(prior.mean, prior.stddev, size=shape)
    else:
        theta = np.full(shape, float(prior.theta_value))
    v = prior.init.draw(shape, rng)
    return ParticleCloud(v, theta)


def materialize_signal(prior: PriorSpec, d: int, b: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Draw a length-``d`` signal and initial weights as ``d // b`` i.i.d. blocks.

    Returns ``(theta_star, v0)``.
    """
    if d % b:
        raise ValueError(f"d not divisible by b ({d} % {b} != 0)")
    cloud = sample_prior_particles(prior, b, d // b, rng)
    return cloud.theta_blocks.reshape(d), cloud.v_blocks.reshape(d)
