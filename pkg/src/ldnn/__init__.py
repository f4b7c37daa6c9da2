"""Batched reweighted least squares on Hadamard-parameterized linear models.

The package pairs a finite-size simulator of the alternating
weighted-ridge / reweighting algorithm with its high-dimensional
state-evolution predictor.
"""

__version__ = "0.1.0"
TOOL_NAME = "ldnn"

from ldnn.core import (  # noqa: E402
    ConfigError,
    ExperimentConfig,
    InitSpec,
    ParticleCloud,
    PriorSpec,
    materialize_signal,
    parse_config,
    sample_prior_particles,
)
from ldnn.reweight import ReweightSpec, apply_psi, guarantee_of  # noqa: E402

__all__ = [
    "ConfigError",
    "ExperimentConfig",
    "InitSpec",
    "ParticleCloud",
    "PriorSpec",
    "ReweightSpec",
    "apply_psi",
    "guarantee_of",
    "materialize_signal",
    "parse_config",
    "sample_prior_particles",
]
