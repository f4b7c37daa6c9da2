import numpy as np
import pytest

from ldnn.core import config_from_dict

ACCEPTANCE_LINES: list[str] = []


def small_doc(**overrides):
    doc = {
        "n": 60, "d": 240, "sigma": 0.1, "lambda": 0.05, "b": 1, "T": 3,
        "trials": 3, "seed": 7, "particles": 20000,
        "psi": {"kind": "tanh_abs"},
        "prior": {"kind": "bernoulli", "p": 0.05, "init": {"kind": "ones"}},
    }
    doc.update(overrides)
    return doc


@pytest.fixture
def small_config():
    return config_from_dict(small_doc())


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
