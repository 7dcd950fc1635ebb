import os
import sys

import pytest

ROOT = os.path.abspath(os.path.join(os.path.dirname(__file__), ".."))
if ROOT not in sys.path:
    sys.path.insert(0, ROOT)

os.environ.setdefault("LOG_LEVEL", "warning")

from hamiltonians.catalog import build_system
from dynamics.integrator import IntegratorConfig


HARMONIC_A = 0.5
HARMONIC_B = 1.0


@pytest.fixture(scope="session")
def harmonic_pair():
    """H = (p^2 + a q^2)/2 driven by L = (a p^2 + (q - b)^2)/2, with seed (0, b/(1 - a^2))"""
    params = {"a": HARMONIC_A, "b": HARMONIC_B}
    inner = build_system("harmonic", params)
    driving = build_system("displaced_oscillator", params)
    return inner, driving


@pytest.fixture(scope="session")
def harmonic_seed_point():
    return [0.0, HARMONIC_B / (1 - HARMONIC_A ** 2)]


@pytest.fixture(scope="session")
def duffing_pair():
    inner = build_system("duffing", {"k": 0.0})
    driving = build_system("displaced_quadratic", {"a": 1.0, "b": 0.5})
    return inner, driving


@pytest.fixture(scope="session")
def tight_cfg():
    return IntegratorConfig(abs_tol=1e-12, rel_tol=1e-12, max_step=0.05)


@pytest.fixture(scope="session")
def loose_cfg():
    return IntegratorConfig(abs_tol=1e-9, rel_tol=1e-9, max_step=0.1)
