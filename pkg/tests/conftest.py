"""Shared fixtures for the homog test suite."""

import numpy as np
import pytest

from homog.config import loader
from homog.field import DomainBox, FieldSpec, MicroCoefficient, synthesize


# ---------------------------------------------------------------------------
# Config isolation: packaged defaults only, fresh cache per module.
# ---------------------------------------------------------------------------

@pytest.fixture(autouse=True, scope="module")
def _isolate_config(tmp_path_factory):
    """Point the user config at an empty location and drop the cached config."""
    mp = pytest.MonkeyPatch()
    missing = tmp_path_factory.mktemp("homog-home") / "config.json"
    mp.setattr(loader, "USER_CONFIG_FILE", missing)
    loader.reset_config()
    yield
    loader.reset_config()
    mp.undo()


# ---------------------------------------------------------------------------
# Fields used across modules
# ---------------------------------------------------------------------------

def linear_field(lower=0.0, upper=1.0, margin=0.2, alpha=1e-9, beta=10.0) -> MicroCoefficient:
    """a_M(z) = z on (lower, upper) with Omega-tilde of the given margin.

    Declared alpha is tiny so points near z = 0 stay admissible.
    """
    omega = DomainBox([lower], [upper])
    return MicroCoefficient(omega, omega.expand(margin), alpha, beta,
                            scalar_fn=lambda z: z[:, 0].copy(), name="linear")


@pytest.fixture
def linear():
    return linear_field()


@pytest.fixture
def sinusoid_1d():
    """2 + sin(2 pi x / 0.1) on (0, 1): harmonic mean sqrt(3), arithmetic 2."""
    return synthesize(FieldSpec("periodic-sinusoid", mean=2.0, amplitude=1.0, period=0.1))


@pytest.fixture
def random_1d():
    return synthesize(FieldSpec("seeded-random", seed=7))


@pytest.fixture
def constant_1d():
    return synthesize(FieldSpec("constant", c=3.0))


def assert_close(a, b, tol):
    assert float(np.max(np.abs(np.asarray(a, dtype=float) - np.asarray(b, dtype=float)))) <= tol
