import os

import pytest

from qbm.models import database
from qbm.services import registry
from qbm.services.bath import discretize
from qbm.services.spectral import (
    BetaKind, BetaSchedule, CutoffShape, PhysicalParams, SpectralModel, SpectrumKind,
)


@pytest.fixture(autouse=True)
def registry_db(tmp_path):
    """Every test gets its own SQLite registry file."""
    database.configure(f"sqlite:///{os.path.join(tmp_path, 'runs.db')}")
    registry.reset()
    yield
    database.configure("")
    registry.reset()


@pytest.fixture
def params():
    return PhysicalParams()


@pytest.fixture
def ohmic():
    return SpectralModel(kind=SpectrumKind.OHMIC, gamma=0.1, Lambda=5.0)


@pytest.fixture
def supra():
    return SpectralModel(
        kind=SpectrumKind.SUPRA_OHMIC, gamma=0.1, Lambda=5.0, exponent=3.0, omega_ref=1.0,
    )


@pytest.fixture
def sharp():
    return SpectralModel(kind=SpectrumKind.OHMIC, gamma=0.1, Lambda=5.0, cutoff_shape=CutoffShape.SHARP)


@pytest.fixture
def classical(params):
    return BetaSchedule(kind=BetaKind.CLASSICAL, params=params)


@pytest.fixture
def quantum(params):
    return BetaSchedule(kind=BetaKind.QUANTUM, params=params)


@pytest.fixture
def small_grid(ohmic, params):
    return discretize(ohmic, 32, omega_max=25.0, params=params)

