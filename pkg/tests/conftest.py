from pathlib import Path

import numpy as np
import pytest

from floquet_snap.hamiltonians import Operator
from floquet_snap.models import SystemParams

ROOT = Path(__file__).resolve().parents[1]


@pytest.fixture
def default_config_path() -> Path:
    return ROOT / "config" / "default.yaml"


@pytest.fixture
def small_params() -> SystemParams:
    """Reference BBQ parameters on a truncation small enough for unit tests."""
    return SystemParams.from_ghz(4.5, 6.6, 26.0, 0.0053, 0.357, cavity_dim=5, ancilla_dim=6)


@pytest.fixture
def qubit():
    """Two-level system diag(0, omega) with omega = 1 rad/ns, dims (2, 1)."""
    omega = 1.0
    h = Operator(np.diag([0.0, omega]).astype(complex), (2, 1))
    sigma_x = Operator(np.array([[0, 1], [1, 0]], dtype=complex), (2, 1))
    return omega, h, sigma_x
