import numpy as np
import pytest

from floquet_snap.errors import DimensionError, LabelingError
from floquet_snap.hamiltonians import (
    Operator, bare_state, build_bbq_hamiltonian, cos_nl, coupling_from_chi, destroy, dressed_parameters,
    drive_operator, jaynes_cummings_hamiltonian, label_eigensystem, static_system,
)
from floquet_snap.models import DressedParams, SystemParams
from floquet_snap.units import TWO_PI, ghz, mhz


def test_destroy_commutator_below_truncation():
    a = destroy(6)
    commutator = a @ a.conj().T - a.conj().T @ a
    np.testing.assert_allclose(np.diag(commutator)[:-1], 1.0)


def test_cos_nl_matches_series_for_small_argument():
    x = 0.05 * np.array([[0.0, 1.0], [1.0, 0.0]])
    # cos(x) - 1 + x^2/2 = x^4/24 + O(x^6)
    np.testing.assert_allclose(cos_nl(x), np.linalg.matrix_power(x, 4) / 24.0, atol=1e-10)


def test_bbq_hamiltonian_is_hermitian(small_params):
    h = build_bbq_hamiltonian(small_params)
    assert h.is_hermitian()
    assert h.matrix.shape == (30, 30)


def test_bbq_rejects_small_ancilla():
    params = SystemParams.from_ghz(4.5, 6.6, 26.0, 0.0053, 0.357, cavity_dim=4, ancilla_dim=3)
    with pytest.raises(DimensionError):
        build_bbq_hamiltonian(params)


def test_operator_shape_checked():
    with pytest.raises(DimensionError):
        Operator(np.eye(3, dtype=complex), (2, 2))


def test_drive_operators(small_params):
    dims = small_params.dims
    x = drive_operator("ancilla", dims).matrix
    assert np.vdot(bare_state(dims, 1, 2), x @ bare_state(dims, 0, 2)) == pytest.approx(1.0)
    c = drive_operator("cavity", dims).matrix
    assert np.vdot(bare_state(dims, 0, 3), c @ bare_state(dims, 0, 2)) == pytest.approx(np.sqrt(3.0))


def test_labels_of_diagonal_hamiltonian():
    dims = (3, 2)
    h = Operator(np.diag(np.arange(6, dtype=float) ** 1.5).astype(complex), dims)
    eig = label_eigensystem(h)
    for m in range(3):
        for n in range(2):
            assert eig.index((m, n)) == m * 2 + n
    with pytest.raises(LabelingError):
        eig.index((3, 0))


def test_small_bbq_dressed_parameters(small_params):
    _, eig, dressed = static_system(small_params)
    assert not np.any(eig.ambiguous[[eig.index((m, n), strict=False) for m in range(4) for n in range(2)]])
    assert dressed.omega_q < small_params.omega_q_bare
    assert dressed.alpha < 0
    assert dressed.chi_0 < 0


def test_jaynes_cummings_dispersive_shift():
    omega_q, omega_c, alpha = ghz(6.0), ghz(4.5), mhz(-230.0)
    delta = omega_q - omega_c
    g = 0.02 * delta
    h = jaynes_cummings_hamiltonian(omega_q, alpha, omega_c, g, (4, 3))
    dressed = dressed_parameters(h)
    expected = 2 * g ** 2 * alpha / (delta * (delta + alpha))
    assert dressed.chi_0 == pytest.approx(expected, rel=0.05)
    assert coupling_from_chi(dressed) == pytest.approx(g, rel=0.05)


def test_dressed_report_units():
    dressed = DressedParams(omega_q=ghz(6.4), omega_c=ghz(4.5), alpha=mhz(-230.0), chi_0=mhz(-0.14))
    report = dressed.report()
    assert report["omega_q_GHz"] == pytest.approx(6.4)
    assert report["abs_chi_0_MHz"] == pytest.approx(0.14)
    assert dressed.delta == pytest.approx(TWO_PI * 1.9)
