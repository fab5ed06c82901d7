from dataclasses import replace

import numpy as np
import pytest

from floquet_snap.errors import BrillouinWindowError, FitQualityError
from floquet_snap.floquet import (
    PeriodicHamiltonian, continue_labels, decompose, degenerate_quasienergies, dispersive_shift_sweep,
    fit_sideband_params, fourier_coefficients, matrix_elements,
    matrix_elements_auto, monodromy, sideband_overlap_model, unitarity_error,
)
from floquet_snap.hamiltonians import build_bbq_hamiltonian, dressed_parameters
from floquet_snap.units import ghz, mhz


def test_resonant_rabi_splitting(qubit):
    omega, h, sigma_x = qubit
    amplitude = 1e-3 * omega
    ham = PeriodicHamiltonian.from_operators(h, sigma_x, amplitude, omega)
    decomp = decompose(ham)
    d = abs(decomp.quasienergies[1] - decomp.quasienergies[0])
    assert min(d, omega - d) == pytest.approx(amplitude, rel=1e-3)


def test_monodromy_is_unitary(qubit):
    omega, h, sigma_x = qubit
    u = monodromy(h, sigma_x, 0.3 * omega, 1.7 * omega)
    assert unitarity_error(u.matrix) < 1e-9


def undriven(qubit, omega_d=0.3):
    _, h, sigma_x = qubit
    ham = PeriodicHamiltonian.from_operators(h, sigma_x, 0.0, omega_d)
    return decompose(ham, samples=32), sigma_x


def folded_distance(a, b, omega_d):
    return abs(np.mod(a - b + omega_d / 2, omega_d) - omega_d / 2)


def test_undriven_quasienergies_fold_static_energies(qubit):
    decomp, _ = undriven(qubit)
    assert folded_distance(decomp.quasienergy((0, 0)), 0.0, 0.3) < 1e-9
    assert folded_distance(decomp.quasienergy((1, 0)), 1.0, 0.3) < 1e-9
    assert np.all(decomp.overlaps > 0.999)


def test_undriven_matrix_element(qubit):
    decomp, sigma_x = undriven(qubit)
    table = matrix_elements(sigma_x, decomp, (-5, 5))
    element = table.element((0, 0), (1, 0))
    assert element.transition_freq == pytest.approx(1.0, abs=1e-9)
    assert abs(element.value) == pytest.approx(1.0, abs=1e-6)
    assert abs(element.value) <= np.linalg.norm(sigma_x.matrix, 2) + 1e-12


def test_narrow_window_raises(qubit):
    decomp, sigma_x = undriven(qubit)
    with pytest.raises(BrillouinWindowError):
        matrix_elements(sigma_x, decomp, (0, 0))


def test_window_widens_automatically(qubit):
    decomp, sigma_x = undriven(qubit)
    table = matrix_elements_auto(sigma_x, decomp, k_window=1)
    assert table.window[1] >= 4
    assert table.element((0, 0), (1, 0)).transition_freq == pytest.approx(1.0, abs=1e-9)


def test_sideband_fit_recovers_parameters():
    rate, omega_0 = mhz(5.3), ghz(7.56)
    grid = omega_0 + np.linspace(-mhz(40.0), mhz(40.0), 41)
    overlap = sideband_overlap_model(grid, rate, omega_0)
    fit = fit_sideband_params(grid, overlap)
    assert fit.rate == pytest.approx(rate, rel=1e-3)
    assert fit.omega_0 == pytest.approx(omega_0, abs=mhz(0.1))
    assert fit.rms_residual < 1e-3


def test_sideband_fit_rejects_noise():
    rng = np.random.default_rng(7)
    grid = ghz(7.56) + np.linspace(-mhz(40.0), mhz(40.0), 41)
    with pytest.raises(FitQualityError):
        fit_sideband_params(grid, rng.uniform(0.0, 1.0, len(grid)))


def test_undriven_sweep_reproduces_static_chi(small_params):
    dressed = dressed_parameters(build_bbq_hamiltonian(small_params))
    sweep = dispersive_shift_sweep(small_params, 0.0, [ghz(7.5), ghz(7.6)], n_max=1, samples=16, max_workers=2)
    np.testing.assert_allclose(sweep.chi_d, dressed.chi_0, atol=1e-9)
    assert sweep.valid.all()
    frame = sweep.to_frame()
    assert list(frame.columns) == ["omega_d_GHz", "n", "delta_omega_q_MHz", "chi_d_MHz", "valid_flag"]
    assert len(frame) == 4


def driven(qubit, phase=0.0):
    _, h, sigma_x = qubit
    ham = PeriodicHamiltonian.from_operators(h, sigma_x, 0.1, 0.7, phase)
    return decompose(ham), sigma_x


PAIRS = [((0, 0), (1, 0)), ((1, 0), (0, 0)), ((0, 0), (0, 0)), ((1, 0), (1, 0))]


def test_drive_phase_leaves_matrix_elements_invariant(qubit):
    base, sigma_x = driven(qubit)
    shifted, _ = driven(qubit, phase=1.3)
    for label in [(0, 0), (1, 0)]:
        assert folded_distance(base.quasienergy(label), shifted.quasienergy(label), 0.7) < 1e-8
    table = matrix_elements_auto(sigma_x, base)
    other = matrix_elements_auto(sigma_x, shifted)
    for pair in PAIRS:
        a, b = table.element(*pair), other.element(*pair)
        assert abs(a.value) == pytest.approx(abs(b.value), abs=1e-7)
        assert a.k_max == b.k_max
        assert a.transition_freq == pytest.approx(b.transition_freq, abs=1e-8)


def test_quasienergy_folding_shifts_brillouin_index(qubit):
    base, sigma_x = driven(qubit)
    j = base.index((1, 0))
    moved = base.quasienergies.copy()
    moved[j] += base.omega_d
    folded = replace(base, quasienergies=moved)

    window = (-8, 8)
    table = matrix_elements(sigma_x, base, window)
    other = matrix_elements(sigma_x, folded, window)
    for pair, shift in [(((0, 0), (1, 0)), 1), (((1, 0), (0, 0)), -1), (((0, 0), (0, 0)), 0)]:
        a, b = table.element(*pair), other.element(*pair)
        assert b.k_max == a.k_max + shift
        assert b.value == pytest.approx(a.value, abs=1e-10)
        assert b.transition_freq == pytest.approx(a.transition_freq, abs=1e-9)


def test_hermitian_operator_coefficients_are_conjugate_symmetric(qubit):
    decomp, sigma_x = driven(qubit)
    ks = np.arange(-6, 7)
    coeffs, _ = fourier_coefficients(sigma_x.matrix, decomp, ks)
    np.testing.assert_allclose(coeffs, np.conj(coeffs[::-1].transpose(0, 2, 1)), atol=1e-12)

    table = matrix_elements(sigma_x, decomp, (-6, 6))
    up, down = table.element((0, 0), (1, 0)), table.element((1, 0), (0, 0))
    assert down.value == pytest.approx(np.conj(up.value), abs=1e-12)
    assert down.k_max == -up.k_max


def test_fourier_power_is_captured_by_window(qubit):
    decomp, sigma_x = driven(qubit)
    coeffs, power = fourier_coefficients(sigma_x.matrix, decomp, np.arange(-8, 9))
    assert np.max(np.abs(np.sum(np.abs(coeffs) ** 2, axis=0) - power)) < 1e-6


def test_degenerate_quasienergies_across_zone_boundary():
    mask = degenerate_quasienergies(np.array([0.0, 0.3, 0.5 - 1e-12]), 0.5)
    np.testing.assert_array_equal(mask, [True, False, True])
    mask = degenerate_quasienergies(np.array([0.1, 0.3, 0.1 + 1e-12]), 0.5)
    np.testing.assert_array_equal(mask, [True, False, True])
    assert not degenerate_quasienergies(np.array([0.1, 0.3]), 0.5).any()


def test_commensurate_undriven_levels_are_degenerate(qubit):
    _, h, sigma_x = qubit
    decomp = decompose(PeriodicHamiltonian.from_operators(h, sigma_x, 0.0, 0.5), samples=16)
    assert decomp.degenerate.all()


def rotation(theta):
    return np.array([[np.cos(theta), -np.sin(theta)], [np.sin(theta), np.cos(theta)]], dtype=complex)


def static_fallback(vectors):
    return {(0, 0): int(np.argmax(np.abs(vectors[0]))), (1, 0): int(np.argmax(np.abs(vectors[1])))}


def test_labels_follow_modes_through_anticrossing():
    previous = {(0, 0): np.array([1.0, 0.0], dtype=complex), (1, 0): np.array([0.0, 1.0], dtype=complex)}
    for theta in np.linspace(0.0, np.pi / 2, 16):
        vectors = rotation(theta)
        assigned, broken = continue_labels(previous, vectors, static_fallback(vectors), threshold=0.5)
        assert not broken
        previous = {label: vectors[:, j] for label, j in assigned.items()}
    # Past the crossing static overlap swaps the labels, tracking does not
    assert static_fallback(vectors) == {(0, 0): 1, (1, 0): 0}
    assert assigned == {(0, 0): 0, (1, 0): 1}


def test_labels_fall_back_to_static_when_continuity_fails():
    previous = {(0, 0): np.array([1.0, 0.0], dtype=complex), (1, 0): np.array([0.0, 1.0], dtype=complex)}
    vectors = rotation(np.pi / 4)
    fallback = {(0, 0): 1, (1, 0): 0}
    assigned, broken = continue_labels(previous, vectors, fallback, threshold=0.6)
    assert broken == {(0, 0), (1, 0)}
    assert assigned == fallback
