import numpy as np
import pandas as pd
import pytest
from scipy import constants

from floquet_snap.dynamics import (
    FOCK_ALPHAS, displacement_operator, fock_fidelity, gate_fidelity, ideal_fock_preparation, snap_operator,
)
from floquet_snap.errors import ConfigurationError, InvalidStateError, ReducibleChainError
from floquet_snap.floquet import PeriodicHamiltonian, decompose
from floquet_snap.models import NoiseSpec
from floquet_snap.open_systems import (
    QuantumChannel, bose_factor, build_fm_rate_table, channel_tomography, check_density_matrix, extract_rate,
    fm_propagate, fm_qubit_ramsey, lindblad_propagate, open_fock_preparation, open_gate_fidelity, pathway_populations,
    purcell_sweep, steady_state, steady_state_excitation, unitary_channel,
)
from floquet_snap.qoc import QocModel, optimize, propagate_model, spline_basis
from floquet_snap.units import TWO_PI, ghz, mhz


def test_bose_factor():
    x = constants.h * 6e9 / (constants.k * 0.05)
    assert bose_factor(TWO_PI * 6.0, 0.05) == pytest.approx(1.0 / np.expm1(x), rel=1e-12)
    assert bose_factor(TWO_PI * 6.0, 0.05) == pytest.approx(3.164e-3, rel=1e-3)
    assert bose_factor(TWO_PI * 6.0, 0.0) == 0.0
    np.testing.assert_array_equal(bose_factor(np.array([-1.0, 0.0]), 0.05), [0.0, 0.0])


def undriven_table(qubit, noise, omega_d=5.0):
    _, h, sigma_x = qubit
    decomp = decompose(PeriodicHamiltonian.from_operators(h, sigma_x, 0.0, omega_d))
    return build_fm_rate_table(decomp, sigma_x, noise)


def test_floquet_markov_matches_lindblad_without_drive(qubit):
    _, h, _ = qubit
    gamma = 0.01
    table = undriven_table(qubit, NoiseSpec(j0=gamma / TWO_PI))
    times = np.linspace(0.0, 300.0, 31)

    excited = np.diag([0.0, 1.0]).astype(complex)
    fm = fm_propagate(excited, table, times)
    lowering = np.sqrt(gamma) * np.array([[0, 1], [0, 0]], dtype=complex)
    lindblad = lindblad_propagate(excited, h, [], [lowering], times)
    np.testing.assert_allclose(fm.population((1, 0)), np.real(lindblad.states[:, 1, 1]), atol=1e-8)
    np.testing.assert_allclose(fm.population((1, 0)), np.exp(-gamma * times), atol=1e-8)

    superposition = np.full((2, 2), 0.5, dtype=complex)
    coherence = np.abs(fm_propagate(superposition, table, times).coherence((0, 0), (1, 0)))
    np.testing.assert_allclose(coherence, 0.5 * np.exp(-0.5 * gamma * times), atol=1e-8)


def test_thermal_steady_state_obeys_detailed_balance(qubit):
    omega, _, _ = qubit
    temperature = 0.05
    table = undriven_table(qubit, NoiseSpec(j0=0.01, temperature=temperature))
    p = steady_state(table)
    x = constants.hbar * omega * 1e9 / (constants.k * temperature)
    assert p[table.index((1, 0))] / p[table.index((0, 0))] == pytest.approx(np.exp(-x), rel=1e-6)
    assert steady_state_excitation(table) == pytest.approx(np.exp(-x) / (1 + np.exp(-x)), rel=1e-6)


def test_disconnected_chain_has_no_unique_steady_state(qubit):
    table = undriven_table(qubit, NoiseSpec(j0=0.0))
    with pytest.raises(ReducibleChainError):
        steady_state(table)


def test_rate_table_frame(qubit):
    table = undriven_table(qubit, NoiseSpec(j0=0.01 / TWO_PI))
    frame = table.to_frame(min_rate=1e-6)
    assert len(frame) == 1
    assert list(frame.columns) == ["a_label", "b_label", "k", "gap_GHz", "gamma_per_us"]
    row = frame.iloc[0]
    assert (row["a_label"], row["b_label"]) == ("e0", "g0")
    assert row["gamma_per_us"] == pytest.approx(10.0)


@pytest.mark.parametrize("include, expected", [(True, 0.05), (False, 0.03)])
def test_driven_qubit_ramsey(include, expected):
    result = fm_qubit_ramsey(ghz(1.0), ghz(1.0), ghz(0.1), 0.04 / TWO_PI, 100.0, 201, include)
    assert result.analytic_rate == pytest.approx(expected)
    assert result.fitted_rate == pytest.approx(expected, rel=0.05)


def test_extract_single_rate_with_offset():
    t = np.linspace(0.0, 200.0, 81)
    fit = extract_rate(t, 0.7 * np.exp(-0.02 * t) + 0.1, "single", with_offset=True)
    assert fit.rates["rate"] == pytest.approx(0.02, rel=1e-6)
    assert fit.rates["offset"] == pytest.approx(0.1, abs=1e-8)
    assert fit.rms_residual < 1e-8


def test_extract_pathway_rates():
    t = np.linspace(0.0, 10000.0, 201)
    truth = {"gamma_ce": 1e-3, "gamma_q": 5e-4, "gamma_cg": 2e-4}
    data = pathway_populations(t, **truth)
    fit = extract_rate(t, data, "pathway", guess={k: 1.5 * v for k, v in truth.items()})
    for name, value in truth.items():
        assert fit.rates[name] == pytest.approx(value, rel=1e-4)


def test_pathway_initial_slopes():
    p_e1, p_f0, p_g1 = pathway_populations(np.array([0.0, 1e-3]), 1e-3, 5e-4, 2e-4)
    assert p_e1[0] == 1.0
    assert p_f0[1] / 1e-3 == pytest.approx(1e-3, rel=1e-4)
    assert p_g1[1] / 1e-3 == pytest.approx(5e-4, rel=1e-4)


def test_pathway_equal_rates_are_continuous():
    t = np.array([50.0])
    _, _, at = pathway_populations(t, 1e-3, 1e-3, 2e-3)
    _, _, near = pathway_populations(t, 1e-3, 1e-3, 2e-3 * (1 + 1e-7))
    assert at[0] == pytest.approx(near[0], rel=1e-5)


def random_unitary(n, seed):
    rng = np.random.default_rng(seed)
    q, r = np.linalg.qr(rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n)))
    return q * (np.diag(r) / np.abs(np.diag(r)))


def test_channels_compose_and_tomograph():
    u, v = random_unitary(3, 1), random_unitary(3, 2)
    np.testing.assert_allclose((unitary_channel(u) @ unitary_channel(v)).matrix, unitary_channel(u @ v).matrix,
                               atol=1e-12)
    rho = np.diag([0.5, 0.3, 0.2]).astype(complex)
    np.testing.assert_allclose(unitary_channel(u).apply(rho), u @ rho @ u.conj().T, atol=1e-12)

    measured = channel_tomography(lambda r: u @ r @ u.conj().T, 3, lambda b: b, lambda r: r, max_workers=2)
    np.testing.assert_allclose(measured.matrix, unitary_channel(u).matrix, atol=1e-12)

    with pytest.raises(ConfigurationError):
        QuantumChannel(np.eye(4), 3)


def test_open_gate_fidelity_reduces_to_closed_fidelity():
    u = random_unitary(3, 4)
    target = snap_operator({0: np.pi}, 3)
    reference = QuantumChannel(np.eye(9, dtype=complex), 3)
    assert open_gate_fidelity(unitary_channel(u), reference, target) == pytest.approx(gate_fidelity(target, u))
    assert open_gate_fidelity(unitary_channel(target), reference, target) == pytest.approx(1.0)


def test_check_density_matrix():
    check_density_matrix(np.diag([0.25, 0.75]).astype(complex))
    with pytest.raises(InvalidStateError):
        check_density_matrix(np.array([[0.5, 0.1], [0.2, 0.5]], dtype=complex))
    with pytest.raises(InvalidStateError):
        check_density_matrix(np.eye(2, dtype=complex))
    with pytest.raises(InvalidStateError):
        check_density_matrix(np.diag([1.5, -0.5]).astype(complex))


def test_purcell_sweep_follows_dispersive_formula():
    grid = [mhz(-1000.0), mhz(-600.0), mhz(600.0), mhz(1000.0)]
    sweep = purcell_sweep(ghz(6.0), mhz(-300.0), mhz(30.0), 1.0, grid, max_workers=2)
    assert sweep.valid.all()
    np.testing.assert_allclose(sweep.ground_rate, sweep.ground_analytic, rtol=0.05)
    np.testing.assert_allclose(sweep.excited_rate[[0, 3]], sweep.excited_analytic[[0, 3]], rtol=0.1)
    np.testing.assert_allclose(sweep.ground_lindblad, sweep.ground_rate, rtol=0.02)
    np.testing.assert_allclose(sweep.excited_lindblad, sweep.excited_rate, rtol=0.02)

    frame = sweep.to_frame()
    assert isinstance(frame, pd.DataFrame)
    assert frame["valid_flag"].all()
    assert frame["gamma_excited_lindblad_per_us"].notna().all()


def test_purcell_lindblad_subset():
    grid = [mhz(-1000.0), mhz(-600.0), mhz(600.0), mhz(1000.0)]
    sweep = purcell_sweep(ghz(6.0), mhz(-300.0), mhz(30.0), 1.0, grid, lindblad_points=1, max_workers=2)
    assert np.isfinite(sweep.ground_lindblad[0]) and np.isfinite(sweep.excited_lindblad[0])
    assert np.isnan(sweep.ground_lindblad[1:]).all()
    assert np.isnan(purcell_sweep(ghz(6.0), mhz(-300.0), mhz(30.0), 1.0, grid, lindblad_points=0,
                                  max_workers=2).excited_lindblad).all()


def test_excited_photon_loss_depends_on_detuning_side():
    sweep = purcell_sweep(ghz(6.0), mhz(-300.0), mhz(30.0), 1.0, [mhz(-600.0), mhz(600.0)], max_workers=2)
    assert sweep.excited_lindblad[0] < 0.5 * sweep.ground_lindblad[0]
    assert sweep.excited_lindblad[1] > 2.0 * sweep.ground_lindblad[1]


def snap_ladder(n_c):
    """g_n <-> e_n transitions at 50 MHz + n 10 MHz with unit matrix elements."""
    labels = [(m, n) for m in range(4) for n in range(n_c)]
    rows = [labels.index((0, n)) for n in range(n_c)]
    cols = [labels.index((1, n)) for n in range(n_c)]
    freqs = [TWO_PI * (0.05 + 0.01 * n) for n in range(n_c)]
    return QocModel(labels, np.array(rows), np.array(cols), np.ones(n_c, dtype=complex), np.array(freqs),
                    TWO_PI * 0.05, n_c, False)


def test_noiseless_fock_preparation_is_unitary():
    model = snap_ladder(6)
    t_g, n_interior = 200.0, 4
    pulse = optimize(model, t_g, np.eye(6), init="zero", n_interior=n_interior)
    rng = np.random.default_rng(3)
    pulse = pulse.model_copy(update={"i_coefficients": rng.normal(0, 0.01, len(pulse.i_coefficients)).tolist(),
                                     "q_coefficients": rng.normal(0, 0.01, len(pulse.q_coefficients)).tolist()})
    result = open_fock_preparation(model, pulse, NoiseSpec(), t_d=20.0)

    basis = spline_basis(model, n_interior, t_g)
    u = propagate_model(model, basis, *pulse.envelopes(basis.times))
    vacuum = np.zeros(6, dtype=complex)
    vacuum[0] = 1.0
    cavity = displacement_operator(FOCK_ALPHAS[0], 6) @ vacuum
    full = np.zeros(model.dimension, dtype=complex)
    full[model.ground_indices] = cavity
    full = u @ full
    blocks = full.reshape(4, 6)
    expected = sum(np.outer(b, b.conj()) for b in blocks)
    d2 = displacement_operator(FOCK_ALPHAS[1], 6)
    np.testing.assert_allclose(result.cavity_rho, d2 @ expected @ d2.conj().T, atol=1e-10)

    approx = ideal_fock_preparation(6)
    assert result.fidelity_approx == pytest.approx(fock_fidelity(result.cavity_rho, approx))


def test_cavity_loss_mixes_fock_preparation():
    model = snap_ladder(4)
    pulse = optimize(model, 200.0, np.eye(4), init="zero", n_interior=3)
    closed = open_fock_preparation(model, pulse, NoiseSpec(), t_d=20.0)
    noisy = open_fock_preparation(model, pulse, NoiseSpec(gamma_c=1e-3), t_d=20.0)
    purity = [np.real(np.trace(r.cavity_rho @ r.cavity_rho)) for r in (closed, noisy)]
    assert purity[1] < purity[0]
    assert np.real(np.trace(noisy.cavity_rho)) == pytest.approx(np.real(np.trace(closed.cavity_rho)), abs=1e-9)


def test_floquet_markov_evolution_conserves_trace(qubit):
    _, h, sigma_x = qubit
    decomp = decompose(PeriodicHamiltonian.from_operators(h, sigma_x, 0.1, 0.7))
    table = build_fm_rate_table(decomp, sigma_x, NoiseSpec(j0=0.01, temperature=0.05))
    rng = np.random.default_rng(9)
    a = rng.normal(size=(2, 2)) + 1j * rng.normal(size=(2, 2))
    rho0 = a @ a.conj().T
    rho0 /= np.trace(rho0)
    trajectory = fm_propagate(rho0, table, np.linspace(0.0, 500.0, 26))
    np.testing.assert_allclose(np.einsum("tii->t", trajectory.states), 1.0, atol=1e-10)
    assert np.all(np.real(np.einsum("tii->ti", trajectory.states)) > -1e-12)
