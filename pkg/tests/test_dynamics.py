import numpy as np
import pytest
import qutip
from math import factorial
from scipy.linalg import expm

from floquet_snap.dynamics import (
    DrivenSystem, build_snap_sequence, displacement_gate, displacement_operator, fock_fidelity, gate_fidelity,
    ideal_fock_preparation, propagate, ramp_adiabaticity_sweep, snap_gate, snap_operator, wigner,
)
from floquet_snap.errors import CalibrationError, ConfigurationError, InvalidStateError
from floquet_snap.hamiltonians import Operator
from floquet_snap.models import SidebandConfig, SnapMethod
from floquet_snap.pulses import EnvelopeKind, PulseSchedule, Segment
from floquet_snap.units import ghz


def random_hermitian(dim, seed=3):
    rng = np.random.default_rng(seed)
    m = rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim))
    return (m + m.conj().T) / 2


def test_undriven_propagation_is_exact():
    h = Operator(random_hermitian(6), (3, 2))
    psi0 = np.zeros(6, dtype=complex)
    psi0[1] = 1.0
    times = [0.0, 1.5, 3.0]
    trajectory = propagate(h, [], psi0, times)
    for t, state in zip(times, trajectory.states):
        np.testing.assert_allclose(state, expm(-1j * h.matrix * t) @ psi0, atol=1e-10)


def test_unnormalized_state_rejected():
    h = Operator(random_hermitian(4), (2, 2))
    with pytest.raises(InvalidStateError):
        propagate(h, [], np.ones(4, dtype=complex), [1.0])


def test_resonant_pi_pulse_inverts_qubit(qubit):
    omega, h, sigma_x = qubit
    amplitude = 1e-3
    duration = np.pi / amplitude
    segment = Segment(start=0.0, duration=duration, kind=EnvelopeKind.CONSTANT, amplitude=amplitude, carrier=omega)
    schedule = PulseSchedule(segments=[segment], total_duration=duration)
    psi0 = np.array([1.0, 0.0], dtype=complex)
    final = propagate(h, [(schedule, sigma_x)], psi0, [duration]).final
    assert abs(final[1]) ** 2 > 0.999


def test_displacement_operator_makes_coherent_state():
    alpha, dim = 1.2, 15
    vacuum = np.zeros(dim, dtype=complex)
    vacuum[0] = 1.0
    state = displacement_operator(alpha, dim) @ vacuum
    expected = np.array([np.exp(-alpha ** 2 / 2) * alpha ** n / np.sqrt(factorial(n)) for n in range(dim)])
    np.testing.assert_allclose(state, expected, atol=1e-8)


def test_ideal_fock_preparation_fidelity():
    state = ideal_fock_preparation(20)
    fock1 = np.zeros(20)
    fock1[1] = 1.0
    assert fock_fidelity(state, fock1) == pytest.approx(0.981, abs=0.002)
    assert fock_fidelity(np.outer(state, state.conj()), fock1) == pytest.approx(fock_fidelity(state, fock1))


def test_gate_fidelity():
    target = snap_operator({0: np.pi}, 4)
    assert gate_fidelity(target, target) == pytest.approx(1.0)
    assert gate_fidelity(target, np.exp(0.7j) * target) == pytest.approx(1.0)
    assert gate_fidelity(target, np.eye(4)) == pytest.approx(0.25)
    with pytest.raises(ConfigurationError):
        gate_fidelity(target, np.eye(3), 4)


def test_gate_fidelity_ignores_global_phases():
    rng = np.random.default_rng(12)
    q, r = np.linalg.qr(rng.normal(size=(4, 4)) + 1j * rng.normal(size=(4, 4)))
    u = q * (np.diag(r) / np.abs(np.diag(r)))
    target = snap_operator({0: np.pi, 2: 0.4}, 4)
    value = gate_fidelity(target, u)
    for a, b in [(0.3, 0.0), (0.0, -2.1), (1.7, 0.9)]:
        assert gate_fidelity(np.exp(1j * a) * target, np.exp(1j * b) * u) == pytest.approx(value, rel=1e-10)


def test_snap_operator_ignores_levels_outside_dimension():
    op = snap_operator({1: np.pi / 2, 7: 1.0}, 3)
    np.testing.assert_allclose(np.diag(op), [1.0, 1j, 1.0], atol=1e-12)


def test_wigner_matches_qutip_for_coherent_state():
    dim = 20
    vacuum = np.zeros(dim, dtype=complex)
    vacuum[0] = 1.0
    psi = displacement_operator(0.8 - 0.4j, dim) @ vacuum
    rho = np.outer(psi, psi.conj())
    xvec, pvec = np.linspace(-3, 3, 13), np.linspace(-2, 2, 9)
    expected = qutip.wigner(qutip.Qobj(rho), xvec, pvec)
    np.testing.assert_allclose(wigner(rho, xvec, pvec), expected, atol=1e-6)


def test_wigner_values_and_normalization():
    fock1 = np.zeros(6, dtype=complex)
    fock1[1] = 1.0
    assert wigner(fock1, [0.0])[0, 0] == pytest.approx(-1.0 / np.pi)
    vacuum = np.zeros(6, dtype=complex)
    vacuum[0] = 1.0
    assert wigner(vacuum, [0.0])[0, 0] == pytest.approx(1.0 / np.pi)

    xvec = np.linspace(-6, 6, 41)
    w = wigner(fock1, xvec)
    dx = xvec[1] - xvec[0]
    assert np.sum(w) * dx * dx == pytest.approx(1.0, abs=1e-3)

    with pytest.raises(InvalidStateError):
        wigner(2.0 * np.outer(fock1, fock1), xvec)


@pytest.fixture
def small_system(small_params):
    return DrivenSystem.from_params(small_params)


def test_identity_snap_is_identity(small_system):
    sequence = build_snap_sequence(small_system, None, {0: 0.0, 1: 0.0}, 50.0, SnapMethod.STANDARD)
    assert sequence.weak_schedule.segments == []
    result = snap_gate(small_system, sequence, n_c=2)
    assert result.fidelity == pytest.approx(1.0, abs=1e-8)
    np.testing.assert_allclose(result.u_int, np.eye(2), atol=1e-6)


def test_snap_subspace_must_fit(small_system):
    sequence = build_snap_sequence(small_system, None, {0: 0.0}, 50.0, SnapMethod.STANDARD)
    with pytest.raises(ConfigurationError):
        snap_gate(small_system, sequence, n_c=small_system.dims[1])


def test_standard_tones_sit_on_photon_resolved_lines(small_system):
    sequence = build_snap_sequence(small_system, None, {0: np.pi, 1: np.pi / 2}, 400.0, SnapMethod.STANDARD)
    dressed = small_system.dressed
    carriers = sorted({(seg.channel, seg.carrier) for seg in sequence.weak_schedule.segments})
    assert carriers == [("ancilla:0", pytest.approx(dressed.omega_q)),
                        ("ancilla:1", pytest.approx(dressed.omega_q + dressed.chi_0))]
    # A pi rotation uses one Gaussian, any other angle two half-length ones
    assert len(sequence.weak_schedule.on_channel("ancilla:0")) == 1
    assert len(sequence.weak_schedule.on_channel("ancilla:1")) == 2


def test_displacement_gate_calibrates(small_system):
    schedule = displacement_gate(small_system, 0.5, 20.0)
    (segment,) = schedule.segments
    assert segment.channel == "cavity"
    assert segment.carrier == pytest.approx(small_system.dressed.omega_c)
    with pytest.raises(CalibrationError):
        displacement_gate(small_system, 0.5, 20.0, max_rounds=0)


def test_sudden_ramp_measures_static_floquet_overlap(small_system):
    sideband = SidebandConfig(amplitude=ghz(0.3), omega_d=ghz(7.56))
    sweep = ramp_adiabaticity_sweep(small_system, sideband, [0.0], max_workers=1)
    decomp = small_system.floquet_frame(sideband.omega_d, sideband.amplitude).decomposition
    for k, n in enumerate(sweep.n_values):
        mode = decomp.vectors[:, decomp.index((0, n), strict=False)]
        expected = 1.0 - abs(np.vdot(small_system.static.state((0, n)), mode)) ** 2
        assert sweep.infidelity[0, k] == pytest.approx(expected, abs=1e-6)
    assert list(sweep.to_frame().columns) == ["t_r_ns", "n", "infidelity", "valid_flag"]


def test_undriven_ramp_keeps_static_states(small_system):
    sideband = SidebandConfig(amplitude=0.0, omega_d=ghz(7.56))
    sweep = ramp_adiabaticity_sweep(small_system, sideband, [0.0, 2.0], max_workers=2)
    np.testing.assert_allclose(sweep.infidelity, 0.0, atol=1e-8)
    assert sweep.valid.all()
    with pytest.raises(ConfigurationError):
        ramp_adiabaticity_sweep(small_system, sideband, [-1.0])
