"""
Closed-system dynamics: Schrodinger propagation, SNAP and displacement sequences, gate fidelity
against sideband-only reference propagators, Fock-state preparation, Wigner functions and
ramp adiabaticity.
"""
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple
import numpy as np
import pandas as pd
from scipy.linalg import expm, schur

from floquet_snap.config import settings
from floquet_snap.errors import CalibrationError, ConfigurationError, IntegratorError, InvalidStateError, LabelingError
from floquet_snap.floquet import (
    FloquetDecomposition, PeriodicHamiltonian, decompose, magnus_evolve, matrix_elements_auto,
)
from floquet_snap.hamiltonians import (
    LabeledEigensystem, Operator, ancilla_lowering, build_bbq_hamiltonian, destroy, drive_operator,
    label_eigensystem, dressed_parameters,
)
from floquet_snap.logger import get_logger
from floquet_snap.models import DressedParams, SidebandConfig, SnapMethod, SystemParams, state_name
from floquet_snap.pulses import (
    EnvelopeKind, PulseSchedule, Segment, calibrate_gaussian_amplitude, gaussian_area, gaussian_segment,
    sideband_schedule,
)
from floquet_snap.units import TWO_PI, to_ghz

logger = get_logger(__name__)

NORM_TOLERANCE = 1e-8
FREQUENCY_BLOCK = 256
FOCK_ALPHAS = (1.14, -0.58)

Drive = Tuple[PulseSchedule, Operator]


# ============================================================================
#  System bundle
# ============================================================================

@dataclass
class DrivenSystem:
    """Static Hamiltonian, labeled spectrum and drive operators of one truncation."""
    params: SystemParams
    h_static: Operator
    static: LabeledEigensystem
    dressed: DressedParams
    ancilla_drive: Operator
    cavity_drive: Operator
    sideband: Optional[SidebandConfig] = None
    _frames: Dict[Tuple[float, float], "FloquetFramePropagator"] = field(default_factory=dict, repr=False)

    @classmethod
    def from_params(cls, params: SystemParams, sideband: Optional[SidebandConfig] = None) -> "DrivenSystem":
        h = build_bbq_hamiltonian(params)
        static = label_eigensystem(h)
        return cls(params=params, h_static=h, static=static, dressed=dressed_parameters(h, static),
                   ancilla_drive=drive_operator("ancilla", params.dims),
                   cavity_drive=drive_operator("cavity", params.dims), sideband=sideband)

    @property
    def dims(self) -> Tuple[int, int]:
        return self.params.dims

    @property
    def dimension(self) -> int:
        return self.dims[0] * self.dims[1]

    def operator_for(self, channel: str) -> Operator:
        """Cavity channels drive (c + c^dag); every other channel drives (q + q^dag)."""
        return self.cavity_drive if channel.startswith("cavity") else self.ancilla_drive

    def drives(self, schedule: PulseSchedule, exclude: Sequence[str] = ()) -> List[Drive]:
        """Split a schedule into (sub-schedule, operator) pairs by channel."""
        groups: Dict[int, List[Segment]] = {}
        ops: Dict[int, Operator] = {}
        for seg in schedule.segments:
            if seg.channel in exclude:
                continue
            op = self.operator_for(seg.channel)
            groups.setdefault(id(op), []).append(seg)
            ops[id(op)] = op
        return [(PulseSchedule(segments=segs, total_duration=schedule.total_duration), ops[key])
                for key, segs in groups.items()]

    def free_evolution(self, dt: float) -> np.ndarray:
        """exp(-i H_static dt)."""
        v = self.static.states
        return (v * np.exp(-1j * self.static.energies * dt)) @ v.conj().T

    def static_columns(self, labels: Sequence[Tuple[int, int]], strict: bool = True) -> np.ndarray:
        return np.column_stack([self.static.states[:, self.static.index(label, strict)] for label in labels])

    def ground_columns(self, n_c: int, strict: bool = True) -> np.ndarray:
        return self.static_columns([(0, n) for n in range(n_c)], strict)

    def floquet_frame(self, omega_d: float, amplitude: float) -> "FloquetFramePropagator":
        key = (round(omega_d, 12), round(amplitude, 12))
        if key not in self._frames:
            self._frames[key] = FloquetFramePropagator(self, omega_d, amplitude)
        return self._frames[key]


# ============================================================================
#  Propagation
# ============================================================================

@dataclass
class Trajectory:
    """States on a time grid; states has shape (len(times), D) or (len(times), D, k)."""
    times: np.ndarray
    states: np.ndarray
    basis: str = "lab"

    @property
    def final(self) -> np.ndarray:
        return self.states[-1]

    def norms(self) -> np.ndarray:
        return np.linalg.norm(self.states, axis=1)

    def populations(self, basis_vectors: np.ndarray) -> np.ndarray:
        """|<v_j|psi(t)>|^2 for the columns of basis_vectors."""
        return np.abs(np.einsum("dj,td->tj", basis_vectors.conj(), self.states)) ** 2

    def to_frame(self, eigensystem: LabeledEigensystem, labels: Sequence[Tuple[int, int]]) -> pd.DataFrame:
        vectors = np.column_stack([eigensystem.state(label) for label in labels])
        pops = self.populations(vectors)
        frame = pd.DataFrame({"t_ns": self.times})
        for j, label in enumerate(labels):
            frame[f"P_{state_name(label)}"] = pops[:, j]
        frame["basis"] = self.basis
        return frame


def _check_normalized(psi: np.ndarray):
    norms = np.linalg.norm(psi, axis=0)
    if not np.all(np.isfinite(norms)) or np.max(np.abs(norms - 1.0)) > NORM_TOLERANCE:
        raise InvalidStateError("initial state is not normalized")


def _drive_function(h0: np.ndarray, drives: Sequence[Drive]) -> Callable[[float], np.ndarray]:
    schedules = [(s, op.matrix, s.channels()) for s, op in drives]

    def hamiltonian(t: float) -> np.ndarray:
        h = h0
        for schedule, op, channels in schedules:
            value = sum(schedule.waveform(ch, t) for ch in channels)
            if not np.isfinite(value):
                raise IntegratorError(f"non-finite drive amplitude at t={t}")
            if value != 0.0:
                h = h + value * op
        return h
    return hamiltonian


def _fastest_frequency(h0: np.ndarray, energies: np.ndarray, vectors: np.ndarray, drives: Sequence[Drive]) -> float:
    """Largest carrier or coupled transition frequency of the active drives."""
    fastest = max((s.max_carrier() for s, _ in drives), default=0.0)
    for _, op in drives:
        coupled = np.abs(vectors.conj().T @ op.matrix @ vectors) > 1e-8
        gaps = np.abs(energies[:, None] - energies[None, :])[coupled]
        if gaps.size:
            fastest = max(fastest, float(gaps.max()))
    return fastest


def propagate(h_static: Operator, drives: Sequence[Drive], psi0: np.ndarray, t_grid: Sequence[float],
              t_start: float = 0.0, steps_per_period: Optional[int] = None) -> Trajectory:
    """
    Integrate i d/dt psi = [H_static + sum_i waveform_i(t) op_i] psi and record psi at t_grid.

    Undriven intervals use the exact exponential, single-tone flat-tops reuse the one-period
    propagator, every other interval uses CF4 Magnus steps.

    Raises:
        InvalidStateError: if psi0 is not normalized
        IntegratorError: on non-finite amplitudes or lost normalization
    """
    psi0 = np.asarray(psi0, dtype=complex)
    _check_normalized(psi0.reshape(psi0.shape[0], -1))
    times = np.asarray(t_grid, dtype=float)
    if np.any(times < t_start - 1e-12) or np.any(np.diff(times) < 0):
        raise ConfigurationError("t_grid must be sorted and not precede t_start")

    steps_per_period = steps_per_period or settings.propagation_steps_per_period
    h0 = h_static.matrix
    energies, vectors = np.linalg.eigh(h0)
    hamiltonian = _drive_function(h0, drives)

    cuts = {t_start, *times.tolist()}
    for schedule, _ in drives:
        cuts.update(p for p in schedule.breakpoints() if t_start < p < times[-1])
    cuts = sorted(cuts)

    recorded: Dict[float, np.ndarray] = {}
    state = psi0
    if t_start in times:
        recorded[t_start] = state
    for a, b in zip(cuts, cuts[1:]):
        if b - a <= 0:
            continue
        active = [(seg, op) for schedule, op in drives for seg in schedule.active(a, b)]
        if not active:
            state = (vectors * np.exp(-1j * energies * (b - a))) @ (vectors.conj().T @ state)
        elif (len(active) == 1 and active[0][0].kind in (EnvelopeKind.FLAT_TOP, EnvelopeKind.CONSTANT)
              and active[0][0].carrier > 0):
            seg, op = active[0]
            ham = PeriodicHamiltonian(h0, op.matrix, abs(seg.amplitude), seg.carrier,
                                      seg.carrier * a + seg.phase + (np.pi if seg.amplitude < 0 else 0.0))
            state = _periodic_evolve(ham, b - a, state, steps_per_period)
        else:
            fastest = _fastest_frequency(h0, energies, vectors, [(s, o) for s, o in drives])
            dt_max = TWO_PI / (fastest * steps_per_period) if fastest > 0 else (b - a)
            steps = int(np.ceil((b - a) / dt_max))
            state = magnus_evolve(hamiltonian, a, b, steps, state)
        if b in times:
            recorded[b] = state

    states = np.array([recorded[t] for t in times])
    norms = np.linalg.norm(states.reshape(len(times), states.shape[1], -1), axis=1)
    if not np.all(np.isfinite(norms)) or np.max(np.abs(norms - 1.0)) > 1e-7:
        raise IntegratorError("propagation lost normalization")
    return Trajectory(times, states)


def _periodic_evolve(ham: PeriodicHamiltonian, duration: float, state: np.ndarray, steps_per_period: int) -> np.ndarray:
    """Evolve over `duration` with whole periods from the diagonalized monodromy."""
    period = ham.period
    n_periods = int(np.floor(duration / period + 1e-12))
    remainder = max(duration - n_periods * period, 0.0)
    if n_periods > 0:
        dim = ham.static.shape[0]
        p = magnus_evolve(ham, 0.0, period, steps_per_period, np.eye(dim, dtype=complex))
        t_mat, z = schur(p, output="complex")
        phases = np.diag(t_mat) / np.abs(np.diag(t_mat))
        state = z @ ((phases ** n_periods)[:, None] * (z.conj().T @ state.reshape(dim, -1))).reshape(
            (dim,) + state.shape[1:])
    if remainder > 0:
        steps = int(np.ceil(remainder / period * steps_per_period))
        state = magnus_evolve(ham, 0.0, remainder, steps, state)
    return state


# ============================================================================
#  Floquet-frame propagation of weak drives
# ============================================================================

@dataclass
class FloquetHistory:
    """Floquet-frame amplitudes c_a(t) of the retained modes."""
    times: np.ndarray
    amplitudes: np.ndarray
    labels: List[Tuple[int, int]]

    def populations(self) -> np.ndarray:
        return np.abs(self.amplitudes) ** 2

    def phases(self, label: Tuple[int, int]) -> np.ndarray:
        j = self.labels.index(label)
        return np.angle(self.amplitudes[:, j])


class FloquetFramePropagator:
    """
    Stroboscopic propagation in the interaction picture of a sideband flat-top.

    psi(t) = sum_a c_a(t) exp(-i eps_a tau) Phi_a(tau), tau measured from the flat-top start where
    the sideband phase is zero. Weak drives enter through first-order Magnus exponentials over
    `substeps` chunks per period; quasienergy phases are exact.
    """

    def __init__(self, system: DrivenSystem, omega_d: float, amplitude: float, max_ancilla_level: int = 3,
                 substeps: Optional[int] = None, samples: Optional[int] = None, steps: Optional[int] = None):
        self.system = system
        self.substeps = substeps or settings.floquet_frame_substeps
        samples = samples or settings.mode_samples
        if samples % self.substeps:
            raise ConfigurationError("mode samples must be a multiple of the Floquet-frame substeps")
        self.hamiltonian = PeriodicHamiltonian.from_operators(system.h_static, system.ancilla_drive,
                                                              amplitude, omega_d)
        self.decomposition: FloquetDecomposition = decompose(self.hamiltonian, system.static, steps, samples)
        self.subset = np.array([j for j, label in enumerate(self.decomposition.labels)
                                if label[0] <= max_ancilla_level])
        self.labels = [self.decomposition.labels[j] for j in self.subset]
        self._frames: Dict[int, np.ndarray] = {}
        logger.debug("Floquet frame ready", omega_d_GHz=to_ghz(omega_d), retained=len(self.subset))

    @property
    def period(self) -> float:
        return self.hamiltonian.period

    def frame_operator(self, op: Operator) -> np.ndarray:
        """X_s = W^dag U(s)^dag V U(s) W on the retained modes, shape (samples, d, d)."""
        key = id(op)
        if key not in self._frames:
            w = self.decomposition.vectors[:, self.subset]
            rotated = np.einsum("sab,bj->saj", self.decomposition.propagators, w, optimize=True)
            self._frames[key] = np.einsum("sai,ab,sbj->sij", rotated.conj(), op.matrix, rotated, optimize=True)
        return self._frames[key]

    def evolve(self, psi: np.ndarray, t_start: float, duration: float, weak: Sequence[Drive] = (),
               history: bool = False) -> Tuple[np.ndarray, Optional[FloquetHistory]]:
        """Propagate psi (vector or columns) from t_start over `duration` under sideband plus weak drives."""
        decomp = self.decomposition
        period, samples = self.period, decomp.samples
        n_periods = int(np.floor(duration / period + 1e-9))
        remainder = max(duration - n_periods * period, 0.0)

        psi = np.asarray(psi, dtype=complex)
        shape = psi.shape
        psi = psi.reshape(shape[0], -1)
        w = decomp.vectors
        coefficients = w.conj().T @ psi
        sub = coefficients[self.subset]

        eps_all = decomp.quasienergies
        eps = eps_all[self.subset]
        detuning = eps[:, None] - eps[None, :]
        frames = [(schedule, schedule.channels(), self.frame_operator(op)) for schedule, op in weak]
        chunk = samples // self.substeps
        offsets = decomp.times

        record_t, record_c = [t_start], [sub.copy()]
        for first in range(0, n_periods, FREQUENCY_BLOCK):
            n = np.arange(first, min(first + FREQUENCY_BLOCK, n_periods))
            taus = t_start + n[:, None] * period + offsets[None, :]
            generator = np.zeros((len(n), self.substeps, len(eps), len(eps)), dtype=complex)
            driven = False
            for schedule, channels, x in frames:
                f = sum(schedule.waveform(ch, taus) for ch in channels)
                if not np.any(f):
                    continue
                driven = True
                weights = f.reshape(len(n), self.substeps, chunk) * (period / samples)
                generator += np.einsum("bmc,mcij->bmij", weights, x.reshape(self.substeps, chunk, *x.shape[1:]),
                                       optimize=True)
            if driven:
                generator *= np.exp(1j * detuning[None, :, :] * (n * period)[:, None, None])[:, None]
                steps = expm(-1j * generator)
                for b in range(len(n)):
                    for m in range(self.substeps):
                        sub = steps[b, m] @ sub
            if history:
                record_t.append(t_start + (n[-1] + 1) * period)
                record_c.append(sub.copy())

        coefficients[self.subset] = sub
        psi = w @ (np.exp(-1j * eps_all * n_periods * period)[:, None] * coefficients)

        if remainder > 0:
            base = self.hamiltonian
            drive_fn = _drive_function(np.zeros_like(base.static), weak)
            t0 = t_start + n_periods * period

            def hamiltonian(t):
                return base(t - t_start) + drive_fn(t)

            fastest = max([base.omega_d] + [s.max_carrier() for s, _ in weak])
            steps_n = int(np.ceil(remainder * fastest / TWO_PI * settings.propagation_steps_per_period))
            psi = magnus_evolve(hamiltonian, t0, t0 + remainder, steps_n, psi)

        trace = None
        if history:
            trace = FloquetHistory(np.array(record_t), np.array(record_c), list(self.labels))
        return psi.reshape(shape), trace


# ============================================================================
#  SNAP gate
# ============================================================================

@dataclass(frozen=True)
class TransitionData:
    """Dressed g->e transition per Fock number: carrier (rad/ns) and matrix element of q."""
    carriers: Dict[int, float]
    elements: Dict[int, complex]


def snap_transitions(system: DrivenSystem, sideband: Optional[SidebandConfig], n_values: Sequence[int]) -> TransitionData:
    """Carrier and |<g,n|q|e,n>| from the Floquet decomposition (or the static spectrum for no sideband)."""
    q = Operator(ancilla_lowering(system.dims), system.dims)
    carriers, elements = {}, {}
    if sideband is None or sideband.amplitude == 0:
        for n in n_values:
            g, e = system.static.state((0, n)), system.static.state((1, n))
            carriers[n] = system.static.energy((1, n)) - system.static.energy((0, n))
            elements[n] = complex(g.conj() @ q.matrix @ e)
        return TransitionData(carriers, elements)

    frame = system.floquet_frame(sideband.omega_d, sideband.amplitude)
    decomp = frame.decomposition
    labels = [(m, n) for n in n_values for m in (0, 1)]
    subset = [decomp.index(label) for label in labels]
    table = matrix_elements_auto(q, decomp, subset=subset)
    for n in n_values:
        element = table.element((0, n), (1, n))
        carriers[n] = abs(element.transition_freq)
        elements[n] = element.value
    return TransitionData(carriers, elements)


@dataclass
class SnapSequence:
    """Sideband ramps around a flat-top carrying the weak SNAP drive."""
    method: SnapMethod
    thetas: Dict[int, float]
    t_r: float
    t_g: float
    sideband: Optional[SidebandConfig]
    sideband_schedule: Optional[PulseSchedule]
    weak_schedule: PulseSchedule
    transitions: Optional[TransitionData] = None

    @property
    def total_duration(self) -> float:
        return 2 * self.t_r + self.t_g

    @property
    def flat_start(self) -> float:
        return self.t_r

    def full_schedule(self) -> PulseSchedule:
        if self.sideband_schedule is None:
            return self.weak_schedule
        return self.sideband_schedule.merged(self.weak_schedule)

    def with_weak(self, schedule: PulseSchedule) -> "SnapSequence":
        return SnapSequence(self.method, self.thetas, self.t_r, self.t_g, self.sideband, self.sideband_schedule,
                            schedule, self.transitions)


def _tone_segments(n: int, theta: float, carrier: float, element: complex, start: float, t_g: float) -> List[Segment]:
    theta = float(np.mod(theta, TWO_PI))
    if np.isclose(theta, 0.0) or np.isclose(theta, TWO_PI):
        return []
    channel = f"ancilla:{n}"
    if np.isclose(theta, np.pi):
        amplitude = calibrate_gaussian_amplitude(element, t_g)
        return [gaussian_segment(start, t_g, amplitude, carrier, 0.0, channel)]
    half = t_g / 2.0
    amplitude = calibrate_gaussian_amplitude(element, half, area=np.pi)
    return [gaussian_segment(start, half, amplitude, carrier, 0.0, channel),
            gaussian_segment(start + half, half, amplitude, carrier, theta - np.pi, channel)]


def build_snap_sequence(system: DrivenSystem, sideband: Optional[SidebandConfig], thetas: Dict[int, float],
                        t_g: float, method: SnapMethod = SnapMethod.FLOQUET,
                        transitions: Optional[TransitionData] = None) -> SnapSequence:
    """
    SNAP schedule: sideband ramps bracketing a flat-top that carries one Gaussian tone per Fock number.

    The standard method drops the sideband and drives at omega_q + n chi_0.

    Raises:
        ConfigurationError: if a required transition is missing
    """
    if method == SnapMethod.STANDARD or sideband is None or sideband.amplitude == 0:
        carriers = {n: system.dressed.omega_q + n * system.dressed.chi_0 for n in thetas}
        static = snap_transitions(system, None, list(thetas))
        data = TransitionData(carriers, static.elements)
        segments = [seg for n, theta in sorted(thetas.items())
                    for seg in _tone_segments(n, theta, carriers[n], data.elements[n], 0.0, t_g)]
        weak = PulseSchedule(segments=segments, total_duration=t_g)
        return SnapSequence(SnapMethod.STANDARD, dict(thetas), 0.0, t_g, None, None, weak, data)

    data = transitions or snap_transitions(system, sideband, list(thetas))
    missing = [n for n in thetas if n not in data.carriers]
    if missing:
        raise ConfigurationError(f"no Floquet transition data for Fock numbers {missing}")
    t_r = sideband.ramp_time
    ramps = sideband_schedule(sideband, t_g, phase=-sideband.omega_d * t_r, channel="sideband")
    segments = [seg for n, theta in sorted(thetas.items())
                for seg in _tone_segments(n, theta, data.carriers[n], data.elements[n], t_r, t_g)]
    weak = PulseSchedule(segments=segments, total_duration=ramps.total_duration)
    return SnapSequence(method, dict(thetas), t_r, t_g, sideband, ramps, weak, data)


def run_sequence(system: DrivenSystem, sequence: SnapSequence, psi: np.ndarray, include_weak: bool = True,
                 history: bool = False) -> Tuple[np.ndarray, Optional[FloquetHistory]]:
    """Ramp-up by CF4, flat-top in the Floquet frame, ramp-down by CF4."""
    weak = system.drives(sequence.weak_schedule) if include_weak else []
    if sequence.sideband is None:
        carrier = max([s.carrier for s in sequence.weak_schedule.segments] + [system.dressed.omega_q])
        frame = system.floquet_frame(carrier, 0.0)
        return frame.evolve(psi, 0.0, sequence.t_g, weak, history)

    ramps = system.drives(sequence.sideband_schedule)
    t_r, t_g = sequence.t_r, sequence.t_g
    if t_r > 0:
        psi = propagate(system.h_static, ramps + weak, psi, [t_r]).final
    frame = system.floquet_frame(sequence.sideband.omega_d, sequence.sideband.amplitude)
    psi, trace = frame.evolve(psi, t_r, t_g, weak, history)
    if t_r > 0:
        psi = propagate(system.h_static, ramps + weak, psi, [2 * t_r + t_g], t_start=t_r + t_g).final
    return psi, trace


@dataclass
class GateResult:
    """Closed-system gate on the g-ancilla cavity subspace."""
    u: np.ndarray
    u_ref: np.ndarray
    u_int: np.ndarray
    fidelity: float
    n_c: int
    leakage: float
    reference_leakage: float
    history: Optional[FloquetHistory] = None

    def summary(self) -> Dict:
        return {
            "fidelity": float(self.fidelity),
            "n_c": int(self.n_c),
            "leakage": float(self.leakage),
            "reference_leakage": float(self.reference_leakage),
            "u_int_re": np.real(self.u_int).tolist(),
            "u_int_im": np.imag(self.u_int).tolist(),
        }


def gate_fidelity(u_target: np.ndarray, u_int: np.ndarray, n_c: Optional[int] = None) -> float:
    """|Tr(U_target^dag U_int)|^2 / N_c^2."""
    n_c = n_c or u_target.shape[0]
    if u_target.shape != (n_c, n_c) or u_int.shape != (n_c, n_c):
        raise ConfigurationError(f"gate matrices must be {n_c}x{n_c}")
    return float(abs(np.trace(u_target.conj().T @ u_int)) ** 2 / n_c ** 2)


def _leakage(u: np.ndarray) -> float:
    return float(1.0 - np.mean(np.sum(np.abs(u) ** 2, axis=0)))


def reference_propagator(system: DrivenSystem, sequence: SnapSequence, n_c: int) -> Tuple[np.ndarray, float]:
    """U_ref[i, j] = <g,i| evolution under the sideband alone |g,j>, with its leakage."""
    columns = system.ground_columns(n_c)
    final, _ = run_sequence(system, sequence, columns, include_weak=False)
    u_ref = columns.conj().T @ final
    leakage = _leakage(u_ref)
    if leakage > settings.leakage_warning:
        logger.warning("Reference propagator leaks out of the ground subspace", leakage=leakage)
    return u_ref, leakage


def snap_gate(system: DrivenSystem, sequence: SnapSequence, n_c: int, u_target: Optional[np.ndarray] = None,
              history: bool = False) -> GateResult:
    """Simulate a SNAP sequence on |g,n>, n < n_c, and compare with the sideband-only reference."""
    if n_c > system.dims[1] - 2:
        raise ConfigurationError(f"n_c={n_c} needs cavity_dim >= {n_c + 2}")
    columns = system.ground_columns(n_c)
    final, trace = run_sequence(system, sequence, columns, include_weak=True, history=history)
    u = columns.conj().T @ final
    u_ref, ref_leakage = reference_propagator(system, sequence, n_c)
    u_int = u_ref.conj().T @ u
    target = u_target if u_target is not None else snap_operator(sequence.thetas, n_c)
    result = GateResult(u=u, u_ref=u_ref, u_int=u_int, fidelity=gate_fidelity(target, u_int, n_c), n_c=n_c,
                        leakage=_leakage(u), reference_leakage=ref_leakage, history=trace)
    if result.leakage > settings.leakage_warning:
        logger.warning("SNAP gate leaks out of the ground subspace", leakage=result.leakage)
    logger.info("SNAP gate simulated", method=sequence.method.value, t_g_ns=sequence.t_g,
                fidelity=result.fidelity, leakage=result.leakage)
    return result


# ============================================================================
#  Ideal gates and displacement
# ============================================================================

def displacement_operator(alpha: complex, dim: int, padding: int = 30) -> np.ndarray:
    """D(alpha) = exp(alpha a^dag - alpha* a), computed in a padded space and truncated."""
    big = dim + padding
    a = destroy(big)
    return expm(alpha * a.conj().T - np.conj(alpha) * a)[:dim, :dim]


def snap_operator(thetas: Dict[int, float], dim: int) -> np.ndarray:
    """exp(i sum_n theta_n |n><n|)."""
    phases = np.zeros(dim)
    for n, theta in thetas.items():
        if n < dim:
            phases[n] = theta
    return np.diag(np.exp(1j * phases))


def to_interaction_frame(system: DrivenSystem, psi: np.ndarray, t: float) -> np.ndarray:
    """exp(i H_static t) psi."""
    return system.free_evolution(-t) @ psi


def dressed_cavity_amplitudes(system: DrivenSystem, psi: np.ndarray) -> np.ndarray:
    """Amplitudes <m,n|psi> on the labeled static eigenbasis, shape (N_anc, N_cav)."""
    amplitudes = np.zeros(system.dims, dtype=complex)
    coefficients = system.static.states.conj().T @ psi
    for j, (m, n) in enumerate(system.static.labels):
        amplitudes[m, n] = coefficients[j]
    return amplitudes


def cavity_density_matrix(system: DrivenSystem, psi: np.ndarray) -> np.ndarray:
    """Cavity reduced density matrix in the dressed basis."""
    amps = dressed_cavity_amplitudes(system, psi)
    return amps.T @ amps.conj()


def displacement_gate(system: DrivenSystem, alpha: complex, t_d: float, start: float = 0.0,
                      calibrate: bool = True, chi: Optional[float] = None, max_rounds: int = 6) -> PulseSchedule:
    """
    Resonant Gaussian cavity drive of area 2|alpha| realizing D(alpha) in the frame of H_static.

    Raises:
        CalibrationError: if the simulated <a> does not reach alpha within 1%
    """
    total = start + t_d
    if alpha == 0:
        return PulseSchedule(segments=[], total_duration=total)
    chi = chi if chi is not None else system.dressed.chi_0
    if chi != 0 and t_d >= TWO_PI / abs(chi):
        logger.warning("Displacement is photon-number selective", t_d_ns=t_d, limit_ns=TWO_PI / abs(chi))

    omega_c = system.dressed.omega_c
    area = 2.0 * abs(alpha)
    amplitude = area / gaussian_area(t_d / 4.0)
    phase = -np.angle(alpha) - np.pi / 2.0

    def schedule_for(amp, ph):
        return PulseSchedule(segments=[gaussian_segment(start, t_d, amp, omega_c, ph, channel="cavity")],
                             total_duration=total)

    if not calibrate:
        return schedule_for(amplitude, phase)

    a_dressed = _dressed_lowering(system)
    psi0 = system.static.state((0, 0))
    frame = system.floquet_frame(omega_c, 0.0)
    for round_ in range(max_rounds):
        schedule = schedule_for(amplitude, phase)
        psi, _ = frame.evolve(psi0, start, t_d, system.drives(schedule))
        psi = to_interaction_frame(system, psi, total)
        achieved = complex(np.vdot(psi, a_dressed @ psi))
        error = abs(achieved - alpha) / abs(alpha)
        logger.debug("Displacement calibration round", round=round_, achieved=achieved, error=error)
        if error <= 0.01:
            return schedule
        if abs(achieved) < 1e-12:
            break
        amplitude *= abs(alpha) / abs(achieved)
        phase -= np.angle(alpha) - np.angle(achieved)
    raise CalibrationError(f"displacement calibration for alpha={alpha} did not converge")


def _dressed_lowering(system: DrivenSystem) -> np.ndarray:
    """Cavity lowering operator between labeled dressed states of equal ancilla level."""
    n_anc, n_cav = system.dims
    op = np.zeros((system.dimension, system.dimension), dtype=complex)
    states = system.static
    for m in range(n_anc):
        for n in range(1, n_cav):
            try:
                lower, upper = states.state((m, n - 1)), states.state((m, n))
            except LabelingError:
                continue
            op += np.sqrt(n) * np.outer(lower, upper.conj())
    return op


# ============================================================================
#  Fock-state preparation
# ============================================================================

@dataclass
class FockSequence:
    """D(alpha_1), SNAP, D(alpha_2) with stage-local schedules."""
    method: SnapMethod
    first: PulseSchedule
    snap: SnapSequence
    second: PulseSchedule
    alphas: Tuple[float, float]

    @property
    def total_duration(self) -> float:
        return self.first.total_duration + self.snap.total_duration + self.second.total_duration


@dataclass
class FockResult:
    state: np.ndarray
    cavity_rho: np.ndarray
    fidelity_fock: float
    fidelity_approx: float


def fock_preparation_sequence(system: DrivenSystem, method: SnapMethod, t_d: float, t_g: float,
                              sideband: Optional[SidebandConfig] = None, alphas: Tuple[float, float] = FOCK_ALPHAS,
                              snap: Optional[SnapSequence] = None, calibrate: bool = True) -> FockSequence:
    """D(1.14), SNAP exp(i pi |0><0|), D(-0.58); Floquet and QOC methods bracket the SNAP with sideband ramps."""
    first = displacement_gate(system, alphas[0], t_d, calibrate=calibrate)
    if snap is None:
        snap = build_snap_sequence(system, None if method == SnapMethod.STANDARD else sideband,
                                   {0: np.pi}, t_g, method)
    second = displacement_gate(system, alphas[1], t_d, calibrate=calibrate)
    return FockSequence(method, first, snap, second, alphas)


def ideal_fock_preparation(dim: int, alphas: Tuple[float, float] = FOCK_ALPHAS) -> np.ndarray:
    """D(alpha_2) exp(i pi |0><0|) D(alpha_1) |0>."""
    vacuum = np.zeros(dim, dtype=complex)
    vacuum[0] = 1.0
    return (displacement_operator(alphas[1], dim) @ snap_operator({0: np.pi}, dim)
            @ displacement_operator(alphas[0], dim) @ vacuum)


def fock_fidelity(state: np.ndarray, target: np.ndarray) -> float:
    """<target|rho|target> for a cavity vector or density matrix."""
    target = target / np.linalg.norm(target)
    if state.ndim == 1:
        return float(abs(np.vdot(target, state[:len(target)])) ** 2)
    return float(np.real(target.conj() @ state[:len(target), :len(target)] @ target))


def _displace(system: DrivenSystem, psi: np.ndarray, schedule: PulseSchedule) -> np.ndarray:
    """Run a stage-local cavity schedule and return the state in the H_static frame."""
    frame = system.floquet_frame(system.dressed.omega_c, 0.0)
    psi, _ = frame.evolve(psi, 0.0, schedule.total_duration, system.drives(schedule))
    return to_interaction_frame(system, psi, schedule.total_duration)


def simulate_fock_preparation(system: DrivenSystem, sequence: FockSequence) -> FockResult:
    """Run the stages, mapping each back to the H_static frame; the SNAP stage is referenced to U_ref."""
    n_cav = system.dims[1]
    psi = _displace(system, system.static.state((0, 0)), sequence.first)

    snap_final, _ = run_sequence(system, sequence.snap, psi, include_weak=True)
    columns = system.ground_columns(n_cav, strict=False)
    reference, _ = run_sequence(system, sequence.snap, columns, include_weak=False)
    psi = columns @ (reference.conj().T @ snap_final)

    psi = _displace(system, psi, sequence.second)

    rho = cavity_density_matrix(system, psi)
    fock1 = np.zeros(n_cav, dtype=complex)
    fock1[1] = 1.0
    approx = ideal_fock_preparation(n_cav, sequence.alphas)
    result = FockResult(psi, rho, fock_fidelity(rho, fock1), fock_fidelity(rho, approx))
    logger.info("Fock preparation simulated", method=sequence.method.value,
                fidelity_fock=result.fidelity_fock, fidelity_approx=result.fidelity_approx)
    return result


# ============================================================================
#  Wigner function
# ============================================================================

def wigner(rho: np.ndarray, xvec: Sequence[float], pvec: Optional[Sequence[float]] = None,
           padding: int = 30) -> np.ndarray:
    """
    W(x, p) = (1/pi) Tr[rho D(alpha) P D(-alpha)], alpha = (x + i p)/sqrt(2), so that vacuum has W(0,0) = 1/pi.

    Returns an array indexed [p, x].
    """
    rho = np.asarray(rho, dtype=complex)
    if rho.ndim == 1:
        rho = np.outer(rho, rho.conj())
    dim = rho.shape[0]
    if not np.isclose(np.trace(rho).real, 1.0, atol=1e-6):
        raise InvalidStateError("density matrix must have unit trace")
    xvec = np.asarray(xvec, dtype=float)
    pvec = xvec if pvec is None else np.asarray(pvec, dtype=float)

    big = dim + padding + int(np.ceil(0.5 * (np.max(np.abs(xvec)) ** 2 + np.max(np.abs(pvec)) ** 2)))
    a = destroy(big)
    padded = np.zeros((big, big), dtype=complex)
    padded[:dim, :dim] = rho
    parity = (-1.0) ** np.arange(big)

    result = np.zeros((len(pvec), len(xvec)))
    for i, p in enumerate(pvec):
        alphas = (xvec + 1j * p) / np.sqrt(2.0)
        generators = alphas[:, None, None] * a.conj().T[None] - np.conj(alphas)[:, None, None] * a[None]
        disp = expm(-generators)
        shifted = disp @ padded @ disp.conj().transpose(0, 2, 1)
        diagonal = np.real(np.einsum("kii->ki", shifted))
        result[i] = diagonal @ parity / np.pi
    return result


# ============================================================================
#  Sweeps
# ============================================================================

@dataclass
class RampSweep:
    t_r: np.ndarray
    n_values: List[int]
    infidelity: np.ndarray
    valid: np.ndarray

    def to_frame(self) -> pd.DataFrame:
        rows = [{"t_r_ns": t, "n": n, "infidelity": self.infidelity[i, k], "valid_flag": bool(self.valid[i, k])}
                for i, t in enumerate(self.t_r) for k, n in enumerate(self.n_values)]
        return pd.DataFrame(rows)


def _ramp_point(system: DrivenSystem, sideband: SidebandConfig, t_r: float, labels, targets, flags):
    psi0 = system.static_columns(labels)
    if t_r > 0:
        ramp = Segment(start=0.0, duration=t_r, kind=EnvelopeKind.RAMP_UP, amplitude=sideband.amplitude,
                       carrier=sideband.omega_d, phase=-sideband.omega_d * t_r, channel="sideband")
        schedule = PulseSchedule(segments=[ramp], total_duration=t_r)
        psi = propagate(system.h_static, system.drives(schedule), psi0, [t_r]).final
    else:
        psi = psi0
    overlaps = np.abs(np.sum(targets.conj() * psi, axis=0)) ** 2
    return 1.0 - overlaps, flags


def ramp_adiabaticity_sweep(system: DrivenSystem, sideband: SidebandConfig, t_r_grid: Sequence[float],
                            n_values: Sequence[int] = (0, 1), max_workers: Optional[int] = None) -> RampSweep:
    """1 - |<Phi_(g,n)(0)|psi(t_r)>|^2 after ramping static |g,n> up over t_r."""
    grid = np.asarray(t_r_grid, dtype=float)
    if np.any(grid < 0):
        raise ConfigurationError("ramp times must be non-negative")
    frame = system.floquet_frame(sideband.omega_d, sideband.amplitude)
    decomp = frame.decomposition
    labels = [(0, n) for n in n_values]
    indices = [decomp.index(label, strict=False) for label in labels]
    targets = decomp.vectors[:, indices]
    flags = ~decomp.ambiguous[indices]

    infidelity = np.zeros((len(grid), len(labels)))
    valid = np.ones((len(grid), len(labels)), dtype=bool)
    with ThreadPoolExecutor(max_workers=max_workers or settings.max_workers) as executor:
        future_to_index = {executor.submit(_ramp_point, system, sideband, t, labels, targets, flags): i
                           for i, t in enumerate(grid)}
        for future in as_completed(future_to_index):
            i = future_to_index[future]
            infidelity[i], valid[i] = future.result()
            logger.debug("Ramp point done", t_r_ns=grid[i])
    return RampSweep(grid, list(n_values), infidelity, valid)


def fidelity_vs_duration(system: DrivenSystem, sideband: SidebandConfig, t_g_grid: Sequence[float], n_c: int,
                         qoc_fidelity: Optional[Callable[[float], float]] = None,
                         thetas: Optional[Dict[int, float]] = None) -> pd.DataFrame:
    """Closed-system SNAP fidelity per gate duration for the standard, Floquet and optional QOC methods."""
    thetas = thetas or {0: np.pi}
    transitions = snap_transitions(system, sideband, list(thetas))
    rows = []
    for t_g in t_g_grid:
        standard = build_snap_sequence(system, None, thetas, t_g, SnapMethod.STANDARD)
        rows.append({"t_g_ns": t_g, "method": SnapMethod.STANDARD.value,
                     "fidelity": snap_gate(system, standard, n_c).fidelity})
        floquet = build_snap_sequence(system, sideband, thetas, t_g, SnapMethod.FLOQUET, transitions)
        rows.append({"t_g_ns": t_g, "method": SnapMethod.FLOQUET.value,
                     "fidelity": snap_gate(system, floquet, n_c).fidelity})
        if qoc_fidelity is not None:
            rows.append({"t_g_ns": t_g, "method": SnapMethod.QOC.value, "fidelity": qoc_fidelity(t_g)})
    return pd.DataFrame(rows)
