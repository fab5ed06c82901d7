"""
Floquet analysis of the sideband-driven system: period propagators, quasienergies, labeled modes,
Brillouin-zone-resolved matrix elements, the driven dispersive-shift sweep and sideband fits.
"""
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Set, Tuple
import numpy as np
import pandas as pd
from scipy.linalg import expm, schur
from scipy.optimize import least_squares, linear_sum_assignment
from tenacity import Retrying, retry_if_exception_type, stop_after_attempt

from floquet_snap.config import settings
from floquet_snap.errors import (
    BrillouinWindowError, ConfigurationError, FitQualityError, IntegratorError, LabelingError,
)
from floquet_snap.hamiltonians import (
    LabeledEigensystem, Operator, build_bbq_hamiltonian, drive_operator, label_eigensystem,
)
from floquet_snap.logger import get_logger
from floquet_snap.models import Branch, SystemParams, state_name
from floquet_snap.units import TWO_PI, to_ghz, to_mhz

logger = get_logger(__name__)

# Commutator-free fourth-order Magnus coefficients
_NODE_1 = 0.5 - np.sqrt(3.0) / 6.0
_NODE_2 = 0.5 + np.sqrt(3.0) / 6.0
_WEIGHT_1 = (3.0 - 2.0 * np.sqrt(3.0)) / 12.0
_WEIGHT_2 = (3.0 + 2.0 * np.sqrt(3.0)) / 12.0

DEGENERACY_TOLERANCE = 1e-10
PARSEVAL_TOLERANCE = 1e-6
FIT_RMS_THRESHOLD = 0.05


def cf4_step(hamiltonian: Callable[[float], np.ndarray], t: float, dt: float) -> np.ndarray:
    """One commutator-free fourth-order Magnus step from t to t + dt."""
    h1 = hamiltonian(t + _NODE_1 * dt)
    h2 = hamiltonian(t + _NODE_2 * dt)
    return expm(-1j * dt * (_WEIGHT_1 * h1 + _WEIGHT_2 * h2)) @ expm(-1j * dt * (_WEIGHT_2 * h1 + _WEIGHT_1 * h2))


def magnus_evolve(hamiltonian: Callable[[float], np.ndarray], t0: float, t1: float, steps: int,
                  initial: np.ndarray) -> np.ndarray:
    """Propagate `initial` (vector or column matrix) from t0 to t1 in `steps` CF4 steps."""
    if t1 <= t0:
        return initial
    steps = max(int(steps), 1)
    dt = (t1 - t0) / steps
    state = initial
    for i in range(steps):
        state = cf4_step(hamiltonian, t0 + i * dt, dt) @ state
    return state


def unitarity_error(u: np.ndarray) -> float:
    return float(np.max(np.abs(u.conj().T @ u - np.eye(u.shape[0]))))


@dataclass(frozen=True)
class PeriodicHamiltonian:
    """H(t) = H_static + amplitude cos(omega_d t + phase) drive."""
    static: np.ndarray
    drive: np.ndarray
    amplitude: float
    omega_d: float
    phase: float = 0.0
    dims: Tuple[int, int] = (0, 0)

    def __post_init__(self):
        if self.amplitude < 0:
            raise ConfigurationError("drive amplitude must be non-negative")
        if self.omega_d <= 0:
            raise ConfigurationError("drive frequency must be positive")

    @classmethod
    def from_operators(cls, h_static: Operator, drive_op: Operator, amplitude: float, omega_d: float,
                       phase: float = 0.0) -> "PeriodicHamiltonian":
        return cls(h_static.matrix, drive_op.matrix, amplitude, omega_d, phase, h_static.dims)

    @property
    def period(self) -> float:
        return TWO_PI / self.omega_d

    def __call__(self, t: float) -> np.ndarray:
        return self.static + self.amplitude * np.cos(self.omega_d * t + self.phase) * self.drive


def period_propagators(hamiltonian: PeriodicHamiltonian, steps: Optional[int] = None,
                       samples: Optional[int] = None) -> Tuple[np.ndarray, np.ndarray]:
    """
    Propagators U(t_s, 0) on a uniform grid of `samples` points over one period, and U(T, 0).

    Raises:
        IntegratorError: if the monodromy is not unitary
    """
    steps = steps or settings.magnus_steps_per_period
    samples = samples or settings.mode_samples
    per_sample = max(int(np.ceil(steps / samples)), 1)
    dt = hamiltonian.period / (samples * per_sample)

    dim = hamiltonian.static.shape[0]
    grid = np.empty((samples, dim, dim), dtype=complex)
    u = np.eye(dim, dtype=complex)
    for s in range(samples):
        grid[s] = u
        for i in range(per_sample):
            u = cf4_step(hamiltonian, (s * per_sample + i) * dt, dt) @ u

    error = unitarity_error(u)
    if not np.isfinite(error) or error > settings.unitarity_tolerance:
        raise IntegratorError(f"monodromy unitarity error {error:.2e} exceeds tolerance")
    return grid, u


def monodromy(h_static: Operator, drive_op: Operator, amplitude: float, omega_d: float,
              steps: Optional[int] = None) -> Operator:
    """One-period propagator for H_static + amplitude cos(omega_d t) drive_op."""
    ham = PeriodicHamiltonian.from_operators(h_static, drive_op, amplitude, omega_d)
    if amplitude == 0:
        return Operator(expm(-1j * ham.period * h_static.matrix), h_static.dims)
    _, u = period_propagators(ham, steps, samples=1)
    return Operator(u, h_static.dims)


@dataclass
class FloquetDecomposition:
    """Quasienergies in [0, omega_d), modes on a uniform period grid and static labels."""
    omega_d: float
    quasienergies: np.ndarray
    vectors: np.ndarray
    propagators: np.ndarray
    labels: List[Tuple[int, int]]
    overlaps: np.ndarray
    ambiguous: np.ndarray
    degenerate: np.ndarray
    dims: Tuple[int, int]
    static: Optional[LabeledEigensystem] = None
    _index: Dict[Tuple[int, int], int] = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self._index = {label: j for j, label in enumerate(self.labels)}

    @property
    def period(self) -> float:
        return TWO_PI / self.omega_d

    @property
    def samples(self) -> int:
        return self.propagators.shape[0]

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.samples) * self.period / self.samples

    def index(self, label: Tuple[int, int], strict: bool = True) -> int:
        if label not in self._index:
            raise LabelingError(f"no Floquet mode labeled {state_name(label)}", state=label)
        j = self._index[label]
        if strict and self.ambiguous[j]:
            raise LabelingError(
                f"Floquet label {state_name(label)} is ambiguous (overlap {self.overlaps[j]:.3f})", state=label)
        return j

    def quasienergy(self, label: Tuple[int, int], strict: bool = True) -> float:
        return float(self.quasienergies[self.index(label, strict)])

    def modes(self, subset: Optional[Sequence[int]] = None) -> np.ndarray:
        """Phi_j(t_s) = U(t_s) W_j exp(i eps_j t_s), shape (samples, dim, len(subset))."""
        cols = np.arange(len(self.labels)) if subset is None else np.asarray(subset)
        w = self.vectors[:, cols]
        phases = np.exp(1j * np.outer(self.times, self.quasienergies[cols]))
        return np.einsum("sab,bj,sj->saj", self.propagators, w, phases, optimize=True)

    def mode(self, label: Tuple[int, int], strict: bool = True) -> np.ndarray:
        """Samples of one mode, shape (samples, dim)."""
        return self.modes([self.index(label, strict)])[:, :, 0]

    def static_admixture(self, mode_label: Tuple[int, int], static_label: Tuple[int, int]) -> float:
        """sqrt of the time-averaged weight of a static eigenstate in a Floquet mode."""
        if self.static is None:
            raise ConfigurationError("decomposition has no static reference")
        bare = self.static.state(static_label).conj()
        amplitudes = self.mode(mode_label, strict=False) @ bare
        return float(np.sqrt(np.mean(np.abs(amplitudes) ** 2)))


def degenerate_quasienergies(quasienergies: np.ndarray, omega_d: float,
                             tolerance: float = DEGENERACY_TOLERANCE) -> np.ndarray:
    """Mask of quasienergies closer than `tolerance` to a neighbour on the circle of circumference omega_d."""
    order = np.argsort(quasienergies)
    ordered = quasienergies[order]
    gaps = np.diff(np.concatenate([ordered, [ordered[0] + omega_d]]))
    degenerate = np.zeros(len(quasienergies), dtype=bool)
    for i in np.where(gaps < tolerance)[0]:
        degenerate[order[i]] = True
        degenerate[order[(i + 1) % len(order)]] = True
    return degenerate


def decompose(hamiltonian: PeriodicHamiltonian, static: Optional[LabeledEigensystem] = None,
              steps: Optional[int] = None, samples: Optional[int] = None,
              threshold: Optional[float] = None) -> FloquetDecomposition:
    """Diagonalize the monodromy and label modes by time-averaged overlap with the static eigenstates."""
    threshold = settings.label_overlap_threshold if threshold is None else threshold
    grid, u_period = period_propagators(hamiltonian, steps, samples)
    t_mat, w = schur(u_period, output="complex")
    eigenvalues = np.diag(t_mat)
    if np.max(np.abs(np.abs(eigenvalues) - 1.0)) > settings.unitarity_tolerance:
        raise IntegratorError("monodromy eigenvalues are off the unit circle")

    quasienergies = np.mod(-np.angle(eigenvalues) / hamiltonian.period, hamiltonian.omega_d)

    degenerate = degenerate_quasienergies(quasienergies, hamiltonian.omega_d)
    if np.any(degenerate):
        logger.warning("Degenerate quasienergies detected", count=int(degenerate.sum()))

    static = static or label_eigensystem(Operator(hamiltonian.static, hamiltonian.dims))
    # Time-averaged |<static_s | Phi_j(t)>|^2; the phase factor drops out
    projected = np.einsum("ab,sbc->sac", static.states.conj().T, grid, optimize=True) @ w
    weights = np.mean(np.abs(projected) ** 2, axis=0)
    rows, cols = linear_sum_assignment(-weights)

    labels: List[Tuple[int, int]] = [(0, 0)] * len(quasienergies)
    overlaps = np.zeros(len(quasienergies))
    for s, j in zip(rows, cols):
        labels[j] = static.labels[s]
        overlaps[j] = weights[s, j]

    return FloquetDecomposition(
        omega_d=hamiltonian.omega_d, quasienergies=quasienergies, vectors=w, propagators=grid,
        labels=labels, overlaps=overlaps, ambiguous=overlaps <= threshold, degenerate=degenerate,
        dims=hamiltonian.dims, static=static,
    )


# ============================================================================
#  Matrix elements
# ============================================================================

@dataclass(frozen=True)
class FloquetMatrixElement:
    """M_ij = <i|op|j> resolved at Brillouin index k_max; from_label is i, to_label is j."""
    from_label: Tuple[int, int]
    to_label: Tuple[int, int]
    value: complex
    k_max: int
    transition_freq: float


@dataclass
class FloquetMatrixTable:
    """Dominant Fourier component of every mode pair."""
    values: np.ndarray
    k_max: np.ndarray
    transition_freqs: np.ndarray
    window: Tuple[int, int]
    decomposition: FloquetDecomposition
    subset: np.ndarray

    def _position(self, label: Tuple[int, int]) -> int:
        j = self.decomposition.index(label, strict=False)
        where = np.where(self.subset == j)[0]
        if len(where) == 0:
            raise LabelingError(f"mode {state_name(label)} not in the computed subset", state=label)
        return int(where[0])

    def element(self, from_label: Tuple[int, int], to_label: Tuple[int, int]) -> FloquetMatrixElement:
        i, j = self._position(from_label), self._position(to_label)
        return FloquetMatrixElement(from_label, to_label, complex(self.values[i, j]),
                                    int(self.k_max[i, j]), float(self.transition_freqs[i, j]))

    def elements(self, min_magnitude: float = 0.0) -> List[FloquetMatrixElement]:
        labels = [self.decomposition.labels[j] for j in self.subset]
        found = []
        for i, j in zip(*np.where(np.abs(self.values) > min_magnitude)):
            found.append(FloquetMatrixElement(labels[i], labels[j], complex(self.values[i, j]),
                                              int(self.k_max[i, j]), float(self.transition_freqs[i, j])))
        return found


def fourier_coefficients(op: np.ndarray, decomp: FloquetDecomposition, ks: Sequence[int],
                         subset: Optional[Sequence[int]] = None) -> Tuple[np.ndarray, np.ndarray]:
    """
    C_k[i, j] = (1/T) int exp(-i k omega_d t) <Phi_i(t)|op|Phi_j(t)> dt on the mode grid.

    Returns the (len(ks), n, n) table and the total power (1/T) int |<Phi_i|op|Phi_j>|^2 dt.
    """
    ks = np.asarray(ks, dtype=int)
    if np.any(np.abs(ks) >= decomp.samples // 2):
        raise ConfigurationError(f"|k| must stay below {decomp.samples // 2} for {decomp.samples} samples")
    phi = decomp.modes(subset)
    series = np.einsum("sai,ab,sbj->sij", phi.conj(), op, phi, optimize=True)
    # Periodic trapezoid rule is the sample mean; the FFT evaluates all k at once
    spectrum = np.fft.fft(series, axis=0) / decomp.samples
    power = np.mean(np.abs(series) ** 2, axis=0)
    return spectrum[np.mod(ks, decomp.samples)], power


def matrix_elements(op: Operator, decomp: FloquetDecomposition, k_window: Tuple[int, int] = None,
                    subset: Optional[Sequence[int]] = None) -> FloquetMatrixTable:
    """
    Dominant-k matrix elements over k_window.

    Raises:
        BrillouinWindowError: if the maximum sits on the window edge or the window misses spectral power
    """
    if k_window is None:
        k_window = (-settings.k_window, settings.k_window)
    ks = np.arange(k_window[0], k_window[1] + 1)
    subset = np.arange(len(decomp.labels)) if subset is None else np.asarray(subset)
    coeffs, power = fourier_coefficients(op.matrix, decomp, ks, subset)

    magnitudes = np.abs(coeffs)
    best = np.argmax(magnitudes, axis=0)
    values = np.take_along_axis(coeffs, best[None], axis=0)[0]
    k_max = ks[best]

    scale = max(float(np.max(power)), 1e-300)
    significant = np.abs(values) ** 2 > PARSEVAL_TOLERANCE * scale
    on_edge = significant & ((best == 0) | (best == len(ks) - 1)) & (len(ks) > 1)
    missing = np.max(power - np.sum(magnitudes ** 2, axis=0)) / scale
    if np.any(on_edge) or missing > PARSEVAL_TOLERANCE:
        raise BrillouinWindowError(
            f"Brillouin window {k_window} too narrow (edge maxima: {int(on_edge.sum())}, missing power {missing:.2e})",
            window=k_window)

    eps = decomp.quasienergies[subset]
    freqs = eps[None, :] - eps[:, None] - k_max * decomp.omega_d
    return FloquetMatrixTable(values, k_max, freqs, k_window, decomp, subset)


def matrix_elements_auto(op: Operator, decomp: FloquetDecomposition, k_window: Optional[int] = None,
                         k_window_max: Optional[int] = None,
                         subset: Optional[Sequence[int]] = None) -> FloquetMatrixTable:
    """matrix_elements with the window doubled after each BrillouinWindowError up to k_window_max."""
    half = k_window or settings.k_window
    limit = min(k_window_max or settings.k_window_max, decomp.samples // 2 - 1)
    attempts = 1 + max(int(np.ceil(np.log2(max(limit, half) / half))), 0)
    state = {"half": half}

    for attempt in Retrying(stop=stop_after_attempt(attempts), retry=retry_if_exception_type(BrillouinWindowError),
                            reraise=True):
        with attempt:
            window = (-state["half"], state["half"])
            try:
                return matrix_elements(op, decomp, window, subset)
            except BrillouinWindowError:
                state["half"] = min(2 * state["half"], limit)
                logger.warning("Widening Brillouin window", window=list(window), next_half_width=state["half"])
                raise


# ============================================================================
#  Driven dispersive shift
# ============================================================================

@dataclass
class SweepPoint:
    """Floquet data at one drive frequency; columns of `vectors` are the modes at t = 0."""
    index: int
    omega_d: float
    quasienergies: np.ndarray
    vectors: np.ndarray
    static_index: Dict[Tuple[int, int], int]
    ambiguous: np.ndarray


@dataclass
class DispersiveShiftSweep:
    """delta omega_q(n) and chi_d on a drive-frequency grid, rad/ns."""
    omega_d: np.ndarray
    n_values: np.ndarray
    delta_omega_q: np.ndarray
    chi_d: np.ndarray
    valid: np.ndarray

    def to_frame(self) -> pd.DataFrame:
        rows = []
        for i, wd in enumerate(self.omega_d):
            for k, n in enumerate(self.n_values):
                rows.append({
                    "omega_d_GHz": to_ghz(wd),
                    "n": int(n),
                    "delta_omega_q_MHz": to_mhz(self.delta_omega_q[i, k]),
                    "chi_d_MHz": to_mhz(self.chi_d[i]),
                    "valid_flag": bool(self.valid[i, k]),
                })
        return pd.DataFrame(rows)


def _unfold(value: float, reference: float, omega_d: float) -> float:
    """Shift a quasienergy difference by multiples of omega_d to the branch nearest `reference`."""
    return value + omega_d * np.round((reference - value) / omega_d)


def _sweep_point(index: int, h_static: Operator, drive: Operator, static: LabeledEigensystem, amplitude: float,
                 omega_d: float, labels: List[Tuple[int, int]], steps: int, samples: int) -> SweepPoint:
    ham = PeriodicHamiltonian.from_operators(h_static, drive, amplitude, omega_d)
    decomp = decompose(ham, static, steps=steps, samples=samples)
    static_index = {label: decomp.index(label, strict=False) for label in labels}
    logger.debug("Sweep point done", omega_d_GHz=to_ghz(omega_d), index=index)
    return SweepPoint(index, omega_d, decomp.quasienergies, decomp.vectors, static_index, decomp.ambiguous)


def continue_labels(previous: Dict[Tuple[int, int], np.ndarray], vectors: np.ndarray,
                    fallback: Dict[Tuple[int, int], int],
                    threshold: Optional[float] = None) -> Tuple[Dict[Tuple[int, int], int], Set[Tuple[int, int]]]:
    """
    Assign each label to the column of `vectors` with maximum overlap with that label's previous mode.

    Labels whose best match has overlap <= threshold take their `fallback` column and are returned
    in the broken set.
    """
    threshold = settings.label_overlap_threshold if threshold is None else threshold
    labels = list(previous)
    overlaps = np.abs(np.array([previous[label] for label in labels]).conj() @ vectors) ** 2
    rows, cols = linear_sum_assignment(-overlaps)

    assigned, broken = {}, set()
    for r, c in zip(rows, cols):
        label = labels[r]
        if overlaps[r, c] > threshold:
            assigned[label] = int(c)
        else:
            assigned[label] = fallback[label]
            broken.add(label)
    return assigned, broken


def dispersive_shift_sweep(params: SystemParams, amplitude: float, omega_d_grid: Sequence[float], n_max: int = 4,
                           steps: Optional[int] = None, samples: int = 16,
                           max_workers: Optional[int] = None) -> DispersiveShiftSweep:
    """
    delta omega_q(n) = [eps(e,n) - eps(g,n)] - [eps(e,0) - eps(g,0)] and chi_d = delta omega_q(1) per drive frequency.

    Labels are carried along the grid by overlap with the previous point's modes. A point is marked
    invalid where a required label falls back to static labeling, or is ambiguous at the first point.
    """
    if params.cavity_dim < n_max + 2:
        raise ConfigurationError(f"cavity_dim {params.cavity_dim} too small for n_max={n_max}")
    h_static = build_bbq_hamiltonian(params)
    static = label_eigensystem(h_static)
    drive = drive_operator("ancilla", params.dims)
    labels = [(m, n) for m in (0, 1) for n in range(n_max + 1)]
    steps = steps or settings.magnus_steps_per_period
    grid = np.asarray(omega_d_grid, dtype=float)

    points: List[SweepPoint] = []
    with ThreadPoolExecutor(max_workers=max_workers or settings.max_workers) as executor:
        future_to_index = {
            executor.submit(_sweep_point, i, h_static, drive, static, amplitude, wd, labels, steps, samples): i
            for i, wd in enumerate(grid)
        }
        for future in as_completed(future_to_index):
            points.append(future.result())
    points.sort(key=lambda p: p.index)

    threshold = settings.label_overlap_threshold
    n_values = np.arange(n_max + 1)
    delta = np.zeros((len(grid), len(n_values)))
    valid = np.ones((len(grid), len(n_values)), dtype=bool)
    previous: Dict[Tuple[int, int], np.ndarray] = {}
    fallbacks = 0
    for i, point in enumerate(points):
        if i == 0:
            assigned = dict(point.static_index)
            broken = {label for label in labels if point.ambiguous[assigned[label]]}
        else:
            assigned, broken = continue_labels(previous, point.vectors, point.static_index, threshold)
            fallbacks += len(broken)
        previous = {label: point.vectors[:, assigned[label]] for label in labels}
        energy = {label: float(point.quasienergies[assigned[label]]) for label in labels}

        ref = _unfold(energy[(1, 0)] - energy[(0, 0)], static.energy((1, 0)) - static.energy((0, 0)), point.omega_d)
        for k, n in enumerate(n_values):
            diff = _unfold(energy[(1, n)] - energy[(0, n)],
                           static.energy((1, n)) - static.energy((0, n)), point.omega_d)
            delta[i, k] = diff - ref
            if broken & {(0, 0), (1, 0), (0, n), (1, n)}:
                valid[i, k] = False

    chi_d = delta[:, 1] if n_max >= 1 else np.zeros(len(grid))
    logger.info("Dispersive shift sweep complete", points=len(grid), invalid=int((~valid).sum()),
                static_fallbacks=fallbacks)
    return DispersiveShiftSweep(grid, n_values, delta, chi_d, valid)


# ============================================================================
#  Sideband overlap and fit
# ============================================================================

def sideband_overlap_model(omega_d, rate: float, omega_0: float, slope: float = -1.0):
    """sin[arctan(Omega/|Delta|)/2] with Delta = slope (omega_d - omega_0)."""
    detuning = np.abs(slope * (np.asarray(omega_d, dtype=float) - omega_0))
    return np.sin(0.5 * np.arctan2(rate, detuning))


def _overlap_point(index, h_static, drive, static, amplitude, omega_d, mode_label, static_label, steps, samples):
    ham = PeriodicHamiltonian.from_operators(h_static, drive, amplitude, omega_d)
    decomp = decompose(ham, static, steps=steps, samples=samples)
    return index, decomp.static_admixture(mode_label, static_label)


def sideband_overlap_curve(params: SystemParams, amplitude: float, omega_d_grid: Sequence[float],
                           branch: Branch = Branch.E_H, n: int = 0, steps: Optional[int] = None, samples: int = 32,
                           max_workers: Optional[int] = None) -> Tuple[np.ndarray, np.ndarray]:
    """Admixture of |h,n> in the mode labeled |e,n+1> (or |f,n> in |g,n+1>) across omega_d."""
    h_static = build_bbq_hamiltonian(params)
    static = label_eigensystem(h_static)
    drive = drive_operator("ancilla", params.dims)
    if branch == Branch.E_H:
        mode_label, static_label = (1, n + 1), (3, n)
    else:
        mode_label, static_label = (0, n + 1), (2, n)
    static.require([mode_label, static_label])

    grid = np.asarray(omega_d_grid, dtype=float)
    overlaps = np.zeros(len(grid))
    with ThreadPoolExecutor(max_workers=max_workers or settings.max_workers) as executor:
        futures = [executor.submit(_overlap_point, i, h_static, drive, static, amplitude, wd, mode_label,
                                   static_label, steps or settings.magnus_steps_per_period, samples)
                   for i, wd in enumerate(grid)]
        for future in as_completed(futures):
            i, value = future.result()
            overlaps[i] = value
    return grid, overlaps


@dataclass(frozen=True)
class SidebandFit:
    """Sideband rate and resonance from an overlap curve, rad/ns."""
    rate: float
    omega_0: float
    slope: float
    rms_residual: float

    def detuning(self, omega_d):
        return self.slope * (np.asarray(omega_d, dtype=float) - self.omega_0)


def fit_sideband_params(omega_d: Sequence[float], overlap: Sequence[float], slope: float = -1.0,
                        fit_slope: bool = False, max_rms: float = FIT_RMS_THRESHOLD) -> SidebandFit:
    """
    Least-squares fit of overlap = sin[arctan(Omega/|Delta|)/2], Delta linear in omega_d.

    Raises:
        FitQualityError: if the RMS residual exceeds max_rms
    """
    x = np.asarray(omega_d, dtype=float)
    y = np.asarray(overlap, dtype=float)
    if len(x) < 3:
        raise ConfigurationError("need at least three points to fit a sideband resonance")

    peak = int(np.argmax(y))
    omega_0 = x[peak]
    off_peak = (y > 1e-6) & (y < 0.69) & (np.abs(x - omega_0) > 0)
    if np.any(off_peak):
        guesses = np.abs(slope * (x[off_peak] - omega_0)) * np.tan(2.0 * np.arcsin(y[off_peak]))
        rate = float(np.median(guesses))
    else:
        rate = float(np.ptp(x) / 10.0)
    rate = max(rate, 1e-9)

    if fit_slope:
        def residual(p):
            return sideband_overlap_model(x, p[0], p[1], p[2]) - y
        start, lower, upper = [rate, omega_0, slope], [0.0, x.min(), -np.inf], [np.inf, x.max(), np.inf]
    else:
        def residual(p):
            return sideband_overlap_model(x, p[0], p[1], slope) - y
        start, lower, upper = [rate, omega_0], [0.0, x.min()], [np.inf, x.max()]

    result = least_squares(residual, start, bounds=(lower, upper), x_scale="jac")
    rms = float(np.sqrt(np.mean(result.fun ** 2)))
    fitted_slope = float(result.x[2]) if fit_slope else slope
    if rms > max_rms:
        raise FitQualityError(f"sideband fit RMS residual {rms:.3f} exceeds {max_rms}")

    fit = SidebandFit(rate=float(result.x[0]), omega_0=float(result.x[1]), slope=fitted_slope, rms_residual=rms)
    logger.info("Fitted sideband parameters", rate_MHz=to_mhz(fit.rate), omega_0_GHz=to_ghz(fit.omega_0),
                rms=rms)
    return fit
