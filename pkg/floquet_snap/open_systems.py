"""
Open-system dynamics: Lindblad propagation, Floquet-Markov rate tables with the pure-dephasing term,
rate extraction, steady-state ancilla excitation and channel-based gate fidelity.

Superoperators use column stacking, vec(A rho B) = (B^T (x) A) vec(rho).
"""
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union
import warnings
import numpy as np
import pandas as pd
from scipy import constants
from scipy.integrate import solve_ivp
from scipy.linalg import expm, null_space
from scipy.optimize import OptimizeWarning, curve_fit
from tenacity import Retrying, retry_if_exception_type, stop_after_attempt

from floquet_snap.config import settings
from floquet_snap.dynamics import (
    FOCK_ALPHAS, Drive, DrivenSystem, displacement_operator, fock_fidelity, ideal_fock_preparation, snap_operator,
)
from floquet_snap.errors import (
    BrillouinWindowError, ConfigurationError, FitQualityError, IntegratorError, InvalidStateError,
    LabelingError, ReducibleChainError, SingularityError,
)
from floquet_snap.floquet import FloquetDecomposition, PeriodicHamiltonian, _unfold, decompose, fourier_coefficients
from floquet_snap.hamiltonians import (
    Operator, ancilla_lowering, ancilla_number, cavity_lowering, jaynes_cummings_hamiltonian, label_eigensystem,
)
from floquet_snap.logger import get_logger
from floquet_snap.models import DeltaEConvention, DressedParams, NoiseSpec, state_name
from floquet_snap.perturbation import dressed_decay_rate, purcell_rates, sideband_params
from floquet_snap.qoc import OptimizedPulse, QocModel, collapse_operators, iter_step_unitaries, spline_basis
from floquet_snap.units import TWO_PI, per_us, to_ghz, to_mhz

logger = get_logger(__name__)

TRACE_TOLERANCE = 1e-6
PSD_TOLERANCE = 1e-10
MAX_DENSE_DIMENSION = 40
PARSEVAL_TOLERANCE = 1e-6

OperatorLike = Union[Operator, np.ndarray]


def _matrix(op: OperatorLike) -> np.ndarray:
    return op.matrix if isinstance(op, Operator) else np.asarray(op, dtype=complex)


def _vec(rho: np.ndarray) -> np.ndarray:
    return rho.reshape(-1, order="F")


def _unvec(v: np.ndarray, dim: int) -> np.ndarray:
    return v.reshape(dim, dim, order="F")


# ============================================================================
#  Bath
# ============================================================================

def bose_factor(omega, temperature: float):
    """Occupation 1/(exp(hbar omega / k_B T) - 1) for omega in rad/ns; zero at T = 0 or omega <= 0."""
    omega = np.asarray(omega, dtype=float)
    if temperature <= 0:
        return np.zeros_like(omega) if omega.ndim else 0.0
    x = constants.hbar * np.abs(omega) * 1e9 / (constants.k * temperature)
    with np.errstate(divide="ignore", over="ignore"):
        n = np.where(omega > 0, 1.0 / np.expm1(np.where(x > 0, x, 1.0)), 0.0)
    return n if omega.ndim else float(n)


def white_spectral_density(gamma: float) -> float:
    """White level J_0 = gamma / 2 pi, so that 2 pi J_0 |A|^2 = gamma |A|^2."""
    return gamma / TWO_PI


def zero_frequency_weight(noise: NoiseSpec) -> float:
    """[2 n(omega) + 1] regularized at omega_floor."""
    return 2.0 * bose_factor(noise.zero_frequency_floor, noise.temperature) + 1.0


def standard_collapse_operators(dims: Tuple[int, int], noise: NoiseSpec, omega_q: float) -> List[np.ndarray]:
    """sqrt(gamma_q (1 + n_th)) q, sqrt(gamma_q n_th) q^dag, sqrt(2 gamma_phi) q^dag q, sqrt(gamma_c) a."""
    q = ancilla_lowering(dims)
    n_th = bose_factor(omega_q, noise.temperature)
    ops = []
    if noise.gamma_q > 0:
        ops.append(np.sqrt(noise.gamma_q * (1.0 + n_th)) * q)
        if n_th > 0:
            ops.append(np.sqrt(noise.gamma_q * n_th) * q.conj().T)
    if noise.gamma_phi_q > 0:
        ops.append(np.sqrt(2.0 * noise.gamma_phi_q) * ancilla_number(dims))
    if noise.gamma_c > 0:
        ops.append(np.sqrt(noise.gamma_c) * cavity_lowering(dims))
    return ops


# ============================================================================
#  Lindblad
# ============================================================================

def dissipator_superoperator(c_ops: Sequence[OperatorLike], dim: int) -> np.ndarray:
    eye = np.eye(dim)
    total = np.zeros((dim * dim, dim * dim), dtype=complex)
    for op in c_ops:
        c = _matrix(op)
        cdc = c.conj().T @ c
        total += np.kron(c.conj(), c) - 0.5 * np.kron(eye, cdc) - 0.5 * np.kron(cdc.T, eye)
    return total


def lindblad_superoperator(h: OperatorLike, c_ops: Sequence[OperatorLike]) -> np.ndarray:
    """L with d vec(rho)/dt = L vec(rho)."""
    h = _matrix(h)
    dim = h.shape[0]
    eye = np.eye(dim)
    return -1j * (np.kron(eye, h) - np.kron(h.T, eye)) + dissipator_superoperator(c_ops, dim)


def check_density_matrix(rho: np.ndarray, tolerance: float = PSD_TOLERANCE):
    """
    Raises:
        InvalidStateError: unless rho is Hermitian, unit-trace and positive semidefinite
    """
    if np.max(np.abs(rho - rho.conj().T)) > tolerance:
        raise InvalidStateError("density matrix is not Hermitian")
    if abs(np.trace(rho) - 1.0) > 1e-8:
        raise InvalidStateError(f"density matrix trace {np.trace(rho).real:.3e} differs from 1")
    if np.min(np.linalg.eigvalsh(0.5 * (rho + rho.conj().T))) < -tolerance:
        raise InvalidStateError("density matrix is not positive semidefinite")


@dataclass
class DensityTrajectory:
    times: np.ndarray
    states: np.ndarray

    @property
    def final(self) -> np.ndarray:
        return self.states[-1]

    def traces(self) -> np.ndarray:
        return np.real(np.einsum("tii->t", self.states))

    def populations(self, vectors: np.ndarray) -> np.ndarray:
        """<v_j|rho(t)|v_j> for the columns of vectors."""
        return np.real(np.einsum("dj,tde,ej->tj", vectors.conj(), self.states, vectors, optimize=True))

    def expectation(self, op: OperatorLike) -> np.ndarray:
        return np.einsum("ij,tji->t", _matrix(op), self.states)


def _drive_hamiltonian(h0: np.ndarray, drives: Sequence[Drive]) -> Callable[[float], np.ndarray]:
    prepared = [(schedule, op.matrix, schedule.channels()) for schedule, op in drives]

    def hamiltonian(t):
        h = h0
        for schedule, op, channels in prepared:
            value = sum(schedule.waveform(ch, t) for ch in channels)
            if not np.isfinite(value):
                raise IntegratorError(f"non-finite drive amplitude at t={t}")
            h = h + value * op
        return h
    return hamiltonian


def lindblad_propagate(rho0: np.ndarray, h_static: OperatorLike, drives: Sequence[Drive],
                       c_ops: Sequence[OperatorLike], t_grid: Sequence[float], check_state: bool = True,
                       max_dense_dimension: int = MAX_DENSE_DIMENSION) -> DensityTrajectory:
    """
    Lindblad evolution of rho0 recorded on t_grid (starting at t_grid[0]).

    Static problems up to max_dense_dimension use the exact superoperator exponential; everything else
    is integrated with DOP853.

    Raises:
        InvalidStateError: if check_state and rho0 is not a density matrix
        IntegratorError: if the trace drifts
    """
    rho0 = np.asarray(rho0, dtype=complex)
    if check_state:
        check_density_matrix(rho0)
    times = np.asarray(t_grid, dtype=float)
    h0 = _matrix(h_static)
    dim = h0.shape[0]
    c_mats = [_matrix(c) for c in c_ops]

    if not drives and dim <= max_dense_dimension:
        generator = lindblad_superoperator(h0, c_mats)
        states = [rho0]
        v = _vec(rho0)
        for dt in np.diff(times):
            v = expm(generator * dt) @ v
            states.append(_unvec(v, dim))
        states = np.array(states)
    else:
        hamiltonian = _drive_hamiltonian(h0, drives)
        jumps = [(c, c.conj().T, c.conj().T @ c) for c in c_mats]

        def rhs(t, y):
            rho = _unvec(y, dim)
            h = hamiltonian(t)
            d_rho = -1j * (h @ rho - rho @ h)
            for c, cd, cdc in jumps:
                d_rho += c @ rho @ cd - 0.5 * (cdc @ rho + rho @ cdc)
            return _vec(d_rho)

        fastest = max((s.max_carrier() for s, _ in drives), default=0.0)
        max_step = TWO_PI / (fastest * 32) if fastest > 0 else np.inf
        solution = solve_ivp(rhs, (times[0], times[-1]), _vec(rho0), method="DOP853", t_eval=times,
                             rtol=1e-10, atol=1e-12, max_step=max_step)
        if not solution.success:
            raise IntegratorError(f"Lindblad integration failed: {solution.message}")
        states = np.array([_unvec(solution.y[:, i], dim) for i in range(len(times))])

    traces = np.real(np.einsum("tii->t", states))
    if check_state and np.max(np.abs(traces - np.real(np.trace(rho0)))) > TRACE_TOLERANCE:
        raise IntegratorError("Lindblad evolution lost trace")
    return DensityTrajectory(times, states)


# ============================================================================
#  Floquet-Markov rate tables
# ============================================================================

@dataclass
class FMRateTable:
    """
    Golden-rule rates between Floquet modes.

    coefficients[k, a, b] = A_{ab,k}, gaps[k, a, b] = eps_a - eps_b + k omega_d,
    gammas[k, a, b] = 2 pi Theta(gap) J(gap) |A_{ab,k}|^2; rates[b, a] is the b -> a rate V_{ba};
    dephasing[a, b] is W_{ab}.
    """
    labels: List[Tuple[int, int]]
    ks: np.ndarray
    omega_d: float
    coefficients: np.ndarray
    gaps: np.ndarray
    gammas: np.ndarray
    rates: np.ndarray
    dephasing: np.ndarray

    @property
    def dimension(self) -> int:
        return len(self.labels)

    def __add__(self, other: "FMRateTable") -> "FMRateTable":
        """Rates of two independent baths."""
        if self.labels != other.labels or not np.array_equal(self.ks, other.ks):
            raise ConfigurationError("rate tables must share labels and Brillouin window")
        return FMRateTable(self.labels, self.ks, self.omega_d, self.coefficients + other.coefficients, self.gaps,
                           self.gammas + other.gammas, self.rates + other.rates, self.dephasing + other.dephasing)

    def without_dephasing(self) -> "FMRateTable":
        return FMRateTable(self.labels, self.ks, self.omega_d, self.coefficients, self.gaps, self.gammas,
                           self.rates, np.zeros_like(self.dephasing))

    def rate_matrix(self) -> np.ndarray:
        """R with dp/dt = R p; columns sum to zero."""
        v = self.rates.copy()
        np.fill_diagonal(v, 0.0)
        return v.T - np.diag(v.sum(axis=1))

    def coherence_decay(self) -> np.ndarray:
        """Gamma_ab = (sum_{nu != a} V_{a nu} + sum_{nu != b} V_{b nu} + W_ab) / 2."""
        v = self.rates.copy()
        np.fill_diagonal(v, 0.0)
        out = v.sum(axis=1)
        return 0.5 * (out[:, None] + out[None, :] + self.dephasing)

    def index(self, label: Tuple[int, int]) -> int:
        try:
            return self.labels.index(label)
        except ValueError as exc:
            raise LabelingError(f"no mode {state_name(label)} in rate table", state=label) from exc

    def to_frame(self, min_rate: float = 0.0) -> pd.DataFrame:
        rows = []
        for k_pos, a, b in zip(*np.where(self.gammas > min_rate)):
            rows.append({"a_label": state_name(self.labels[a]), "b_label": state_name(self.labels[b]),
                         "k": int(self.ks[k_pos]), "gap_GHz": to_ghz(self.gaps[k_pos, a, b]),
                         "gamma_per_us": per_us(self.gammas[k_pos, a, b])})
        return pd.DataFrame(rows, columns=["a_label", "b_label", "k", "gap_GHz", "gamma_per_us"])


def _checked_coefficients(op: np.ndarray, decomp: FloquetDecomposition, half: int, subset):
    ks = np.arange(-half, half + 1)
    coeffs, power = fourier_coefficients(op, decomp, ks, subset)
    magnitudes = np.abs(coeffs) ** 2
    scale = max(float(np.max(power)), 1e-300)
    best = np.argmax(magnitudes, axis=0)
    edge = (magnitudes.max(axis=0) > PARSEVAL_TOLERANCE * scale) & ((best == 0) | (best == len(ks) - 1))
    missing = np.max(power - magnitudes.sum(axis=0)) / scale
    if np.any(edge) or missing > PARSEVAL_TOLERANCE:
        raise BrillouinWindowError(f"Brillouin window +-{half} misses spectral weight ({missing:.2e})",
                                   window=(-half, half))
    return ks, coeffs


def build_fm_rate_table(decomp: FloquetDecomposition, coupling: OperatorLike, noise: NoiseSpec,
                        k_window: Optional[int] = None, subset: Optional[Sequence[int]] = None) -> FMRateTable:
    """
    Rates and pure-dephasing weights for a bath coupled through `coupling`.

    The Brillouin window doubles after each BrillouinWindowError up to settings.k_window_max.
    """
    op = _matrix(coupling)
    subset = np.arange(len(decomp.labels)) if subset is None else np.asarray(subset)
    half = k_window or settings.k_window
    limit = min(settings.k_window_max, decomp.samples // 2 - 1)
    attempts = 1 + max(int(np.ceil(np.log2(max(limit, half) / half))), 0)
    state = {"half": half}

    for attempt in Retrying(stop=stop_after_attempt(attempts), retry=retry_if_exception_type(BrillouinWindowError),
                            reraise=True):
        with attempt:
            try:
                ks, coeffs = _checked_coefficients(op, decomp, state["half"], subset)
            except BrillouinWindowError:
                state["half"] = min(2 * state["half"], limit)
                logger.warning("Widening rate-table Brillouin window", next_half_width=state["half"])
                raise

    eps = decomp.quasienergies[subset]
    gaps = eps[None, :, None] - eps[None, None, :] + ks[:, None, None] * decomp.omega_d
    density = noise.spectral_density(gaps)
    gammas = np.where(gaps > 0, TWO_PI * density * np.abs(coeffs) ** 2, 0.0)
    occupation = bose_factor(gaps, noise.temperature)

    absorption = np.sum(gammas * occupation, axis=0)
    emission = np.sum(gammas * (occupation + 1.0), axis=0)
    rates = absorption.T + emission

    diagonal = np.einsum("kaa->ka", coeffs)
    difference = np.abs(diagonal[:, :, None] - diagonal[:, None, :]) ** 2
    drive_gaps = ks * decomp.omega_d
    weights = np.where(drive_gaps > 0,
                       noise.spectral_density(drive_gaps) * (2.0 * bose_factor(drive_gaps, noise.temperature) + 1.0),
                       0.0)
    weights = np.where(ks == 0, noise.spectral_density(0.0) * zero_frequency_weight(noise), weights)
    dephasing = TWO_PI * np.einsum("k,kab->ab", weights, difference)

    labels = [decomp.labels[j] for j in subset]
    logger.debug("Built Floquet-Markov rate table", modes=len(labels), window=int(ks[-1]))
    return FMRateTable(labels, ks, decomp.omega_d, coeffs, gaps, gammas, rates, dephasing)


@dataclass
class FMTrajectory:
    times: np.ndarray
    states: np.ndarray
    labels: List[Tuple[int, int]]

    def population(self, label: Tuple[int, int]) -> np.ndarray:
        j = self.labels.index(label)
        return np.real(self.states[:, j, j])

    def coherence(self, a: Tuple[int, int], b: Tuple[int, int]) -> np.ndarray:
        return self.states[:, self.labels.index(a), self.labels.index(b)]

    def to_frame(self, labels: Sequence[Tuple[int, int]]) -> pd.DataFrame:
        frame = pd.DataFrame({"t_us": self.times * 1e-3})
        for label in labels:
            frame[f"P_{state_name(label)}"] = self.population(label)
        return frame


def fm_propagate(rho0: np.ndarray, table: FMRateTable, t_grid: Sequence[float],
                 include_pure_dephasing: bool = True) -> FMTrajectory:
    """Secular Floquet-Markov evolution: rate equations for populations, exponential decay of coherences."""
    rho0 = np.asarray(rho0, dtype=complex)
    if rho0.shape != (table.dimension, table.dimension):
        raise ConfigurationError(f"rho0 shape {rho0.shape} does not match table dimension {table.dimension}")
    times = np.asarray(t_grid, dtype=float)
    active = table if include_pure_dephasing else table.without_dephasing()
    generator = active.rate_matrix()
    decay = active.coherence_decay()
    p0 = np.real(np.diag(rho0))

    states = np.empty((len(times), table.dimension, table.dimension), dtype=complex)
    for i, t in enumerate(times - times[0]):
        rho = rho0 * np.exp(-decay * t)
        np.fill_diagonal(rho, expm(generator * t) @ p0)
        states[i] = rho
    return FMTrajectory(times, states, list(table.labels))


def steady_state(table: FMRateTable) -> np.ndarray:
    """
    Stationary distribution of the rate matrix.

    Raises:
        ReducibleChainError: if the stationary space is not one-dimensional
    """
    kernel = null_space(table.rate_matrix(), rcond=1e-12)
    if kernel.shape[1] != 1:
        raise ReducibleChainError(f"rate matrix has {kernel.shape[1]} stationary states")
    p = np.real(kernel[:, 0])
    p = p / p.sum()
    return np.clip(p, 0.0, None)


def steady_state_excitation(table: FMRateTable) -> float:
    """n_q: stationary weight of modes with an excited ancilla label."""
    p = steady_state(table)
    return float(sum(p[j] for j, (m, _) in enumerate(table.labels) if m >= 1))


# ============================================================================
#  Rate extraction
# ============================================================================

@dataclass
class RateFit:
    rates: Dict[str, float]
    errors: Dict[str, float]
    rms_residual: float


def _single(t, amplitude, rate, offset):
    return amplitude * np.exp(-rate * t) + offset


def _cascade(k_a, k_b, t):
    """(exp(-k_a t) - exp(-k_b t)) / (k_b - k_a), continuous at k_a = k_b."""
    diff = k_b - k_a
    if abs(diff) < 1e-12 * max(abs(k_a), abs(k_b), 1e-300):
        return t * np.exp(-k_a * t)
    return (np.exp(-k_a * t) - np.exp(-k_b * t)) / diff


def pathway_populations(t, gamma_ce, gamma_q, gamma_cg):
    """
    Populations of |e,1>, |f,0>, |g,1> for |e,1> -> |f,0> (gamma_ce) -> |e,0> (2 gamma_q) and
    |e,1> -> |g,1> (gamma_q) -> |g,0> (gamma_cg), starting from |e,1>.
    """
    t = np.asarray(t, dtype=float)
    k_e1 = gamma_ce + gamma_q
    p_e1 = np.exp(-k_e1 * t)
    p_f0 = gamma_ce * _cascade(k_e1, 2.0 * gamma_q, t)
    p_g1 = gamma_q * _cascade(k_e1, gamma_cg, t)
    return p_e1, p_f0, p_g1


def extract_rate(times: Sequence[float], data, model: str = "single", guess: Optional[Dict[str, float]] = None,
                 with_offset: bool = False) -> RateFit:
    """
    Least-squares decay rates.

    model 'single' fits A exp(-gamma t) (+ C) to one curve; 'pathway' fits (P_e1, P_f0, P_g1) jointly.

    Raises:
        FitQualityError: if the fit does not converge
    """
    t = np.asarray(times, dtype=float)
    guess = guess or {}
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", OptimizeWarning)
        try:
            if model == "single":
                y = np.asarray(data, dtype=float)
                span = max(t[-1] - t[0], 1e-300)
                rate0 = guess.get("rate", 1.0 / span)
                if with_offset:
                    p0, f = [y[0] - y[-1], rate0, y[-1]], _single
                else:
                    p0, f = [y[0], rate0], lambda tt, a, r: _single(tt, a, r, 0.0)
                popt, pcov = curve_fit(f, t - t[0], y, p0=p0, bounds=(
                    [-np.inf, 0.0] + ([-np.inf] if with_offset else []), np.inf), maxfev=20000)
                residual = f(t - t[0], *popt) - y
                names = ["amplitude", "rate"] + (["offset"] if with_offset else [])
            elif model == "pathway":
                p_e1, p_f0, p_g1 = (np.asarray(d, dtype=float) for d in data)
                y = np.concatenate([p_e1, p_f0, p_g1])

                def f(tt, gamma_ce, gamma_q, gamma_cg):
                    return np.concatenate(pathway_populations(tt, gamma_ce, gamma_q, gamma_cg))

                p0 = [guess.get("gamma_ce", 1e-6), guess.get("gamma_q", 1e-6), guess.get("gamma_cg", 1e-9)]
                popt, pcov = curve_fit(f, t - t[0], y, p0=p0, bounds=(0.0, np.inf), maxfev=20000)
                residual = f(t - t[0], *popt) - y
                names = ["gamma_ce", "gamma_q", "gamma_cg"]
            else:
                raise ConfigurationError(f"unknown rate model '{model}'")
        except RuntimeError as exc:
            raise FitQualityError(f"{model} fit did not converge: {exc}") from exc

    errors = np.sqrt(np.abs(np.diag(pcov)))
    if caught or not np.all(np.isfinite(errors)):
        logger.warning("Rate fit covariance is ill-conditioned", model=model)
    return RateFit(dict(zip(names, map(float, popt))), dict(zip(names, map(float, errors))),
                   float(np.sqrt(np.mean(residual ** 2))))


# ============================================================================
#  Channels
# ============================================================================

@dataclass
class QuantumChannel:
    """Column-stacked superoperator on N_c x N_c density matrices."""
    matrix: np.ndarray
    n_c: int

    def __post_init__(self):
        if self.matrix.shape != (self.n_c ** 2, self.n_c ** 2):
            raise ConfigurationError(f"channel matrix must be {self.n_c ** 2}x{self.n_c ** 2}")

    def __matmul__(self, other: "QuantumChannel") -> "QuantumChannel":
        return QuantumChannel(self.matrix @ other.matrix, self.n_c)

    def apply(self, rho: np.ndarray) -> np.ndarray:
        return _unvec(self.matrix @ _vec(rho), self.n_c)


def unitary_channel(u: np.ndarray) -> QuantumChannel:
    return QuantumChannel(np.kron(u.conj(), u), u.shape[0])


def channel_tomography(evolve: Callable[[np.ndarray], np.ndarray], n_c: int,
                       embed: Callable[[np.ndarray], np.ndarray], restrict: Callable[[np.ndarray], np.ndarray],
                       max_workers: Optional[int] = None) -> QuantumChannel:
    """Columns vec(restrict(evolve(embed(|n><m|)))) from N_c^2 independent solves."""
    matrix = np.zeros((n_c ** 2, n_c ** 2), dtype=complex)

    def column(n, m):
        basis = np.zeros((n_c, n_c), dtype=complex)
        basis[n, m] = 1.0
        return _vec(restrict(evolve(embed(basis))))

    with ThreadPoolExecutor(max_workers=max_workers or settings.max_workers) as executor:
        future_to_column = {executor.submit(column, n, m): n + n_c * m for m in range(n_c) for n in range(n_c)}
        for future in as_completed(future_to_column):
            matrix[:, future_to_column[future]] = future.result()
    return QuantumChannel(matrix, n_c)


def open_gate_fidelity(channel: QuantumChannel, reference: QuantumChannel, u_target: np.ndarray,
                       n_c: Optional[int] = None) -> float:
    """Re Tr(E_lab^dag E) / N_c^2 with E_lab = E_ref o E_target."""
    n_c = n_c or channel.n_c
    if channel.n_c != n_c or reference.n_c != n_c or u_target.shape != (n_c, n_c):
        raise ConfigurationError("channel, reference and target dimensions differ")
    lab = reference @ unitary_channel(u_target)
    return float(np.real(np.trace(lab.matrix.conj().T @ channel.matrix)) / n_c ** 2)


def reduced_lindblad_evolve(model: QocModel, pulse: Optional[OptimizedPulse], rho0: np.ndarray,
                            c_ops: Sequence[np.ndarray], t_g: Optional[float] = None,
                            dissipation_interval: float = 1.0) -> np.ndarray:
    """
    Lindblad evolution of the reduced Floquet-frame model: unitary chunks from the QOC step exponentials,
    Strang-split with the dissipator every `dissipation_interval` ns. No pulse means free dissipation.
    """
    d = model.dimension
    dissipator = dissipator_superoperator(c_ops, d) if c_ops else None
    rho = np.asarray(rho0, dtype=complex)
    if pulse is None:
        if dissipator is not None and t_g:
            rho = _unvec(expm(dissipator * t_g) @ _vec(rho), d)
        return rho

    basis = spline_basis(model, max(len(pulse.knots) - 8, 0), pulse.t_g)
    i_vals, q_vals = pulse.envelopes(basis.times)
    per_chunk = max(int(round(dissipation_interval / basis.dt)), 1)
    half_steps: Dict[int, np.ndarray] = {}

    def dissipate(rho, count):
        if dissipator is None:
            return rho
        if count not in half_steps:
            half_steps[count] = expm(dissipator * (0.5 * count * basis.dt))
        return _unvec(half_steps[count] @ _vec(rho), d)

    chunk, count = np.eye(d, dtype=complex), 0
    for step in iter_step_unitaries(model, basis, i_vals, q_vals):
        chunk = step @ chunk
        count += 1
        if count == per_chunk:
            rho = dissipate(chunk @ dissipate(rho, count) @ chunk.conj().T, count)
            chunk, count = np.eye(d, dtype=complex), 0
    if count:
        rho = dissipate(chunk @ dissipate(rho, count) @ chunk.conj().T, count)
    return rho


def _ground_embedding(model: QocModel):
    g = model.ground_indices

    def embed(block: np.ndarray) -> np.ndarray:
        rho = np.zeros((model.dimension, model.dimension), dtype=complex)
        rho[np.ix_(g, g)] = block
        return rho

    def restrict(rho: np.ndarray) -> np.ndarray:
        return rho[np.ix_(g, g)]
    return embed, restrict


def reduced_gate_channels(model: QocModel, pulse: OptimizedPulse, noise: NoiseSpec,
                          max_workers: Optional[int] = None) -> Tuple[QuantumChannel, QuantumChannel]:
    """
    Noisy channel of the pulse and the noiseless sideband-only reference on the g-subspace.

    The reduced model lives in the Floquet frame, where sideband-only evolution is the identity.
    """
    embed, restrict = _ground_embedding(model)
    c_ops = collapse_operators(model, noise)
    channel = channel_tomography(lambda rho: reduced_lindblad_evolve(model, pulse, rho, c_ops),
                                 model.n_c, embed, restrict, max_workers)
    reference = QuantumChannel(np.eye(model.n_c ** 2, dtype=complex), model.n_c)
    return channel, reference


def open_gate_sweep(models: Dict[int, QocModel], pulse: OptimizedPulse, noise: NoiseSpec,
                    thetas: Optional[Dict[int, float]] = None, max_workers: Optional[int] = None) -> pd.DataFrame:
    """Open-system gate fidelity of one pulse for each N_c."""
    thetas = thetas or {0: np.pi}
    rows = []
    for n_c, model in sorted(models.items()):
        channel, reference = reduced_gate_channels(model, pulse, noise, max_workers)
        noiseless, _ = reduced_gate_channels(model, pulse, NoiseSpec(), max_workers)
        target = snap_operator(thetas, n_c)
        rows.append({"n_c": n_c, "fidelity": open_gate_fidelity(channel, reference, target, n_c),
                     "closed_fidelity": open_gate_fidelity(noiseless, reference, target, n_c)})
        logger.info("Open gate fidelity", n_c=n_c, fidelity=rows[-1]["fidelity"])
    return pd.DataFrame(rows)


def _cavity_reduced(model: QocModel, rho: np.ndarray) -> np.ndarray:
    """Trace out the ancilla label of a reduced-model density matrix."""
    levels = sorted({m for m, _ in model.labels})
    out = np.zeros((model.n_c, model.n_c), dtype=complex)
    for m in levels:
        idx = [model.labels.index((m, n)) for n in range(model.n_c)]
        out += rho[np.ix_(idx, idx)]
    return out


@dataclass
class OpenFockResult:
    cavity_rho: np.ndarray
    fidelity_fock: float
    fidelity_approx: float


def open_fock_preparation(model: QocModel, pulse: OptimizedPulse, noise: NoiseSpec, t_d: float,
                          alphas: Tuple[float, float] = FOCK_ALPHAS) -> OpenFockResult:
    """
    D(alpha_1), QOC SNAP, D(alpha_2) with noise.

    The displacements are ideal unitaries on the cavity, each followed by t_d of free dissipation. The
    SNAP is the pulse on the reduced Floquet-frame model; the sideband ramps are not simulated.
    Without noise the cavity state is D(alpha_2) Tr_anc[U rho U^dag] D(alpha_2)^dag for the reduced
    propagator U, which differs from the full-model simulate_fock_preparation only by the ramps and
    the calibration error of the driven displacements.
    """
    n_c = model.n_c
    c_ops = collapse_operators(model, noise)
    vacuum = np.zeros(n_c, dtype=complex)
    vacuum[0] = 1.0
    cavity = displacement_operator(alphas[0], n_c) @ vacuum
    embed, _ = _ground_embedding(model)
    rho = embed(np.outer(cavity, cavity.conj()))
    rho = reduced_lindblad_evolve(model, None, rho, c_ops, t_d)
    rho = reduced_lindblad_evolve(model, pulse, rho, c_ops)
    rho = reduced_lindblad_evolve(model, None, rho, c_ops, t_d)

    rho_c = _cavity_reduced(model, rho)
    d2 = displacement_operator(alphas[1], n_c)
    rho_c = d2 @ rho_c @ d2.conj().T

    fock1 = np.zeros(n_c, dtype=complex)
    fock1[1] = 1.0
    result = OpenFockResult(rho_c, fock_fidelity(rho_c, fock1),
                            fock_fidelity(rho_c, ideal_fock_preparation(n_c, alphas)))
    logger.info("Open-system Fock preparation", fidelity_fock=result.fidelity_fock,
                fidelity_approx=result.fidelity_approx)
    return result


# ============================================================================
#  Inverse Purcell
# ============================================================================

@dataclass
class PurcellSweep:
    delta: np.ndarray
    ground_rate: np.ndarray
    excited_rate: np.ndarray
    ground_analytic: np.ndarray
    excited_analytic: np.ndarray
    valid: np.ndarray
    ground_lindblad: np.ndarray
    excited_lindblad: np.ndarray

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({
            "delta_MHz": to_mhz(self.delta),
            "gamma_ground_per_us": per_us(self.ground_rate),
            "gamma_excited_per_us": per_us(self.excited_rate),
            "gamma_ground_analytic_per_us": per_us(self.ground_analytic),
            "gamma_excited_analytic_per_us": per_us(self.excited_analytic),
            "gamma_ground_lindblad_per_us": per_us(self.ground_lindblad),
            "gamma_excited_lindblad_per_us": per_us(self.excited_lindblad),
            "valid_flag": self.valid,
        })


def _purcell_point(omega_q, alpha, g, gamma_q, delta, dims):
    h = jaynes_cummings_hamiltonian(omega_q, alpha, omega_q - delta, g, dims)
    eig = label_eigensystem(h)
    q = ancilla_lowering(dims)
    rates, ok = [], True
    for lower, upper in [((0, 0), (0, 1)), ((1, 0), (1, 1))]:
        i, j = eig.index(lower, strict=False), eig.index(upper, strict=False)
        ok &= not (eig.ambiguous[i] or eig.ambiguous[j])
        rates.append(gamma_q * abs(eig.states[:, i].conj() @ q @ eig.states[:, j]) ** 2)

    dressed = DressedParams(omega_q=omega_q, omega_c=omega_q - delta, alpha=alpha, chi_0=0.0)
    analytic = []
    for state in ("g", "e"):
        try:
            analytic.append(purcell_rates(dressed, g, gamma_q, state))
        except SingularityError:
            analytic.append(np.nan)
    return rates, analytic, ok, h, eig


def photon_loss_operator(eig, gamma_q: float, ancilla_level: int) -> np.ndarray:
    """sqrt(gamma_q) P q P with P the projector on the dressed states of one ancilla level."""
    members = [j for j, label in enumerate(eig.labels) if label[0] == ancilla_level]
    basis = eig.states[:, members]
    projector = basis @ basis.conj().T
    return np.sqrt(gamma_q) * projector @ ancilla_lowering(eig.dims) @ projector


def purcell_lindblad_rate(h: Operator, eig, gamma_q: float, ancilla_level: int, guess: float,
                          points: int = 60) -> float:
    """
    Single-exponential fit to the Lindblad decay of the dressed |m,1> population.

    The collapse operator keeps the ancilla in its dressed level, so only the photon-loss channel
    inherited from the lossy ancilla empties |m,1>.
    """
    psi = eig.states[:, eig.index((ancilla_level, 1), strict=False)]
    rho0 = np.outer(psi, psi.conj())
    horizon = 5.0 / max(guess, 1e-6)
    times = np.linspace(0.0, horizon, points)
    c_op = photon_loss_operator(eig, gamma_q, ancilla_level)
    trajectory = lindblad_propagate(rho0, h, [], [c_op], times)
    population = trajectory.populations(psi[:, None])[:, 0]
    return extract_rate(times, population, "single", {"rate": max(guess, 1e-6 / horizon)}).rates["rate"]


def purcell_sweep(omega_q: float, alpha: float, g: float, gamma_q: float, delta_grid: Sequence[float],
                  dims: Tuple[int, int] = (4, 3), lindblad_points: Optional[int] = None,
                  max_workers: Optional[int] = None) -> PurcellSweep:
    """
    Photon decay of the dressed |g,1> and |e,1> states across ancilla-cavity detuning.

    Golden-rule rates come from the dressed eigenvectors at every point. Lindblad-extracted rates are
    computed at `lindblad_points` evenly spaced valid points (every valid point when None) and are NaN
    elsewhere.
    """
    grid = np.asarray(delta_grid, dtype=float)
    results = [None] * len(grid)
    with ThreadPoolExecutor(max_workers=max_workers or settings.max_workers) as executor:
        future_to_index = {executor.submit(_purcell_point, omega_q, alpha, g, gamma_q, d, dims): i
                           for i, d in enumerate(grid)}
        for future in as_completed(future_to_index):
            results[future_to_index[future]] = future.result()
    rates = np.array([r[0] for r in results])
    analytic = np.array([r[1] for r in results])
    valid = np.array([r[2] for r in results])

    candidates = [i for i in range(len(grid)) if valid[i]]
    if lindblad_points is None:
        picks = candidates
    elif lindblad_points and candidates:
        picks = sorted({candidates[int(k)] for k in np.linspace(0, len(candidates) - 1, lindblad_points)})
    else:
        picks = []

    def lindblad_point(i):
        _, _, _, h, eig = results[i]
        return i, [purcell_lindblad_rate(h, eig, gamma_q, m, rates[i, m]) for m in (0, 1)]

    lindblad = np.full((len(grid), 2), np.nan)
    with ThreadPoolExecutor(max_workers=max_workers or settings.max_workers) as executor:
        for future in as_completed([executor.submit(lindblad_point, i) for i in picks]):
            i, values = future.result()
            lindblad[i] = values
    logger.info("Purcell sweep complete", points=len(grid), lindblad_points=len(picks))
    return PurcellSweep(grid, rates[:, 0], rates[:, 1], analytic[:, 0], analytic[:, 1], valid,
                        lindblad[:, 0], lindblad[:, 1])


# ============================================================================
#  Driven-qubit Ramsey
# ============================================================================

@dataclass
class RamseyResult:
    times: np.ndarray
    coherence: np.ndarray
    fitted_rate: float
    analytic_rate: float

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({"t_ns": self.times, "sigma_x_floquet": 2.0 * np.real(self.coherence)})


def fm_qubit_ramsey(omega_q: float, omega_d: float, drive_amplitude: float, j0: float, duration: float,
                    points: int = 201, include_pure_dephasing: bool = True) -> RamseyResult:
    """
    H = omega_q sigma_z / 2 + (A/2) cos(omega_d t) sigma_x with white transverse (sigma_x) and
    longitudinal (sigma_z) baths of level J_0; Ramsey decay of an equal Floquet superposition.
    """
    dims = (2, 1)
    sigma_z = np.diag([-1.0, 1.0]).astype(complex)
    sigma_x = np.array([[0, 1], [1, 0]], dtype=complex)
    static = Operator(0.5 * omega_q * sigma_z, dims)
    ham = PeriodicHamiltonian(static.matrix, sigma_x, 0.5 * drive_amplitude, omega_d, 0.0, dims)
    decomp = decompose(ham, label_eigensystem(static))

    noise = NoiseSpec(j0=j0)
    table = build_fm_rate_table(decomp, sigma_x, noise) + build_fm_rate_table(decomp, sigma_z, noise)
    rho0 = np.full((2, 2), 0.5, dtype=complex)
    times = np.linspace(0.0, duration, points)
    trajectory = fm_propagate(rho0, table, times, include_pure_dephasing)
    coherence = trajectory.states[:, 0, 1]
    fit = extract_rate(times, 2.0 * np.abs(coherence), "single")

    gamma_1 = gamma_nu = TWO_PI * j0
    analytic = 0.75 * gamma_1 + (0.5 * gamma_nu if include_pure_dephasing else 0.0)
    logger.info("Driven-qubit Ramsey", fitted_rate=fit.rates["rate"], analytic_rate=analytic,
                include_pure_dephasing=include_pure_dephasing)
    return RamseyResult(times, coherence, fit.rates["rate"], analytic)


# ============================================================================
#  Decoherence sweep
# ============================================================================

PATHWAY_LABELS = [(1, 1), (2, 0), (0, 1)]


def floquet_dispersive_shift(decomp: FloquetDecomposition, system: DrivenSystem) -> float:
    static = system.static
    diffs = []
    for n in (0, 1):
        raw = decomp.quasienergy((1, n), strict=False) - decomp.quasienergy((0, n), strict=False)
        diffs.append(_unfold(raw, static.energy((1, n)) - static.energy((0, n)), decomp.omega_d))
    return diffs[1] - diffs[0]


def decoherence_point(system: DrivenSystem, epsilon: float, omega_d: float, noise: NoiseSpec, g: float,
                      duration: float, points: int = 200, include_pure_dephasing: bool = True,
                      convention: DeltaEConvention = DeltaEConvention.THREE_ALPHA) -> Dict[str, float]:
    """Sideband-dressed decay, Ramsey dephasing, n_q and chi_d at one drive frequency."""
    ham = PeriodicHamiltonian.from_operators(system.h_static, system.ancilla_drive, epsilon, omega_d)
    decomp = decompose(ham, system.static)
    transverse_noise = noise.model_copy(update={"j0": white_spectral_density(noise.gamma_q)})
    transverse = build_fm_rate_table(decomp, system.ancilla_drive, transverse_noise)
    times = np.linspace(0.0, duration, points)

    # Decay pathways from |e,1>
    rho0 = np.zeros((transverse.dimension, transverse.dimension), dtype=complex)
    start = transverse.index((1, 1))
    rho0[start, start] = 1.0
    decay = fm_propagate(rho0, transverse, times, include_pure_dephasing)
    try:
        sb = sideband_params(system.dressed, g, epsilon, omega_d, convention)
        analytic_decay = dressed_decay_rate(sb, noise.gamma_q)
    except SingularityError:
        analytic_decay = np.nan
    guess = {"gamma_ce": analytic_decay if np.isfinite(analytic_decay) and analytic_decay > 0 else noise.gamma_q,
             "gamma_q": noise.gamma_q, "gamma_cg": noise.gamma_q * 1e-3}
    fit = extract_rate(times, [decay.population(label) for label in PATHWAY_LABELS], "pathway", guess)

    # Dressed dephasing: longitudinal bath calibrated so the static g-e pure dephasing equals gamma_phi
    longitudinal_level = noise.gamma_phi_q / (np.pi * zero_frequency_weight(noise))
    longitudinal = build_fm_rate_table(decomp, ancilla_number(system.dims),
                                       noise.model_copy(update={"j0": longitudinal_level}))
    combined = transverse + longitudinal
    n_q = steady_state_excitation(combined)

    a, b = combined.index((0, 0)), combined.index((0, 1))
    rho0 = np.zeros_like(rho0)
    rho0[np.ix_([a, b], [a, b])] = 0.5
    ramsey = fm_propagate(rho0, combined, times, include_pure_dephasing)
    dephasing = extract_rate(times, np.abs(ramsey.coherence((0, 0), (0, 1))), "single").rates["rate"]

    labels = PATHWAY_LABELS + [(0, 0), (1, 0)]
    valid = not any(decomp.ambiguous[decomp.index(label, strict=False)] for label in labels)
    logger.debug("Decoherence point done", omega_d_GHz=to_ghz(omega_d), gamma_ce=fit.rates["gamma_ce"])
    return {
        "omega_d_GHz": to_ghz(omega_d),
        "gamma_decay_per_us": per_us(fit.rates["gamma_ce"]),
        "gamma_decay_analytic_per_us": per_us(analytic_decay),
        "gamma_phi_per_us": per_us(dephasing),
        "n_q": n_q,
        "n_q_gamma_q_per_us": per_us(n_q * noise.gamma_q),
        "chi_d_MHz": to_mhz(floquet_dispersive_shift(decomp, system)),
        "valid_flag": valid,
    }


def decoherence_sweep(system: DrivenSystem, epsilon: float, omega_d_grid: Sequence[float], noise: NoiseSpec,
                      g: float, duration: float, points: int = 200, include_pure_dephasing: bool = True,
                      convention: DeltaEConvention = DeltaEConvention.THREE_ALPHA,
                      max_workers: Optional[int] = None) -> pd.DataFrame:
    """decoherence_point across drive frequencies, one worker per point."""
    grid = np.asarray(omega_d_grid, dtype=float)
    rows = [None] * len(grid)
    with ThreadPoolExecutor(max_workers=max_workers or settings.max_workers) as executor:
        future_to_index = {
            executor.submit(decoherence_point, system, epsilon, wd, noise, g, duration, points,
                            include_pure_dephasing, convention): i
            for i, wd in enumerate(grid)
        }
        for future in as_completed(future_to_index):
            rows[future_to_index[future]] = future.result()
    logger.info("Decoherence sweep complete", points=len(grid))
    return pd.DataFrame(rows)
