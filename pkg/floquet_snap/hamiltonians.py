"""
Truncated operators, the black-box-quantization Hamiltonian and the labeled static spectrum.
Composite states are ordered ancilla (x) cavity, flat index m * N_cav + n.
"""
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple
import numpy as np
from scipy.linalg import eigh
from scipy.optimize import linear_sum_assignment

from floquet_snap.config import settings
from floquet_snap.errors import ConfigurationError, DimensionError, LabelingError, NumericalError, SingularityError
from floquet_snap.logger import get_logger
from floquet_snap.models import DressedParams, SystemParams, state_name

logger = get_logger(__name__)

Dims = Tuple[int, int]


@dataclass(frozen=True)
class Operator:
    """Dense operator on the ancilla (x) cavity space."""
    matrix: np.ndarray
    dims: Dims

    def __post_init__(self):
        size = self.dims[0] * self.dims[1]
        if self.matrix.shape != (size, size):
            raise DimensionError(f"matrix shape {self.matrix.shape} does not match dims {self.dims}")

    @property
    def dag(self) -> "Operator":
        return Operator(self.matrix.conj().T, self.dims)

    def hermiticity_error(self) -> float:
        """Relative Frobenius norm of the anti-Hermitian part."""
        norm = np.linalg.norm(self.matrix)
        if norm == 0:
            return 0.0
        return float(np.linalg.norm(self.matrix - self.matrix.conj().T) / norm)

    def is_hermitian(self, tol: Optional[float] = None) -> bool:
        return self.hermiticity_error() < (tol if tol is not None else settings.hermiticity_tolerance)


def destroy(n: int) -> np.ndarray:
    """Truncated annihilation operator."""
    return np.diag(np.sqrt(np.arange(1, n, dtype=float)), 1).astype(complex)


def ancilla_lowering(dims: Dims) -> np.ndarray:
    return np.kron(destroy(dims[0]), np.eye(dims[1]))


def cavity_lowering(dims: Dims) -> np.ndarray:
    return np.kron(np.eye(dims[0]), destroy(dims[1]))


def ancilla_number(dims: Dims) -> np.ndarray:
    return np.kron(np.diag(np.arange(dims[0], dtype=float)), np.eye(dims[1])).astype(complex)


def cavity_number(dims: Dims) -> np.ndarray:
    return np.kron(np.eye(dims[0]), np.diag(np.arange(dims[1], dtype=float))).astype(complex)


def ancilla_projector(dims: Dims, m: int) -> np.ndarray:
    """|m><m| on the ancilla, identity on the cavity."""
    proj = np.zeros((dims[0], dims[0]), dtype=complex)
    proj[m, m] = 1.0
    return np.kron(proj, np.eye(dims[1]))


def bare_index(dims: Dims, m: int, n: int) -> int:
    if not (0 <= m < dims[0] and 0 <= n < dims[1]):
        raise DimensionError(f"state {state_name((m, n))} outside truncation {dims}")
    return m * dims[1] + n


def bare_state(dims: Dims, m: int, n: int) -> np.ndarray:
    psi = np.zeros(dims[0] * dims[1], dtype=complex)
    psi[bare_index(dims, m, n)] = 1.0
    return psi


def cos_nl(x: np.ndarray) -> np.ndarray:
    """cos(x) - 1 + x^2/2 of a Hermitian matrix by spectral decomposition."""
    w, v = eigh(x)
    return (v * (np.cos(w) - 1.0 + 0.5 * w ** 2)) @ v.conj().T


def build_bbq_hamiltonian(params: SystemParams) -> Operator:
    """
    Build omega_c c^dag c + omega_q q^dag q - E_J cos_NL[phi_q (q + q^dag) + phi_c (c + c^dag)].

    Raises:
        DimensionError: if the truncation cannot hold |h> or a cavity excitation
    """
    if params.ancilla_dim < 4:
        raise DimensionError(f"ancilla_dim={params.ancilla_dim} cannot represent |h>; need >= 4")
    if params.cavity_dim < 2:
        raise DimensionError(f"cavity_dim={params.cavity_dim} must be >= 2")

    dims = params.dims
    q = ancilla_lowering(dims)
    c = cavity_lowering(dims)
    phase = params.phi_q * (q + q.conj().T) + params.phi_c * (c + c.conj().T)

    h = (params.omega_c_bare * c.conj().T @ c
         + params.omega_q_bare * q.conj().T @ q
         - params.e_j * cos_nl(phase))
    h = 0.5 * (h + h.conj().T)

    logger.debug(f"Built BBQ Hamiltonian with dims {dims}", dimension=h.shape[0])
    return Operator(h, dims)


def jaynes_cummings_hamiltonian(omega_q: float, alpha: float, omega_c: float, g: float, dims: Dims) -> Operator:
    """Duffing ancilla coupled to a cavity: w_q q^dag q + alpha/2 q^dag q^dag q q + w_c a^dag a + g(q a^dag + q^dag a)."""
    q = ancilla_lowering(dims)
    a = cavity_lowering(dims)
    qd, ad = q.conj().T, a.conj().T
    h = omega_q * qd @ q + 0.5 * alpha * qd @ qd @ q @ q + omega_c * ad @ a + g * (q @ ad + qd @ a)
    return Operator(h, dims)


def drive_operator(mode: str, dims: Dims) -> Operator:
    """(q + q^dag) for mode 'ancilla', (c + c^dag) for mode 'cavity'."""
    if mode == "ancilla":
        x = ancilla_lowering(dims)
    elif mode == "cavity":
        x = cavity_lowering(dims)
    else:
        raise ConfigurationError(f"unknown drive mode '{mode}'")
    return Operator(x + x.conj().T, dims)


@dataclass
class LabeledEigensystem:
    """Eigenpairs with (ancilla, cavity) labels from maximum-overlap matching."""
    energies: np.ndarray
    states: np.ndarray
    labels: List[Tuple[int, int]]
    overlaps: np.ndarray
    ambiguous: np.ndarray
    dims: Dims
    _index: Dict[Tuple[int, int], int] = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self._index = {label: i for i, label in enumerate(self.labels)}

    def index(self, label: Tuple[int, int], strict: bool = True) -> int:
        """Column index of the eigenstate carrying `label`."""
        if label not in self._index:
            raise LabelingError(f"no eigenstate labeled {state_name(label)}", state=label)
        i = self._index[label]
        if strict and self.ambiguous[i]:
            raise LabelingError(
                f"label {state_name(label)} is ambiguous (overlap {self.overlaps[i]:.3f})", state=label)
        return i

    def energy(self, label: Tuple[int, int]) -> float:
        return float(self.energies[self.index(label)])

    def state(self, label: Tuple[int, int]) -> np.ndarray:
        return self.states[:, self.index(label)]

    def require(self, labels) -> None:
        for label in labels:
            self.index(label)


def label_eigenvectors(vectors: np.ndarray, dims: Dims, threshold: Optional[float] = None):
    """Match columns of `vectors` to bare product states. Returns (labels, overlaps, ambiguous)."""
    threshold = settings.label_overlap_threshold if threshold is None else threshold
    weights = np.abs(vectors) ** 2
    rows, cols = linear_sum_assignment(-weights)
    labels: List[Tuple[int, int]] = [(0, 0)] * vectors.shape[1]
    overlaps = np.zeros(vectors.shape[1])
    for bare, dressed in zip(rows, cols):
        labels[dressed] = divmod(int(bare), dims[1])
        overlaps[dressed] = weights[bare, dressed]
    return labels, overlaps, overlaps <= threshold


def label_eigensystem(h: Operator, threshold: Optional[float] = None) -> LabeledEigensystem:
    """Diagonalize a static Hamiltonian and label eigenstates globally."""
    energies, states = eigh(h.matrix)
    labels, overlaps, ambiguous = label_eigenvectors(states, h.dims, threshold)
    return LabeledEigensystem(energies, states, labels, overlaps, ambiguous, h.dims)


REQUIRED_LABELS = [(m, n) for m in range(4) for n in range(2)]


def dressed_parameters(h: Operator, eigensystem: Optional[LabeledEigensystem] = None) -> DressedParams:
    """
    Extract omega_q, omega_c, alpha and signed chi_0 from labeled levels.

    Raises:
        LabelingError: if any of {g,e,f,h} x {0,1} is ambiguous
    """
    eig = eigensystem or label_eigensystem(h)
    eig.require(REQUIRED_LABELS)
    e = eig.energy
    dressed = DressedParams(
        omega_q=e((1, 0)) - e((0, 0)),
        omega_c=e((0, 1)) - e((0, 0)),
        alpha=e((2, 0)) - 2 * e((1, 0)) + e((0, 0)),
        chi_0=(e((1, 1)) - e((1, 0))) - (e((0, 1)) - e((0, 0))),
    )
    if dressed.delta == 0:
        raise SingularityError("dressed detuning is zero")
    logger.info("Extracted dressed parameters", **dressed.report())
    return dressed


def effective_coupling(params: SystemParams, dressed: DressedParams) -> float:
    """Jaynes-Cummings coupling g = -E_J phi_c phi_q^3 Delta / (2 alpha) implied by the BBQ parameters."""
    if dressed.alpha == 0:
        raise SingularityError("anharmonicity is zero")
    return -params.e_j * params.phi_c * params.phi_q ** 3 * dressed.delta / (2.0 * dressed.alpha)


def coupling_from_chi(dressed: DressedParams) -> float:
    """g from chi_0 = 2 g^2 alpha / (Delta (Delta + alpha))."""
    delta, alpha = dressed.delta, dressed.alpha
    if alpha == 0 or delta + alpha == 0:
        raise SingularityError("chi_0 relation is singular at alpha = 0 or Delta = -alpha")
    g_squared = dressed.chi_0 * delta * (delta + alpha) / (2.0 * alpha)
    if g_squared < 0:
        raise NumericalError(f"chi_0 sign inconsistent with Delta and alpha (g^2 = {g_squared:.3e})")
    return float(np.sqrt(g_squared))


def static_system(params: SystemParams) -> Tuple[Operator, LabeledEigensystem, DressedParams]:
    """Hamiltonian, labeled spectrum and dressed parameters in one call."""
    h = build_bbq_hamiltonian(params)
    eig = label_eigensystem(h)
    return h, eig, dressed_parameters(h, eig)
