"""
Closed-form perturbative results: sideband rates and detunings, driven dispersive shift,
Schrieffer-Wolff operator corrections and analytic decay rates.
"""
from dataclasses import dataclass
from typing import List, Optional, Tuple
import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from floquet_snap.errors import ConfigurationError, SingularityError
from floquet_snap.hamiltonians import destroy
from floquet_snap.logger import get_logger
from floquet_snap.models import Branch, DeltaEConvention, DressedParams, SystemParams
from floquet_snap.units import to_mhz

logger = get_logger(__name__)

VALIDITY_RATIO = 1.0 / 3.0
_LEVEL = {"g": 0, "e": 1, "f": 2, "h": 3}


class SidebandParams(BaseModel):
    """Sideband rates and detunings, rad/ns, with the inputs they were built from."""
    model_config = ConfigDict(frozen=True)

    rate_g: float = Field(..., description="Omega_g")
    rate_e: float = Field(..., description="Omega_e")
    delta_g: float
    delta_e: float
    branch: Branch = Branch.E_H
    g: Optional[float] = None
    epsilon: Optional[float] = None
    omega_d: Optional[float] = None
    convention: DeltaEConvention = DeltaEConvention.THREE_ALPHA
    dressed: Optional[DressedParams] = None

    def rate(self, branch: Optional[Branch] = None) -> float:
        return self.rate_e if (branch or self.branch) == Branch.E_H else self.rate_g

    def detuning(self, branch: Optional[Branch] = None) -> float:
        return self.delta_e if (branch or self.branch) == Branch.E_H else self.delta_g

    @classmethod
    def from_fit(cls, rate: float, detuning: float, branch: Branch = Branch.E_H) -> "SidebandParams":
        """Single-branch parameters taken from a Floquet overlap fit."""
        if branch == Branch.E_H:
            return cls(rate_g=0.0, rate_e=rate, delta_g=np.inf, delta_e=detuning, branch=branch)
        return cls(rate_g=rate, rate_e=0.0, delta_g=detuning, delta_e=np.inf, branch=branch)


def sideband_params(dressed: DressedParams, g: float, epsilon: float, omega_d: float,
                    convention: DeltaEConvention = DeltaEConvention.THREE_ALPHA) -> SidebandParams:
    """Sideband rates and detunings for ancilla drive epsilon cos(omega_d t)."""
    delta, alpha = dressed.delta, dressed.alpha
    delta_q = dressed.omega_q - omega_d

    rate_g = -np.sqrt(2.0) * epsilon * g * alpha / (delta * (delta + alpha)) if delta * (delta + alpha) else 0.0
    denominator_e = (delta + alpha) * (delta + 2 * alpha)
    rate_e = -np.sqrt(6.0) * epsilon * g * alpha / denominator_e if denominator_e else 0.0

    delta_g = delta + delta_q + alpha
    delta_e = delta + delta_q + (3 * alpha if convention == DeltaEConvention.THREE_ALPHA else 2 * alpha)

    # Dominant branch has the smaller detuning-to-rate ratio
    branch = Branch.E_H
    if rate_g != 0 and (rate_e == 0 or abs(delta_g / rate_g) < abs(delta_e / rate_e)):
        branch = Branch.G_F

    return SidebandParams(rate_g=float(rate_g), rate_e=float(rate_e), delta_g=float(delta_g),
                          delta_e=float(delta_e), branch=branch, g=g, epsilon=epsilon, omega_d=omega_d,
                          convention=convention, dressed=dressed)


def bbq_sideband_rate(params: SystemParams, epsilon: float, delta: float) -> float:
    """Large-detuning sideband rate -E_J xi phi_c phi_q^3 with xi = epsilon / (2 Delta)."""
    if delta == 0:
        raise SingularityError("BBQ sideband rate is singular at Delta = 0")
    xi = epsilon / (2.0 * delta)
    return -params.e_j * xi * params.phi_c * params.phi_q ** 3


def dispersive_shifts(g: float, delta: float, alpha: float) -> Tuple[float, float, float]:
    """(chi_g, chi_e, chi_f) of the Duffing Jaynes-Cummings model."""
    if delta == 0 or delta + alpha == 0 or delta + 2 * alpha == 0:
        raise SingularityError("dispersive shifts are singular at Delta in {0, -alpha, -2 alpha}")
    chi_g = -g ** 2 / delta
    chi_e = g ** 2 * (alpha - delta) / delta / (delta + alpha)
    chi_f = -g ** 2 * (delta - alpha) / (delta + alpha) / (delta + 2 * alpha)
    return chi_g, chi_e, chi_f


def _check_validity(rate: float, detuning: float, branch: Branch):
    if abs(rate / detuning) > VALIDITY_RATIO:
        logger.warning("Sideband outside perturbative regime", branch=branch.value,
                       ratio=abs(rate / detuning), rate_MHz=to_mhz(rate), detuning_MHz=to_mhz(detuning))


def driven_chi(chi_0: float, sb: SidebandParams, branch: Optional[Branch] = None) -> float:
    """
    chi_0 + Omega_g^2 / 4 Delta_g on the g-branch, chi_0 - Omega_e^2 / 4 Delta_e on the e-branch.

    Raises:
        SingularityError: at zero detuning
    """
    branch = branch or sb.branch
    rate, detuning = sb.rate(branch), sb.detuning(branch)
    if detuning == 0:
        raise SingularityError(f"driven dispersive shift diverges at zero {branch.value} detuning")
    if rate == 0:
        return chi_0
    _check_validity(rate, detuning, branch)
    shift = rate ** 2 / (4.0 * detuning)
    return chi_0 + shift if branch == Branch.G_F else chi_0 - shift


# ============================================================================
#  Operator corrections
# ============================================================================

@dataclass(frozen=True)
class EffectiveTransitionTerm:
    """
    prefactor * cavity_op (x) |ket><bra| * exp(i frequency t).

    `ket`/`bra` name ancilla levels; both None means the full ancilla ladder q. `cavity` is one of
    'a', 'a_dag', 'n' or 'identity'.
    """
    descriptor: str
    prefactor: complex
    frequency: float
    cavity: str
    ket: Optional[str] = None
    bra: Optional[str] = None
    branch: Optional[Branch] = None

    def ancilla_matrix(self, n_anc: int) -> np.ndarray:
        if self.ket is None:
            return destroy(n_anc)
        op = np.zeros((n_anc, n_anc), dtype=complex)
        op[_LEVEL[self.ket], _LEVEL[self.bra]] = 1.0
        return op

    def cavity_matrix(self, n_cav: int) -> np.ndarray:
        a = destroy(n_cav)
        return {"a": a, "a_dag": a.conj().T, "n": a.conj().T @ a, "identity": np.eye(n_cav, dtype=complex)}[self.cavity]

    def matrix(self, n_anc: int, n_cav: int) -> np.ndarray:
        """Dense operator on ancilla (x) cavity, prefactor included, time factor excluded."""
        if n_anc < 4:
            raise ConfigurationError("transition terms reference |h>; need n_anc >= 4")
        return self.prefactor * np.kron(self.ancilla_matrix(n_anc), self.cavity_matrix(n_cav))


def _term(descriptor, prefactor, frequency, cavity, ket, bra, branch=None):
    return EffectiveTransitionTerm(descriptor, complex(prefactor), float(frequency), cavity, ket, bra, branch)


def ladder_corrections(sb: SidebandParams, order: int = 1,
                       omega_q: Optional[float] = None, alpha: Optional[float] = None) -> List[EffectiveTransitionTerm]:
    """
    Sideband corrections to the ancilla lowering operator q.

    Order 1 gives the six first-order terms of both branches; order 2 gives the photon-number
    renormalization -(1/8)(Omega_e/Delta_e)^2 a^dag a q of the e-branch.
    """
    dressed = sb.dressed
    omega_q = omega_q if omega_q is not None else (dressed.omega_q if dressed else 0.0)
    alpha = alpha if alpha is not None else (dressed.alpha if dressed else 0.0)
    terms: List[EffectiveTransitionTerm] = []

    if order == 2:
        if sb.rate_e != 0 and np.isfinite(sb.delta_e):
            if sb.delta_e == 0:
                raise SingularityError("second-order correction diverges at zero e-branch detuning")
            terms.append(_term("a†a q", -0.125 * (sb.rate_e / sb.delta_e) ** 2, 0.0, "n", None, None, Branch.E_H))
        return terms
    if order != 1:
        raise ConfigurationError(f"order must be 1 or 2, got {order}")

    if sb.rate_g != 0 and np.isfinite(sb.delta_g):
        if sb.delta_g == 0:
            raise SingularityError("first-order corrections diverge at zero g-branch detuning")
        c, d = sb.rate_g / (2.0 * sb.delta_g), sb.delta_g
        terms += [
            _term("a†|g⟩⟨h|", np.sqrt(3.0) * c, -(d + omega_q + 2 * alpha), "a_dag", "g", "h", Branch.G_F),
            _term("a|f⟩⟨e|", -c, d - omega_q, "a", "f", "e", Branch.G_F),
            _term("a|e⟩⟨g|", np.sqrt(2.0) * c, d - omega_q - alpha, "a", "e", "g", Branch.G_F),
        ]
    if sb.rate_e != 0 and np.isfinite(sb.delta_e):
        if sb.delta_e == 0:
            raise SingularityError("first-order corrections diverge at zero e-branch detuning")
        c, d = sb.rate_e / (2.0 * sb.delta_e), sb.delta_e
        terms += [
            _term("a†|g⟩⟨h|", -c, -(d + omega_q), "a_dag", "g", "h", Branch.E_H),
            _term("a|f⟩⟨e|", np.sqrt(3.0) * c, d - omega_q - 2 * alpha, "a", "f", "e", Branch.E_H),
            _term("a|h⟩⟨f|", -np.sqrt(2.0) * c, -(d - omega_q - alpha), "a", "h", "f", Branch.E_H),
        ]
    return terms


def dephasing_corrections(sb: SidebandParams) -> List[EffectiveTransitionTerm]:
    """Sideband corrections to q^dag q."""
    terms: List[EffectiveTransitionTerm] = []
    for branch, rate, detuning, low, high in [(Branch.G_F, sb.rate_g, sb.delta_g, "g", "f"),
                                              (Branch.E_H, sb.rate_e, sb.delta_e, "e", "h")]:
        if rate == 0 or not np.isfinite(detuning):
            continue
        if detuning == 0:
            raise SingularityError(f"dephasing corrections diverge at zero {branch.value} detuning")
        c = rate / detuning
        terms += [
            _term(f"a†|{low}⟩⟨{high}|", c, -detuning, "a_dag", low, high, branch),
            _term(f"a|{high}⟩⟨{low}|", c, detuning, "a", high, low, branch),
        ]
    return terms


def dispersive_corrections(dressed: DressedParams, g: float, operator: str = "q") -> List[EffectiveTransitionTerm]:
    """Corrections to q (or q^dag q) from the dispersive transformation."""
    delta, alpha, omega_q, omega_c = dressed.delta, dressed.alpha, dressed.omega_q, dressed.omega_c
    if delta == 0 or delta + alpha == 0:
        raise SingularityError("dispersive corrections are singular at Delta in {0, -alpha}")
    if operator == "q":
        return [
            _term("a|g⟩⟨g|", -g / delta, -omega_c, "a", "g", "g"),
            _term("a|e⟩⟨e|", (g / delta) * (alpha - delta) / (alpha + delta), -omega_c, "a", "e", "e"),
            _term("a†|g⟩⟨f|", -np.sqrt(2.0) * g * alpha / (delta * (delta + alpha)),
                  -(2 * omega_q + alpha - omega_c), "a_dag", "g", "f"),
        ]
    if operator == "q_dag_q":
        return [
            _term("a†|g⟩⟨e|", -g / delta, -delta, "a_dag", "g", "e"),
            _term("a|e⟩⟨g|", -g / delta, delta, "a", "e", "g"),
            _term("a†|e⟩⟨f|", -np.sqrt(2.0) * g / (delta + alpha), -(delta + alpha), "a_dag", "e", "f"),
            _term("a|f⟩⟨e|", -np.sqrt(2.0) * g / (delta + alpha), delta + alpha, "a", "f", "e"),
        ]
    raise ConfigurationError(f"unknown operator '{operator}'")


# ============================================================================
#  Rates
# ============================================================================

def purcell_rates(dressed: DressedParams, g: float, gamma_q: float, ancilla_state: str = "g") -> float:
    """
    Ancilla-induced cavity decay: (g/Delta)^2 gamma_q for |g>, times ((alpha-Delta)/(alpha+Delta))^2 for |e>.

    Raises:
        SingularityError: at Delta = 0 or in the straddling point Delta = -alpha
    """
    delta, alpha = dressed.delta, dressed.alpha
    if delta == 0:
        raise SingularityError("Purcell rate is singular at Delta = 0")
    ground = (g / delta) ** 2 * gamma_q
    if ancilla_state == "g":
        return float(ground)
    if ancilla_state == "e":
        if delta + alpha == 0:
            raise SingularityError("Purcell rate is singular at the straddling point Delta = -alpha")
        return float(ground * ((alpha - delta) / (alpha + delta)) ** 2)
    raise ConfigurationError(f"ancilla_state must be 'g' or 'e', got '{ancilla_state}'")


def dressed_decay_rate(sb: SidebandParams, gamma_q: float) -> float:
    """Sideband-dressed cavity decay 3 Omega_e^2 / (4 Delta_e^2) gamma_q."""
    if sb.rate_e == 0:
        return 0.0
    if sb.delta_e == 0:
        raise SingularityError("dressed decay diverges at zero e-branch detuning")
    return float(3.0 * sb.rate_e ** 2 / (4.0 * sb.delta_e ** 2) * gamma_q)


def shot_noise_dephasing(n_q: float, gamma_q: float) -> float:
    """Photon shot-noise dephasing n_q gamma_q."""
    if not 0.0 <= n_q <= 1.0:
        raise ConfigurationError(f"n_q must lie in [0, 1], got {n_q}")
    return float(n_q * gamma_q)
