"""
Pydantic models for physical parameters and scenario configuration.

Parameter models hold internal units (rad/ns, ns, 1/ns). Config sections hold
the units named in their keys and convert through `to_*` methods.
"""
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator
from typing import Optional, List, Dict, Tuple
from enum import Enum
import numpy as np

from floquet_snap.units import TWO_PI, ghz, mhz, rate_from_us


class Branch(str, Enum):
    """Sideband branch."""
    G_F = "g-f"
    E_H = "e-h"


class DeltaEConvention(str, Enum):
    """Detuning convention for the e<->h sideband."""
    THREE_ALPHA = "three_alpha"    # Delta + Delta_q + 3 alpha
    TWO_ALPHA = "two_alpha"        # Delta + Delta_q + 2 alpha


class SnapMethod(str, Enum):
    """How the SNAP stage of a sequence is realized."""
    STANDARD = "standard"
    FLOQUET = "floquet"
    QOC = "qoc"


class ScenarioStatus(str, Enum):
    """Scenario execution status."""
    PENDING = "pending"
    RUNNING = "running"
    COMPLETED = "completed"
    FAILED = "failed"


ANCILLA_NAMES = "gefhijklmnopqrstuvwxyz"


def state_name(label: Tuple[int, int]) -> str:
    """Render (m, n) as e.g. 'e1'."""
    m, n = label
    return f"{ANCILLA_NAMES[m] if m < len(ANCILLA_NAMES) else m}{n}"


def parse_state(name: str) -> Tuple[int, int]:
    """Parse 'e1' into (1, 1)."""
    return ANCILLA_NAMES.index(name[0]), int(name[1:])


# ============================================================================
#  Physical parameters (internal units)
# ============================================================================

class SystemParams(BaseModel):
    """BBQ cavity-ancilla parameters. Frequencies and E_J in rad/ns."""
    model_config = ConfigDict(frozen=True)

    omega_c_bare: float = Field(..., gt=0, description="Bare cavity frequency")
    omega_q_bare: float = Field(..., gt=0, description="Bare ancilla frequency")
    e_j: float = Field(..., ge=0, description="Josephson energy")
    phi_c: float = Field(..., ge=0, lt=1, description="Cavity participation")
    phi_q: float = Field(..., gt=0, lt=1, description="Ancilla participation")
    cavity_dim: int = Field(12, ge=1)
    ancilla_dim: int = Field(20, ge=1)

    @model_validator(mode="after")
    def check_participation_order(self):
        if self.phi_c >= self.phi_q:
            raise ValueError("participation factors must satisfy phi_c < phi_q")
        return self

    @classmethod
    def from_ghz(cls, omega_c_bare_GHz: float, omega_q_bare_GHz: float, e_j_GHz: float,
                 phi_c: float, phi_q: float, cavity_dim: int = 12, ancilla_dim: int = 20) -> "SystemParams":
        return cls(omega_c_bare=ghz(omega_c_bare_GHz), omega_q_bare=ghz(omega_q_bare_GHz),
                   e_j=ghz(e_j_GHz), phi_c=phi_c, phi_q=phi_q,
                   cavity_dim=cavity_dim, ancilla_dim=ancilla_dim)

    @property
    def dims(self) -> Tuple[int, int]:
        return (self.ancilla_dim, self.cavity_dim)

    def with_dims(self, cavity_dim: int, ancilla_dim: int) -> "SystemParams":
        return self.model_copy(update={"cavity_dim": cavity_dim, "ancilla_dim": ancilla_dim})


class DressedParams(BaseModel):
    """Dressed parameters from the static spectrum, rad/ns. chi_0 is signed."""
    model_config = ConfigDict(frozen=True)

    omega_q: float
    omega_c: float
    alpha: float
    chi_0: float

    @property
    def delta(self) -> float:
        """Ancilla-cavity detuning omega_q - omega_c."""
        return self.omega_q - self.omega_c

    def report(self) -> Dict[str, float]:
        """Values in GHz/MHz for result files."""
        return {
            "omega_q_GHz": self.omega_q / TWO_PI,
            "omega_c_GHz": self.omega_c / TWO_PI,
            "alpha_MHz": self.alpha / TWO_PI * 1e3,
            "chi_0_MHz": self.chi_0 / TWO_PI * 1e3,
            "abs_chi_0_MHz": abs(self.chi_0) / TWO_PI * 1e3,
        }


class SidebandConfig(BaseModel):
    """Sideband drive: epsilon cos(omega_d t + phase)(q + q^dag), ramped in and out over ramp_time."""
    model_config = ConfigDict(frozen=True)

    amplitude: float = Field(..., ge=0, description="epsilon, rad/ns")
    omega_d: float = Field(..., gt=0, description="rad/ns")
    ramp_time: float = Field(10.0, ge=0, description="ns")

    @property
    def period(self) -> float:
        return TWO_PI / self.omega_d


class NoiseSpec(BaseModel):
    """Bath description for the Lindblad and Floquet-Markov solvers."""
    model_config = ConfigDict(frozen=True)

    gamma_q: float = Field(0.0, ge=0, description="Ancilla relaxation, 1/ns")
    gamma_phi_q: float = Field(0.0, ge=0, description="Ancilla pure dephasing, 1/ns")
    gamma_c: float = Field(0.0, ge=0, description="Cavity relaxation, 1/ns")
    temperature: float = Field(0.0, ge=0, description="Bath temperature, K")
    j0: Optional[float] = Field(None, ge=0, description="White spectral level; defaults to gamma_q / 2 pi")
    spectrum_omega: Optional[List[float]] = Field(None, description="Tabulated J abscissae, rad/ns")
    spectrum_values: Optional[List[float]] = Field(None, description="Tabulated J values")
    zero_frequency_floor: float = Field(TWO_PI * 1e-6, gt=0, description="omega_floor, rad/ns")

    @model_validator(mode="after")
    def check_table(self):
        if (self.spectrum_omega is None) != (self.spectrum_values is None):
            raise ValueError("spectrum_omega and spectrum_values must be given together")
        if self.spectrum_values is not None:
            if len(self.spectrum_omega) != len(self.spectrum_values):
                raise ValueError("tabulated spectrum length mismatch")
            if min(self.spectrum_values) < 0:
                raise ValueError("spectral density must be non-negative")
        return self

    @property
    def white_level(self) -> float:
        return self.j0 if self.j0 is not None else self.gamma_q / TWO_PI

    def spectral_density(self, omega):
        """J(omega) for omega >= 0; zero below."""
        omega = np.asarray(omega, dtype=float)
        if self.spectrum_values is not None:
            values = np.interp(omega, self.spectrum_omega, self.spectrum_values)
        else:
            values = np.full_like(omega, self.white_level)
        return np.where(omega >= 0, values, 0.0)


# ============================================================================
#  Scenario configuration (units in key names)
# ============================================================================

def _check_ghz(value: float, name: str) -> float:
    if not 0 < value < 100:
        raise ValueError(f"{name} = {value} GHz is outside (0, 100) GHz")
    return value


class SystemConfig(BaseModel):
    """BBQ parameters; all keys required."""
    model_config = ConfigDict(extra="forbid")

    omega_c_bare_GHz: float
    omega_q_bare_GHz: float
    e_j_GHz: float = Field(..., ge=0)
    phi_c: float = Field(..., ge=0, lt=1)
    phi_q: float = Field(..., gt=0, lt=1)
    cavity_dim: int = Field(..., ge=2)
    ancilla_dim: int = Field(..., ge=4)

    @field_validator("omega_c_bare_GHz", "omega_q_bare_GHz")
    @classmethod
    def frequency_range(cls, v, info):
        return _check_ghz(v, info.field_name)

    def to_params(self, cavity_dim: Optional[int] = None, ancilla_dim: Optional[int] = None) -> SystemParams:
        return SystemParams.from_ghz(self.omega_c_bare_GHz, self.omega_q_bare_GHz, self.e_j_GHz,
                                     self.phi_c, self.phi_q,
                                     cavity_dim or self.cavity_dim, ancilla_dim or self.ancilla_dim)


class TruncationConfig(BaseModel):
    """Truncation used by time-domain scenarios."""
    model_config = ConfigDict(extra="forbid")

    cavity_dim: int = Field(8, ge=2)
    ancilla_dim: int = Field(12, ge=4)


class DriveConfig(BaseModel):
    """Sideband and gate timing settings."""
    model_config = ConfigDict(extra="forbid")

    epsilon_GHz: float = Field(0.8, ge=0)
    omega_d_GHz: float = 7.56
    t_r_ns: float = Field(10.0, ge=0)
    t_g_ns: float = Field(10000.0, gt=0)
    t_d_ns: float = Field(72.0, gt=0)
    n_c: int = Field(5, ge=1)
    snap_thetas_rad: Dict[int, float] = Field(default_factory=lambda: {0: float(np.pi)})
    coupling_g_MHz: Optional[float] = Field(None, description="Override for the JC-equivalent coupling")
    delta_e_convention: DeltaEConvention = DeltaEConvention.THREE_ALPHA

    @field_validator("omega_d_GHz")
    @classmethod
    def frequency_range(cls, v, info):
        return _check_ghz(v, info.field_name)

    @model_validator(mode="after")
    def ramp_shorter_than_gate(self):
        if self.t_r_ns >= self.t_g_ns:
            raise ValueError(f"t_r_ns ({self.t_r_ns}) must be shorter than t_g_ns ({self.t_g_ns})")
        return self

    def to_sideband(self, epsilon_GHz: Optional[float] = None, omega_d_GHz: Optional[float] = None) -> SidebandConfig:
        eps = self.epsilon_GHz if epsilon_GHz is None else epsilon_GHz
        wd = self.omega_d_GHz if omega_d_GHz is None else omega_d_GHz
        return SidebandConfig(amplitude=ghz(eps), omega_d=ghz(wd), ramp_time=self.t_r_ns)


class NoiseConfig(BaseModel):
    """Intrinsic decoherence; times in us, temperature in mK."""
    model_config = ConfigDict(extra="forbid")

    t1_q_us: float = Field(300.0, gt=0)
    tphi_q_us: float = Field(500.0, gt=0)
    t1_c_us: float = Field(30000.0, gt=0)
    temperature_mK: float = Field(50.0, ge=0)
    zero_frequency_floor_kHz: float = Field(1.0, gt=0)

    def to_noise(self) -> NoiseSpec:
        return NoiseSpec(gamma_q=rate_from_us(self.t1_q_us), gamma_phi_q=rate_from_us(self.tphi_q_us),
                         gamma_c=rate_from_us(self.t1_c_us), temperature=self.temperature_mK * 1e-3,
                         zero_frequency_floor=ghz(self.zero_frequency_floor_kHz * 1e-6))


class SweepConfig(BaseModel):
    """Grids for the sweep scenarios."""
    model_config = ConfigDict(extra="forbid")

    omega_d_start_GHz: float = 7.30
    omega_d_stop_GHz: float = 8.30
    omega_d_points: int = Field(200, ge=2)
    n_max: int = Field(4, ge=1)
    fit_omega_d_start_GHz: float = 7.50
    fit_omega_d_stop_GHz: float = 7.66
    fit_points: int = Field(41, ge=5)
    decoherence_omega_d_start_GHz: float = 7.45
    decoherence_omega_d_stop_GHz: float = 7.56
    decoherence_points: int = Field(12, ge=2)
    decoherence_duration_us: float = Field(2000.0, gt=0)
    t_r_grid_ns: List[float] = Field(default_factory=lambda: [0.0, 1.0, 2.0, 3.0, 5.0, 7.5, 10.0, 15.0, 20.0, 30.0, 40.0])
    fidelity_duration_points: int = Field(5, ge=2)

    @model_validator(mode="after")
    def ordered_ranges(self):
        for start, stop in [("omega_d_start_GHz", "omega_d_stop_GHz"),
                            ("fit_omega_d_start_GHz", "fit_omega_d_stop_GHz"),
                            ("decoherence_omega_d_start_GHz", "decoherence_omega_d_stop_GHz")]:
            _check_ghz(getattr(self, start), start)
            _check_ghz(getattr(self, stop), stop)
            if getattr(self, start) >= getattr(self, stop):
                raise ValueError(f"{start} must be below {stop}")
        if min(self.t_r_grid_ns) < 0:
            raise ValueError("t_r_grid_ns values must be non-negative")
        return self


class QocConfig(BaseModel):
    """Optimal-control settings."""
    model_config = ConfigDict(extra="forbid")

    t_g_ns: float = Field(1500.0, gt=0)
    n_c: int = Field(5, ge=1)
    fock_n_c: int = Field(8, ge=2)
    knots_per_quadrature: int = Field(30, ge=1)
    magnitude_cutoff: float = Field(0.05, ge=0)
    max_iterations: int = Field(300, ge=1)
    max_restarts: int = Field(5, ge=0)
    target_cost: float = Field(0.99, gt=0, le=1)
    init: str = Field("gaussian", pattern="^(zero|gaussian)$")
    rotating_wave: bool = False
    amplitude_penalty: float = Field(0.0, ge=0)
    amplitude_limit_MHz: Optional[float] = Field(None, gt=0)
    checkpoint: Optional[str] = Field(None, description="Checkpoint read by qoc-validate and the QOC Fock preparation")


class PurcellConfig(BaseModel):
    """Inverse-Purcell study on the Duffing Jaynes-Cummings model."""
    model_config = ConfigDict(extra="forbid")

    omega_q_GHz: float = 6.0
    g_MHz: float = 30.0
    alpha_MHz: float = -300.0
    t1_q_ns: float = Field(1.0, gt=0)
    delta_start_MHz: float = -1000.0
    delta_stop_MHz: float = 1000.0
    points: int = Field(201, ge=3)
    ancilla_dim: int = Field(4, ge=3)
    cavity_dim: int = Field(3, ge=2)
    lindblad_points: Optional[int] = Field(None, ge=0, description="Lindblad-fitted points; null means all valid")


class FmQubitConfig(BaseModel):
    """Resonantly driven qubit for the pure-dephasing check."""
    model_config = ConfigDict(extra="forbid")

    omega_q_GHz: float = 1.0
    omega_d_GHz: float = 1.0
    drive_amplitude_GHz: float = 0.1
    j0_per_ns: float = Field(0.04 / (2 * np.pi), gt=0)
    duration_ns: float = Field(100.0, gt=0)
    points: int = Field(201, ge=10)
    include_pure_dephasing: bool = True


class OpenGateConfig(BaseModel):
    """Open-system gate fidelity settings."""
    model_config = ConfigDict(extra="forbid")

    n_c_values: List[int] = Field(default_factory=lambda: [2, 3, 4, 5])

    @field_validator("n_c_values")
    @classmethod
    def bounded(cls, v):
        if not v or min(v) < 1 or max(v) > 5:
            raise ValueError("n_c_values must lie in [1, 5]")
        return v


class ScenarioConfig(BaseModel):
    """Complete scenario configuration."""
    model_config = ConfigDict(extra="forbid")

    scenario: Optional[str] = None
    system: SystemConfig
    truncation: TruncationConfig = Field(default_factory=TruncationConfig)
    drive: DriveConfig = Field(default_factory=DriveConfig)
    noise: NoiseConfig = Field(default_factory=NoiseConfig)
    sweeps: SweepConfig = Field(default_factory=SweepConfig)
    qoc: QocConfig = Field(default_factory=QocConfig)
    purcell: PurcellConfig = Field(default_factory=PurcellConfig)
    fm_qubit: FmQubitConfig = Field(default_factory=FmQubitConfig)
    open_gate: OpenGateConfig = Field(default_factory=OpenGateConfig)
    output_dir: Optional[str] = None
    seed: int = 1234
    threads: Optional[int] = Field(None, ge=1)

    @model_validator(mode="after")
    def cross_field_checks(self):
        for where, cavity_dim in [("system", self.system.cavity_dim), ("truncation", self.truncation.cavity_dim)]:
            if self.drive.n_c > cavity_dim - 2:
                raise ValueError(f"drive.n_c ({self.drive.n_c}) must be <= {where}.cavity_dim - 2 ({cavity_dim - 2})")
        if self.qoc.n_c > self.truncation.cavity_dim - 2:
            raise ValueError(f"qoc.n_c ({self.qoc.n_c}) must be <= truncation.cavity_dim - 2")
        if self.drive.t_r_ns >= self.qoc.t_g_ns:
            raise ValueError("drive.t_r_ns must be shorter than qoc.t_g_ns")
        return self

    def static_params(self) -> SystemParams:
        """Parameters at the full static truncation."""
        return self.system.to_params()

    def dynamics_params(self) -> SystemParams:
        """Parameters at the time-domain truncation."""
        return self.system.to_params(self.truncation.cavity_dim, self.truncation.ancilla_dim)
