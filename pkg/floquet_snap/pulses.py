"""
Pulse schedules: envelopes, carriers and Gaussian calibration.
"""
from pydantic import BaseModel, ConfigDict, Field, model_validator
from typing import Dict, List, Optional, Sequence
from enum import Enum
import numpy as np
from scipy.interpolate import BSpline
from scipy.special import erf

from floquet_snap.errors import CalibrationError, ConfigurationError, ScheduleError
from floquet_snap.logger import get_logger
from floquet_snap.models import SidebandConfig
from floquet_snap.units import TWO_PI

logger = get_logger(__name__)

SPLINE_DEGREE = 3
TIME_TOLERANCE = 1e-9
CONTINUITY_TOLERANCE = 1e-9
EDGE = np.exp(-2.0)


class EnvelopeKind(str, Enum):
    """Envelope shapes."""
    RAMP_UP = "ramp_up"
    RAMP_DOWN = "ramp_down"
    FLAT_TOP = "flat_top"
    GAUSSIAN = "gaussian"
    SPLINE = "spline"
    CONSTANT = "constant"


class Segment(BaseModel):
    """One envelope on one channel. Times in ns, amplitude in rad/ns, carrier in rad/ns."""
    model_config = ConfigDict(frozen=True, extra="forbid")

    start: float = Field(..., ge=0)
    duration: float = Field(..., gt=0)
    kind: EnvelopeKind
    amplitude: float = 0.0
    carrier: float = Field(0.0, ge=0)
    phase: float = 0.0
    channel: str = "ancilla"
    edge_subtracted: bool = True
    knots: Optional[List[float]] = Field(None, description="Spline knots relative to segment start")
    coefficients: Optional[List[float]] = None

    @model_validator(mode="after")
    def check_spline(self):
        if self.kind != EnvelopeKind.SPLINE:
            return self
        if self.knots is None or self.coefficients is None:
            raise ValueError("spline segment needs knots and coefficients")
        knots = np.asarray(self.knots)
        if np.any(np.diff(knots) < 0):
            raise ValueError("spline knot vector must be non-decreasing")
        if not np.all(np.isfinite(self.coefficients)):
            raise ValueError("spline coefficients must be finite")
        if len(self.coefficients) != len(knots) - SPLINE_DEGREE - 1:
            raise ValueError(
                f"{len(self.coefficients)} coefficients do not match {len(knots)} knots for a cubic spline")
        return self

    @property
    def end(self) -> float:
        return self.start + self.duration

    @property
    def sigma(self) -> float:
        """Gaussian width; the segment spans 4 sigma."""
        return self.duration / 4.0

    def contains(self, t) -> np.ndarray:
        tau = np.asarray(t, dtype=float) - self.start
        return (tau >= -TIME_TOLERANCE) & (tau <= self.duration + TIME_TOLERANCE)

    def envelope(self, t) -> np.ndarray:
        """Envelope at absolute times t; zero outside the segment."""
        t = np.asarray(t, dtype=float)
        inside = self.contains(t)
        tau = np.clip(t - self.start, 0.0, self.duration)

        if self.kind in (EnvelopeKind.FLAT_TOP, EnvelopeKind.CONSTANT):
            shape = np.ones_like(tau)
        elif self.kind == EnvelopeKind.RAMP_UP:
            shape = np.sin(np.pi * tau / (2.0 * self.duration)) ** 2
        elif self.kind == EnvelopeKind.RAMP_DOWN:
            shape = np.cos(np.pi * tau / (2.0 * self.duration)) ** 2
        elif self.kind == EnvelopeKind.GAUSSIAN:
            shape = np.exp(-((tau - 2.0 * self.sigma) ** 2) / (2.0 * self.sigma ** 2))
            if self.edge_subtracted:
                shape = (shape - EDGE) / (1.0 - EDGE)
        else:
            spline = BSpline(np.asarray(self.knots), np.asarray(self.coefficients), SPLINE_DEGREE, extrapolate=False)
            shape = np.nan_to_num(spline(tau))

        return np.where(inside, self.amplitude * shape, 0.0)

    def waveform(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        return self.envelope(t) * np.cos(self.carrier * t + self.phase)

    def scaled(self, factor: float) -> "Segment":
        return self.model_copy(update={"amplitude": self.amplitude * factor})


class PulseSchedule(BaseModel):
    """Segments on one or more channels over [0, total_duration]."""
    model_config = ConfigDict(frozen=True, extra="forbid")

    segments: List[Segment] = Field(default_factory=list)
    total_duration: float = Field(..., ge=0)

    @model_validator(mode="after")
    def check_layout(self):
        for seg in self.segments:
            if seg.end > self.total_duration + TIME_TOLERANCE:
                raise ValueError(f"segment {seg.kind.value} ends at {seg.end} beyond {self.total_duration}")
        for channel in self.channels():
            ordered = sorted(self.on_channel(channel), key=lambda s: s.start)
            for left, right in zip(ordered, ordered[1:]):
                if left.end > right.start + TIME_TOLERANCE:
                    raise ValueError(f"segments overlap on channel '{channel}' at t={right.start}")
                # Adjacent segments must join continuously
                if abs(left.end - right.start) <= TIME_TOLERANCE:
                    peak = max(abs(left.amplitude), abs(right.amplitude), 1e-300)
                    jump = abs(float(left.envelope(left.end)) - float(right.envelope(right.start)))
                    if jump > CONTINUITY_TOLERANCE * peak:
                        raise ValueError(f"envelope jumps by {jump:.3e} on channel '{channel}' at t={right.start}")
        return self

    def channels(self) -> List[str]:
        return sorted({s.channel for s in self.segments})

    def on_channel(self, channel: str) -> List[Segment]:
        return [s for s in self.segments if s.channel == channel]

    def _check_time(self, t: np.ndarray):
        if np.any(t < -TIME_TOLERANCE) or np.any(t > self.total_duration + TIME_TOLERANCE):
            raise ScheduleError(f"time outside schedule support [0, {self.total_duration}]")

    def _sum(self, channel: str, t, carrier: bool):
        t_arr = np.asarray(t, dtype=float)
        self._check_time(t_arr)
        value = np.zeros_like(t_arr)
        claimed = np.zeros(t_arr.shape, dtype=bool)
        # A shared boundary belongs to the earlier segment only
        for seg in sorted(self.on_channel(channel), key=lambda s: s.start):
            inside = seg.contains(t_arr)
            part = seg.waveform(t_arr) if carrier else seg.envelope(t_arr)
            value = value + np.where(inside & ~claimed, part, 0.0)
            claimed |= inside
        return float(value) if np.ndim(t) == 0 else value

    def evaluate(self, channel: str, t):
        """Envelope on `channel` at t (scalar or array)."""
        return self._sum(channel, t, carrier=False)

    def waveform(self, channel: str, t):
        """Envelope times carrier on `channel` at t."""
        return self._sum(channel, t, carrier=True)

    def breakpoints(self) -> List[float]:
        points = {0.0, float(self.total_duration)}
        for seg in self.segments:
            points.update((seg.start, seg.end))
        return sorted(points)

    def max_carrier(self) -> float:
        return max((s.carrier for s in self.segments), default=0.0)

    def active(self, t0: float, t1: float) -> List[Segment]:
        """Segments overlapping (t0, t1)."""
        return [s for s in self.segments if s.start < t1 - TIME_TOLERANCE and s.end > t0 + TIME_TOLERANCE]

    def scaled(self, factor: float) -> "PulseSchedule":
        return PulseSchedule(segments=[s.scaled(factor) for s in self.segments], total_duration=self.total_duration)

    def shifted(self, offset: float, total_duration: Optional[float] = None) -> "PulseSchedule":
        """Move every segment by `offset`; carrier phases are kept relative to absolute time."""
        moved = [s.model_copy(update={"start": s.start + offset}) for s in self.segments]
        return PulseSchedule(segments=moved, total_duration=total_duration or self.total_duration + offset)

    def merged(self, other: "PulseSchedule") -> "PulseSchedule":
        return PulseSchedule(segments=list(self.segments) + list(other.segments),
                             total_duration=max(self.total_duration, other.total_duration))

    def to_dict(self) -> Dict:
        return self.model_dump(mode="json")

    @classmethod
    def from_dict(cls, data: Dict) -> "PulseSchedule":
        return cls.model_validate(data)


# ============================================================================
#  Builders
# ============================================================================

def sideband_schedule(sideband: SidebandConfig, flat_time: float, phase: float = 0.0,
                      channel: str = "ancilla", start: float = 0.0) -> PulseSchedule:
    """Ramp-up over t_r, flat-top for `flat_time`, ramp-down over t_r."""
    t_r = sideband.ramp_time
    common = dict(amplitude=sideband.amplitude, carrier=sideband.omega_d, phase=phase, channel=channel)
    segments = []
    if t_r > 0:
        segments.append(Segment(start=start, duration=t_r, kind=EnvelopeKind.RAMP_UP, **common))
    if flat_time > 0:
        segments.append(Segment(start=start + t_r, duration=flat_time, kind=EnvelopeKind.FLAT_TOP, **common))
    if t_r > 0:
        segments.append(Segment(start=start + t_r + flat_time, duration=t_r, kind=EnvelopeKind.RAMP_DOWN, **common))
    return PulseSchedule(segments=segments, total_duration=start + 2 * t_r + flat_time)


def gaussian_area(sigma: float, edge_subtracted: bool = True) -> float:
    """Integral of the unit-peak Gaussian over [-2 sigma, 2 sigma]."""
    plain = sigma * np.sqrt(TWO_PI) * erf(np.sqrt(2.0))
    if not edge_subtracted:
        return float(plain)
    return float((plain - 4.0 * sigma * EDGE) / (1.0 - EDGE))


def calibrate_gaussian_amplitude(matrix_element: complex, gate_time: float, edge_subtracted: bool = True,
                                 kind: EnvelopeKind = EnvelopeKind.GAUSSIAN, area: float = TWO_PI) -> float:
    """
    Peak amplitude giving |M| * integral(envelope) = `area` for an envelope of length gate_time.

    Raises:
        CalibrationError: if the matrix element vanishes
    """
    if gate_time <= 0:
        raise ConfigurationError(f"gate_time must be positive, got {gate_time}")
    magnitude = abs(matrix_element)
    if magnitude < 1e-14:
        raise CalibrationError("cannot calibrate against a vanishing matrix element")

    if kind == EnvelopeKind.GAUSSIAN:
        envelope_area = gaussian_area(gate_time / 4.0, edge_subtracted)
    elif kind in (EnvelopeKind.FLAT_TOP, EnvelopeKind.CONSTANT):
        envelope_area = gate_time
    else:
        raise ConfigurationError(f"calibration not defined for envelope '{kind.value}'")

    peak = area / (magnitude * envelope_area)
    logger.debug("Calibrated pulse amplitude", matrix_element=magnitude, gate_time=gate_time, peak=peak)
    return float(peak)


def gaussian_segment(start: float, duration: float, amplitude: float, carrier: float, phase: float = 0.0,
                     channel: str = "ancilla", edge_subtracted: bool = True) -> Segment:
    return Segment(start=start, duration=duration, kind=EnvelopeKind.GAUSSIAN, amplitude=amplitude,
                   carrier=carrier, phase=phase, channel=channel, edge_subtracted=edge_subtracted)


def spline_knots(n_interior: int, duration: float) -> np.ndarray:
    """Clamped uniform cubic knot vector with n_interior interior knots on [0, duration]."""
    if n_interior < 0 or duration <= 0:
        raise ConfigurationError("spline needs n_interior >= 0 and positive duration")
    inner = np.linspace(0.0, duration, n_interior + 2)[1:-1]
    return np.concatenate([np.zeros(SPLINE_DEGREE + 1), inner, np.full(SPLINE_DEGREE + 1, duration)])


def spline_basis_count(knots: Sequence[float]) -> int:
    return len(knots) - SPLINE_DEGREE - 1


def spline_design_matrix(knots: np.ndarray, t: np.ndarray) -> np.ndarray:
    """B[i, j] = B_j(t_i) for the cubic basis on `knots`."""
    t = np.clip(np.asarray(t, dtype=float), knots[0], knots[-1])
    return BSpline.design_matrix(t, knots, SPLINE_DEGREE).toarray()


def pinned_coefficients(free: Sequence[float]) -> List[float]:
    """Zero end coefficients so the spline starts and ends at zero."""
    return [0.0] + [float(c) for c in free] + [0.0]


def spline_segment(start: float, duration: float, free_coefficients: Sequence[float], carrier: float,
                   phase: float = 0.0, channel: str = "ancilla", n_interior: Optional[int] = None) -> Segment:
    n_interior = len(free_coefficients) - 2 if n_interior is None else n_interior
    knots = spline_knots(n_interior, duration)
    coefficients = pinned_coefficients(free_coefficients)
    return Segment(start=start, duration=duration, kind=EnvelopeKind.SPLINE, amplitude=1.0, carrier=carrier,
                   phase=phase, channel=channel, knots=knots.tolist(), coefficients=coefficients)
