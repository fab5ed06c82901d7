import numpy as np
import pytest
from pydantic import ValidationError
from scipy.integrate import quad

from floquet_snap.errors import CalibrationError, ScheduleError
from floquet_snap.models import SidebandConfig
from floquet_snap.pulses import (
    EDGE, EnvelopeKind, PulseSchedule, Segment, calibrate_gaussian_amplitude, gaussian_area, gaussian_segment,
    sideband_schedule, spline_knots, spline_segment,
)
from floquet_snap.units import TWO_PI


def test_plain_gaussian_edges():
    seg = gaussian_segment(0.0, 40.0, amplitude=2.0, carrier=0.0, edge_subtracted=False)
    assert seg.envelope(20.0) == pytest.approx(2.0)
    assert seg.envelope(0.0) == pytest.approx(2.0 * EDGE)
    assert seg.envelope(40.0) == pytest.approx(2.0 * EDGE)


def test_edge_subtracted_gaussian_vanishes_at_ends():
    seg = gaussian_segment(5.0, 40.0, amplitude=1.5, carrier=0.0)
    assert seg.envelope(5.0) == pytest.approx(0.0, abs=1e-12)
    assert seg.envelope(45.0) == pytest.approx(0.0, abs=1e-12)
    assert seg.envelope(25.0) == pytest.approx(1.5)
    assert seg.envelope(60.0) == 0.0


@pytest.mark.parametrize("edge_subtracted", [True, False])
def test_gaussian_area(edge_subtracted):
    seg = gaussian_segment(0.0, 100.0, amplitude=1.0, carrier=0.0, edge_subtracted=edge_subtracted)
    numeric, _ = quad(lambda t: float(seg.envelope(t)), 0.0, 100.0)
    assert gaussian_area(25.0, edge_subtracted) == pytest.approx(numeric, rel=1e-8)


def test_calibration_gives_two_pi_area():
    element = 0.8 * np.exp(0.3j)
    peak = calibrate_gaussian_amplitude(element, 200.0)
    assert abs(element) * peak * gaussian_area(50.0) == pytest.approx(TWO_PI)
    with pytest.raises(CalibrationError):
        calibrate_gaussian_amplitude(0.0, 200.0)


def test_ramps():
    up = Segment(start=0.0, duration=10.0, kind=EnvelopeKind.RAMP_UP, amplitude=3.0)
    down = Segment(start=0.0, duration=10.0, kind=EnvelopeKind.RAMP_DOWN, amplitude=3.0)
    assert up.envelope(0.0) == pytest.approx(0.0)
    assert up.envelope(10.0) == pytest.approx(3.0)
    assert down.envelope(0.0) == pytest.approx(3.0)
    assert down.envelope(10.0) == pytest.approx(0.0, abs=1e-12)
    assert up.envelope(5.0) == pytest.approx(1.5)


def test_sideband_schedule_layout():
    sideband = SidebandConfig(amplitude=5.0, omega_d=47.5, ramp_time=10.0)
    schedule = sideband_schedule(sideband, flat_time=100.0)
    assert schedule.total_duration == pytest.approx(120.0)
    assert schedule.evaluate("ancilla", 60.0) == pytest.approx(5.0)
    assert schedule.evaluate("ancilla", 10.0) == pytest.approx(5.0)
    assert schedule.evaluate("ancilla", 0.0) == pytest.approx(0.0)
    assert schedule.evaluate("ancilla", 120.0) == pytest.approx(0.0, abs=1e-12)
    assert schedule.breakpoints() == [0.0, 10.0, 110.0, 120.0]
    np.testing.assert_allclose(schedule.waveform("ancilla", np.array([60.0])), 5.0 * np.cos(47.5 * 60.0))


def test_no_ramp_sideband_schedule():
    sideband = SidebandConfig(amplitude=5.0, omega_d=47.5, ramp_time=0.0)
    schedule = sideband_schedule(sideband, flat_time=50.0)
    assert len(schedule.segments) == 1
    assert schedule.segments[0].kind == EnvelopeKind.FLAT_TOP


def test_overlap_rejected():
    a = Segment(start=0.0, duration=10.0, kind=EnvelopeKind.CONSTANT, amplitude=1.0)
    b = Segment(start=5.0, duration=10.0, kind=EnvelopeKind.CONSTANT, amplitude=1.0)
    with pytest.raises(ValidationError):
        PulseSchedule(segments=[a, b], total_duration=20.0)
    # Different channels may coexist
    c = b.model_copy(update={"channel": "cavity"})
    PulseSchedule(segments=[a, c], total_duration=20.0)


def test_discontinuous_join_rejected():
    a = Segment(start=0.0, duration=10.0, kind=EnvelopeKind.CONSTANT, amplitude=1.0)
    b = Segment(start=10.0, duration=10.0, kind=EnvelopeKind.CONSTANT, amplitude=2.0)
    with pytest.raises(ValidationError):
        PulseSchedule(segments=[a, b], total_duration=20.0)


def test_segment_beyond_total_rejected():
    a = Segment(start=0.0, duration=10.0, kind=EnvelopeKind.CONSTANT, amplitude=1.0)
    with pytest.raises(ValidationError):
        PulseSchedule(segments=[a], total_duration=5.0)


def test_evaluate_outside_support():
    schedule = PulseSchedule(segments=[], total_duration=10.0)
    assert schedule.evaluate("ancilla", 3.0) == 0.0
    with pytest.raises(ScheduleError):
        schedule.evaluate("ancilla", 11.0)


def test_spline_bounded_by_coefficients_and_pinned():
    free = [0.3, -0.2, 0.8, 0.1, 0.5]
    seg = spline_segment(2.0, 30.0, free, carrier=0.0)
    t = np.linspace(2.0, 32.0, 301)
    values = seg.envelope(t)
    assert values[0] == pytest.approx(0.0, abs=1e-12)
    assert values[-1] == pytest.approx(0.0, abs=1e-12)
    assert values.max() <= max(free) + 1e-12
    assert values.min() >= min(free + [0.0]) - 1e-12


def test_spline_coefficient_count_checked():
    knots = spline_knots(3, 10.0).tolist()
    with pytest.raises(ValidationError):
        Segment(start=0.0, duration=10.0, kind=EnvelopeKind.SPLINE, knots=knots, coefficients=[0.0, 1.0])


def test_scaled_and_shifted():
    sideband = SidebandConfig(amplitude=2.0, omega_d=10.0, ramp_time=5.0)
    schedule = sideband_schedule(sideband, flat_time=20.0)
    assert schedule.scaled(0.5).evaluate("ancilla", 15.0) == pytest.approx(1.0)
    moved = schedule.shifted(7.0)
    assert moved.total_duration == pytest.approx(37.0)
    assert moved.evaluate("ancilla", 22.0) == pytest.approx(2.0)
