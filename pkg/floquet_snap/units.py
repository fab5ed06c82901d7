"""
Unit conversions. Internal units are rad/ns for frequencies, ns for times and 1/ns for rates.
"""
import numpy as np

TWO_PI = 2.0 * np.pi


def ghz(value):
    """Ordinary frequency in GHz to angular frequency in rad/ns."""
    return TWO_PI * np.asarray(value, dtype=float) if np.ndim(value) else TWO_PI * float(value)


def mhz(value):
    """Ordinary frequency in MHz to angular frequency in rad/ns."""
    return ghz(value) * 1e-3


def to_ghz(omega):
    return np.asarray(omega) / TWO_PI if np.ndim(omega) else float(omega) / TWO_PI


def to_mhz(omega):
    return to_ghz(omega) * 1e3


def per_us(rate):
    """Rate in 1/ns to 1/us."""
    return rate * 1e3


def rate_from_us(time_us: float) -> float:
    """Characteristic time in us to a rate in 1/ns; non-positive or infinite time means no decay."""
    if time_us is None or not np.isfinite(time_us) or time_us <= 0:
        return 0.0
    return 1.0 / (time_us * 1e3)
