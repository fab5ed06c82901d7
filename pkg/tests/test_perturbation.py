import numpy as np
import pytest

from floquet_snap.errors import ConfigurationError, SingularityError
from floquet_snap.hamiltonians import effective_coupling
from floquet_snap.models import Branch, DeltaEConvention, DressedParams, SystemParams
from floquet_snap.perturbation import (
    SidebandParams, bbq_sideband_rate, dephasing_corrections, dispersive_shifts, dressed_decay_rate, driven_chi,
    ladder_corrections, purcell_rates, shot_noise_dephasing, sideband_params,
)
from floquet_snap.units import ghz, mhz, to_mhz


@pytest.fixture
def fitted():
    return SidebandParams.from_fit(mhz(5.3), mhz(6.8))


@pytest.fixture
def dressed():
    return DressedParams(omega_q=ghz(6.4), omega_c=ghz(4.5), alpha=mhz(-230.0), chi_0=mhz(-0.14))


def test_driven_chi_from_fitted_sideband(fitted):
    chi_d = driven_chi(mhz(-0.14), fitted)
    assert to_mhz(chi_d) == pytest.approx(-0.14 - 5.3 ** 2 / (4 * 6.8), rel=1e-9)
    assert abs(to_mhz(chi_d)) == pytest.approx(1.2, rel=0.05)


def test_driven_chi_g_branch_adds():
    sb = SidebandParams.from_fit(mhz(2.0), mhz(10.0), branch=Branch.G_F)
    assert driven_chi(mhz(-0.1), sb) == pytest.approx(mhz(-0.1) + mhz(2.0) ** 2 / (4 * mhz(10.0)))


def test_driven_chi_singular_at_resonance():
    with pytest.raises(SingularityError):
        driven_chi(mhz(-0.14), SidebandParams.from_fit(mhz(5.3), 0.0))


def test_dressed_decay_rate(fitted):
    gamma = 1.0 / 300e3
    assert dressed_decay_rate(fitted, gamma) == pytest.approx(3 * (5.3 / 6.8) ** 2 / 4 * gamma)
    assert dressed_decay_rate(fitted, gamma) / gamma == pytest.approx(0.4556, abs=1e-4)


def test_sideband_detuning_conventions(dressed):
    epsilon, omega_d = mhz(800.0), ghz(7.56)
    three = sideband_params(dressed, mhz(40.0), epsilon, omega_d)
    two = sideband_params(dressed, mhz(40.0), epsilon, omega_d, DeltaEConvention.TWO_ALPHA)
    delta_q = dressed.omega_q - omega_d
    assert three.delta_g == pytest.approx(dressed.delta + delta_q + dressed.alpha)
    assert three.delta_e - two.delta_e == pytest.approx(dressed.alpha)
    assert three.rate_e / three.rate_g == pytest.approx(
        np.sqrt(3.0) * dressed.delta / (dressed.delta + 2 * dressed.alpha))


def test_ladder_term_counts(dressed, fitted):
    both = sideband_params(dressed, mhz(40.0), mhz(800.0), ghz(7.56))
    assert len(ladder_corrections(both, order=1)) == 6
    assert len(ladder_corrections(fitted, order=1)) == 3

    (second,) = ladder_corrections(fitted, order=2)
    assert second.prefactor == pytest.approx(-0.125 * (5.3 / 6.8) ** 2)
    assert second.cavity == "n"

    with pytest.raises(ConfigurationError):
        ladder_corrections(fitted, order=3)


def test_ladder_term_matrix_shape(fitted):
    term = ladder_corrections(fitted, order=1)[0]
    assert term.matrix(4, 3).shape == (12, 12)
    with pytest.raises(ConfigurationError):
        term.matrix(3, 3)


def test_dephasing_corrections_pair_up(fitted):
    terms = dephasing_corrections(fitted)
    assert len(terms) == 2
    assert terms[0].frequency == pytest.approx(-terms[1].frequency)


def test_dispersive_shifts_limits():
    g, delta, alpha = mhz(40.0), ghz(1.9), mhz(-230.0)
    chi_g, chi_e, chi_f = dispersive_shifts(g, delta, alpha)
    assert chi_e - chi_g == pytest.approx(2 * g ** 2 * alpha / (delta * (delta + alpha)))
    # Harmonic limit: every level shifts the cavity by the same amount per excitation
    chi_g, chi_e, chi_f = dispersive_shifts(g, delta, 0.0)
    assert chi_e - chi_g == pytest.approx(0.0, abs=1e-15)
    assert chi_f - chi_e == pytest.approx(0.0, abs=1e-15)
    with pytest.raises(SingularityError):
        dispersive_shifts(g, 0.0, alpha)


def test_purcell_vanishes_when_delta_equals_alpha():
    # omega_q - omega_c == alpha exactly
    dressed = DressedParams(omega_q=1.0, omega_c=1.3, alpha=1.0 - 1.3, chi_0=0.0)
    assert purcell_rates(dressed, 0.01, 1e-5, "e") == pytest.approx(0.0, abs=1e-25)
    assert purcell_rates(dressed, 0.01, 1e-5, "g") == pytest.approx((0.01 / 0.3) ** 2 * 1e-5)


def test_purcell_singular_at_straddling_point():
    dressed = DressedParams(omega_q=1.3, omega_c=1.0, alpha=-(1.3 - 1.0), chi_0=0.0)
    with pytest.raises(SingularityError):
        purcell_rates(dressed, 0.01, 1e-5, "e")
    with pytest.raises(ConfigurationError):
        purcell_rates(dressed, 0.01, 1e-5, "f")


def test_large_detuning_rate_matches_bbq_form():
    params = SystemParams.from_ghz(4.5, 6.5, 26.0, 0.0053, 0.357)
    dressed = DressedParams(omega_q=ghz(6.5), omega_c=ghz(4.5), alpha=mhz(-10.0), chi_0=0.0)
    assert dressed.delta == pytest.approx(-200 * dressed.alpha)
    g = effective_coupling(params, dressed)
    epsilon = mhz(500.0)
    sb = sideband_params(dressed, g, epsilon, ghz(7.0))
    assert abs(sb.rate_g) / np.sqrt(2.0) == pytest.approx(abs(bbq_sideband_rate(params, epsilon, dressed.delta)),
                                                          rel=0.02)


def test_shot_noise_dephasing_range():
    assert shot_noise_dephasing(0.2, 1e-5) == pytest.approx(2e-6)
    with pytest.raises(ConfigurationError):
        shot_noise_dephasing(1.5, 1e-5)
