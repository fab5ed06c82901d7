import numpy as np
import pytest
import yaml
from pydantic import ValidationError

from floquet_snap.logger import coerce_numeric
from floquet_snap.models import NoiseSpec, ScenarioConfig, SystemParams, parse_state, state_name
from floquet_snap.units import ghz, mhz, per_us, rate_from_us, to_mhz


def load(path):
    with open(path) as f:
        return yaml.safe_load(f)


def test_default_config_parses(default_config_path):
    config = ScenarioConfig.model_validate(load(default_config_path))
    assert config.dynamics_params().dims == (12, 8)
    assert config.static_params().dims == (20, 12)
    assert config.drive.to_sideband().omega_d == pytest.approx(ghz(7.56))


def test_ramp_must_be_shorter_than_gate(default_config_path):
    data = load(default_config_path)
    data["drive"]["t_r_ns"] = 2.0 * data["drive"]["t_g_ns"]
    with pytest.raises(ValidationError) as info:
        ScenarioConfig.model_validate(data)
    assert any(error["loc"][0] == "drive" for error in info.value.errors())


def test_subspace_must_fit_truncation(default_config_path):
    data = load(default_config_path)
    data["drive"]["n_c"] = data["truncation"]["cavity_dim"]
    with pytest.raises(ValidationError):
        ScenarioConfig.model_validate(data)


def test_frequency_out_of_range(default_config_path):
    data = load(default_config_path)
    data["system"]["omega_q_bare_GHz"] = 250.0
    with pytest.raises(ValidationError):
        ScenarioConfig.model_validate(data)


def test_unknown_keys_rejected(default_config_path):
    data = load(default_config_path)
    data["drive"]["epsilon_MHz"] = 800.0
    with pytest.raises(ValidationError):
        ScenarioConfig.model_validate(data)


def test_participation_order():
    with pytest.raises(ValidationError):
        SystemParams.from_ghz(4.5, 6.6, 26.0, phi_c=0.4, phi_q=0.357)


def test_noise_conversion(default_config_path):
    noise = ScenarioConfig.model_validate(load(default_config_path)).noise.to_noise()
    assert noise.gamma_q == pytest.approx(1.0 / 300e3)
    assert noise.gamma_phi_q == pytest.approx(1.0 / 500e3)
    assert noise.temperature == pytest.approx(0.05)
    assert to_mhz(noise.zero_frequency_floor) == pytest.approx(1e-3)


def test_spectral_density_white_and_tabulated():
    white = NoiseSpec(gamma_q=0.02)
    assert white.spectral_density(3.0) == pytest.approx(0.02 / (2 * np.pi))
    assert white.spectral_density(-1.0) == 0.0

    table = NoiseSpec(spectrum_omega=[0.0, 10.0], spectrum_values=[0.0, 1.0])
    assert table.spectral_density(5.0) == pytest.approx(0.5)
    with pytest.raises(ValidationError):
        NoiseSpec(spectrum_omega=[0.0, 1.0])


def test_state_names():
    assert state_name((1, 3)) == "e3"
    assert parse_state("h0") == (3, 0)


def test_units():
    assert mhz(1000.0) == pytest.approx(ghz(1.0))
    assert rate_from_us(0.0) == 0.0
    assert per_us(rate_from_us(2.0)) == pytest.approx(0.5)


def test_coerce_numeric():
    assert coerce_numeric(np.float64(1.5)) == 1.5
    assert coerce_numeric(1 + 2j) == {"re": 1.0, "im": 2.0}
    assert coerce_numeric(np.zeros((10, 10)))["shape"] == [10, 10]
    assert coerce_numeric(np.array([1, 2])) == [1, 2]
