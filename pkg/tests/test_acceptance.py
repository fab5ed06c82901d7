"""
Reference-parameter runs. Minutes to hours each; select with `pytest -m slow`.
"""
import numpy as np
import pandas as pd
import pytest

from floquet_snap.cli import load_config
from floquet_snap.hamiltonians import static_system
from floquet_snap.runner import ScenarioRunner
from floquet_snap.units import to_ghz, to_mhz

pytestmark = pytest.mark.slow


@pytest.fixture(scope="module")
def config(request):
    return load_config(str(request.config.rootpath / "config" / "default.yaml"))


def runner_for(config, tmp_path, **overrides):
    if overrides:
        config = config.model_copy(update=overrides)
    return ScenarioRunner(config, output_dir=str(tmp_path))


def test_dressed_parameters(config):
    _, _, dressed = static_system(config.static_params())
    assert to_ghz(dressed.omega_q) == pytest.approx(6.4, rel=0.02)
    assert to_ghz(dressed.omega_c) == pytest.approx(4.5, rel=0.02)
    assert to_mhz(dressed.alpha) == pytest.approx(-230.0, rel=0.02)
    assert abs(to_mhz(dressed.chi_0)) == pytest.approx(0.14, rel=0.02)


def test_driven_dispersive_shift_and_sideband_fit(config, tmp_path):
    summary = runner_for(config, tmp_path).run("dispersive-sweep")
    assert abs(summary["chi_d_exact_MHz"]) == pytest.approx(1.4, rel=0.1)
    assert summary["omega_e_fit_MHz"] == pytest.approx(5.3, rel=0.1)
    assert abs(summary["delta_e_fit_MHz"]) == pytest.approx(6.8, rel=0.1)
    assert abs(summary["chi_d_fit_MHz"]) == pytest.approx(1.2, rel=0.1)
    assert abs(summary["chi_d_fit_MHz"]) < abs(summary["chi_d_exact_MHz"])


def test_floquet_snap_beats_standard_snap(config, tmp_path):
    summary = runner_for(config, tmp_path).run("floquet-snap")
    assert summary["floquet"]["fidelity"] == pytest.approx(0.998, abs=0.002)
    assert summary["standard"]["fidelity"] == pytest.approx(0.843, abs=0.01)


def test_inverse_purcell_dip(config, tmp_path):
    summary = runner_for(config, tmp_path).run("purcell")
    assert summary["excited_minimum_delta_MHz"] == pytest.approx(-300.0, abs=10.0)
    assert summary["excited_lindblad_minimum_delta_MHz"] == pytest.approx(-300.0, abs=10.0)

    frame = pd.read_csv(tmp_path / "purcell.csv")
    g, alpha = 30.0, -300.0
    away = (frame["delta_MHz"].abs() > 3 * g) & ((frame["delta_MHz"] + alpha).abs() > 3 * g)
    rows = frame[away]
    assert rows["gamma_ground_lindblad_per_us"].notna().all()
    for state in ("ground", "excited"):
        np.testing.assert_allclose(rows[f"gamma_{state}_lindblad_per_us"], rows[f"gamma_{state}_analytic_per_us"],
                                   rtol=0.1, atol=0.02)


def test_optimal_control_pipeline(config, tmp_path):
    optimized = runner_for(config, tmp_path / "optimize").run("qoc-optimize")
    assert optimized["cost"] >= 0.99

    checkpoint = str(tmp_path / "optimize" / "qoc_pulse.yaml")
    qoc = config.qoc.model_copy(update={"checkpoint": checkpoint})
    validated = runner_for(config, tmp_path / "validate", qoc=qoc).run("qoc-validate")
    assert validated["fidelity"] == pytest.approx(optimized["cost"], abs=0.005)
    np.testing.assert_allclose(validated["phase_differences_rad"], np.pi, atol=0.02)

    fock = runner_for(config, tmp_path / "fock", qoc=qoc).run("open-fock-prep")
    assert fock["closed_fidelity_approx"] >= 0.999
    assert fock["open_fidelity_approx"] == pytest.approx(0.9956, abs=0.003)

    full = runner_for(config, tmp_path / "fock-full", qoc=qoc).run("fock-prep")
    assert fock["closed_fidelity_approx"] == pytest.approx(full["qoc"]["fidelity_approx"], abs=0.005)
