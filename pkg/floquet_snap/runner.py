"""
Scenario orchestrator.
Builds the system once per run, executes one named scenario and writes its CSV tables,
result.yaml summary and NDJSON run log into the artifact directory.
"""
import json
import os
import uuid
from datetime import datetime, timezone
from typing import Any, Callable, Dict, Optional

import numpy as np
import pandas as pd
import yaml

from floquet_snap.config import settings
from floquet_snap.dynamics import (
    DrivenSystem, build_snap_sequence, fidelity_vs_duration, fock_preparation_sequence, ideal_fock_preparation,
    fock_fidelity, ramp_adiabaticity_sweep, simulate_fock_preparation, snap_gate, snap_operator, wigner,
)
from floquet_snap.errors import ConfigurationError
from floquet_snap.floquet import (
    dispersive_shift_sweep, fit_sideband_params, matrix_elements_auto, sideband_overlap_curve,
)
from floquet_snap.hamiltonians import Operator, ancilla_lowering, effective_coupling, static_system
from floquet_snap.logger import coerce_numeric, get_logger
from floquet_snap.models import ScenarioConfig, ScenarioStatus, SnapMethod, state_name
from floquet_snap.open_systems import (
    decoherence_sweep, floquet_dispersive_shift, fm_qubit_ramsey, open_fock_preparation, open_gate_sweep,
    purcell_sweep,
)
from floquet_snap.perturbation import SidebandParams, driven_chi, ladder_corrections, sideband_params
from floquet_snap.qoc import (
    export_waveforms, interior_knot_count, load_checkpoint, optimize, qoc_model_from_system, qoc_sequence,
    save_checkpoint, validate_full,
)
from floquet_snap.units import TWO_PI, ghz, mhz, to_ghz, to_mhz

logger = get_logger(__name__)

# Scenario name -> (method, what it computes)
SCENARIOS: Dict[str, tuple] = {
    "dispersive-sweep": ("run_dispersive_sweep", "driven dispersive shift chi_d and per-photon ancilla shifts vs drive frequency, plus the sideband fit"),
    "matrix-elements": ("run_matrix_elements", "Floquet matrix elements of q with dominant Brillouin index and perturbative comparison"),
    "floquet-snap": ("run_floquet_snap", "closed-system Floquet and standard SNAP gate fidelities with Floquet-frame populations"),
    "fidelity-vs-duration": ("run_fidelity_vs_duration", "standard, Floquet and QOC SNAP fidelity across gate durations"),
    "qoc-optimize": ("run_qoc_optimize", "spline-parameterized optimal-control SNAP on the reduced Floquet model"),
    "qoc-validate": ("run_qoc_validate", "full-model validation of an optimized pulse with per-Fock phase trajectories"),
    "fock-prep": ("run_fock_prep", "closed-system Fock |1> preparation by displacement-SNAP-displacement with Wigner grids"),
    "open-fock-prep": ("run_open_fock_prep", "Fock |1> preparation with ancilla and cavity decoherence"),
    "decoherence-sweep": ("run_decoherence_sweep", "Floquet-Markov dressed decay, dephasing and ancilla excitation vs drive frequency"),
    "purcell": ("run_purcell", "inverse-Purcell cavity decay with the ancilla in |g> and |e> vs detuning"),
    "fm-qubit-ramsey": ("run_fm_qubit_ramsey", "Floquet-basis Ramsey decay of a resonantly driven qubit with and without pure dephasing"),
    "ramp-sweep": ("run_ramp_sweep", "adiabatic-mapping infidelity of the sideband ramp vs ramp time"),
    "open-gate-fidelity": ("run_open_gate_fidelity", "open-system QOC SNAP fidelity vs cavity subspace size"),
}


def _plain(value: Any) -> Any:
    """Recursively convert numpy containers for yaml.safe_dump."""
    if isinstance(value, dict):
        return {str(k): _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    if isinstance(value, np.ndarray):
        return _plain(value.tolist())
    return coerce_numeric(value)


class ScenarioRunner:
    """Executes one scenario against a validated configuration."""

    def __init__(self, config: ScenarioConfig, output_dir: Optional[str] = None, threads: Optional[int] = None,
                 seed: Optional[int] = None, include_pure_dephasing: bool = True):
        self.config = config
        self.run_id = str(uuid.uuid4())
        self.artifacts_dir = output_dir or config.output_dir or os.path.join(settings.artifacts_path, self.run_id)
        settings.ensure_directories(self.artifacts_dir)

        self.threads = threads or config.threads or settings.max_workers
        self.seed = config.seed if seed is None else seed
        self.include_pure_dephasing = include_pure_dephasing
        self.status = ScenarioStatus.PENDING
        self.log_entries = []
        self.artifacts = []
        self._system: Optional[DrivenSystem] = None

    def log(self, level: str, category: str, message: str, **kwargs):
        """Add structured log entry."""
        entry = {
            'ts': datetime.now(timezone.utc).isoformat(),
            'run_id': self.run_id,
            'level': level,
            'category': category,
            'message': message,
            **_plain(kwargs)
        }
        self.log_entries.append(entry)

        # Also log to structured logger
        log_func = getattr(logger, level.lower(), logger.info)
        log_func(message, category=category, **kwargs)

    def save_log(self):
        """Save log entries to NDJSON file."""
        log_file = os.path.join(self.artifacts_dir, 'run_log.ndjson')
        with open(log_file, 'w') as f:
            for entry in self.log_entries:
                f.write(json.dumps(entry, default=str) + '\n')
        logger.info("Run log saved", path=log_file)

    def write_csv(self, name: str, frame: pd.DataFrame) -> str:
        path = os.path.join(self.artifacts_dir, name)
        frame.to_csv(path, index=False, float_format="%.10g")
        self.artifacts.append(name)
        return path

    def write_result(self, scenario: str, summary: Dict[str, Any]) -> str:
        path = os.path.join(self.artifacts_dir, 'result.yaml')
        document = {
            'scenario': scenario,
            'run_id': self.run_id,
            'status': self.status.value,
            'seed': self.seed,
            'artifacts': list(self.artifacts),
            'summary': _plain(summary),
        }
        with open(path, 'w') as f:
            yaml.safe_dump(document, f, sort_keys=False)
        return path

    # ------------------------------------------------------------------
    #  Shared inputs
    # ------------------------------------------------------------------

    @property
    def sideband(self):
        return self.config.drive.to_sideband()

    @property
    def system(self) -> DrivenSystem:
        if self._system is None:
            self.log('INFO', 'setup', 'Building static system', dims=list(self.config.dynamics_params().dims))
            self._system = DrivenSystem.from_params(self.config.dynamics_params(), self.sideband)
            self.log('INFO', 'setup', 'Static system ready', **self._system.dressed.report())
        return self._system

    def coupling(self, system: DrivenSystem) -> float:
        g = self.config.drive.coupling_g_MHz
        return mhz(g) if g is not None else effective_coupling(system.params, system.dressed)

    def thetas(self) -> Dict[int, float]:
        return {int(n): float(theta) for n, theta in self.config.drive.snap_thetas_rad.items()}

    def load_pulse(self):
        path = self.config.qoc.checkpoint
        if not path or not os.path.exists(path):
            raise ConfigurationError(f"qoc.checkpoint '{path}' does not exist; run qoc-optimize first")
        return load_checkpoint(path)

    # ------------------------------------------------------------------
    #  Execution
    # ------------------------------------------------------------------

    def run(self, scenario: str) -> Dict[str, Any]:
        """Run one scenario; artifacts land in artifacts_dir."""
        if scenario not in SCENARIOS:
            raise ConfigurationError(f"unknown scenario '{scenario}'; choose from {sorted(SCENARIOS)}")
        method: Callable[[], Dict[str, Any]] = getattr(self, SCENARIOS[scenario][0])
        self.log('INFO', scenario, 'Starting scenario', threads=self.threads, seed=self.seed)
        self.status = ScenarioStatus.RUNNING
        try:
            summary = method()
            self.status = ScenarioStatus.COMPLETED
            self.write_result(scenario, summary)
            self.log('INFO', scenario, 'Scenario completed', artifacts=self.artifacts)
            return summary
        except Exception as e:
            self.status = ScenarioStatus.FAILED
            self.log('ERROR', scenario, f'Scenario failed: {str(e)}', error_type=type(e).__name__)
            raise
        finally:
            self.save_log()

    def run_dispersive_sweep(self) -> Dict[str, Any]:
        cfg, sweeps = self.config, self.config.sweeps
        params = cfg.dynamics_params()
        h, static, dressed = static_system(params)
        epsilon = ghz(cfg.drive.epsilon_GHz)
        grid = ghz(np.linspace(sweeps.omega_d_start_GHz, sweeps.omega_d_stop_GHz, sweeps.omega_d_points))
        sweep = dispersive_shift_sweep(params, epsilon, grid, sweeps.n_max, max_workers=self.threads)
        self.write_csv('dispersive_sweep.csv', sweep.to_frame())

        fit_grid = ghz(np.linspace(sweeps.fit_omega_d_start_GHz, sweeps.fit_omega_d_stop_GHz, sweeps.fit_points))
        omega, overlap = sideband_overlap_curve(params, epsilon, fit_grid, max_workers=self.threads)
        fit = fit_sideband_params(omega, overlap)
        self.write_csv('sideband_overlap.csv', pd.DataFrame({'omega_d_GHz': to_ghz(omega), 'overlap': overlap}))

        omega_d = ghz(cfg.drive.omega_d_GHz)
        fitted = SidebandParams.from_fit(fit.rate, float(fit.detuning(omega_d)))
        g = self.coupling(self.system)
        analytic = sideband_params(dressed, g, epsilon, omega_d, cfg.drive.delta_e_convention)
        index = int(np.argmin(np.abs(grid - omega_d)))
        self.log('INFO', 'dispersive-sweep', 'Sideband fit', rate_MHz=to_mhz(fit.rate),
                 rms_residual=fit.rms_residual)
        return {
            'dressed': dressed.report(),
            'chi_d_exact_MHz': to_mhz(sweep.chi_d[index]),
            'chi_d_fit_MHz': to_mhz(driven_chi(dressed.chi_0, fitted)),
            'omega_e_fit_MHz': to_mhz(fit.rate),
            'delta_e_fit_MHz': to_mhz(fitted.delta_e),
            'resonance_GHz': to_ghz(fit.omega_0),
            'omega_e_analytic_MHz': to_mhz(analytic.rate_e),
            'delta_e_analytic_MHz': to_mhz(analytic.delta_e),
            'invalid_points': int((~sweep.valid).sum()),
        }

    def run_matrix_elements(self) -> Dict[str, Any]:
        system, sideband, n_c = self.system, self.sideband, self.config.drive.n_c
        frame = system.floquet_frame(sideband.omega_d, sideband.amplitude)
        decomp = frame.decomposition
        labels = [(m, n) for m in range(4) for n in range(n_c + 1)]
        subset = [decomp.index(label, strict=False) for label in labels]
        table = matrix_elements_auto(Operator(ancilla_lowering(system.dims), system.dims), decomp, subset=subset)
        rows = [{
            'from': state_name(e.from_label), 'to': state_name(e.to_label), 'abs_M': abs(e.value),
            'phase_rad': float(np.angle(e.value)), 'k_max': e.k_max, 'freq_GHz': to_ghz(e.transition_freq),
        } for e in table.elements(min_magnitude=1e-3)]
        self.write_csv('matrix_elements.csv', pd.DataFrame(rows))

        sb = sideband_params(system.dressed, self.coupling(system), sideband.amplitude, sideband.omega_d,
                             self.config.drive.delta_e_convention)
        predicted = [{'term': t.descriptor, 'branch': t.branch.value if t.branch else '',
                      'abs_prefactor': abs(t.prefactor), 'freq_GHz': to_ghz(t.frequency)}
                     for order in (1, 2) for t in ladder_corrections(sb, order, system.dressed.omega_q,
                                                                       system.dressed.alpha)]
        self.write_csv('perturbative_elements.csv', pd.DataFrame(predicted))
        gh = table.element((0, 1), (3, 0))
        return {'elements': len(rows), 'window': list(table.window), 'a_dag_g_h_abs': abs(gh.value),
                'a_dag_g_h_k_max': gh.k_max, 'a_dag_g_h_freq_GHz': to_ghz(gh.transition_freq)}

    def run_floquet_snap(self) -> Dict[str, Any]:
        system, drive = self.system, self.config.drive
        thetas = self.thetas()
        target = snap_operator(thetas, drive.n_c)
        floquet = build_snap_sequence(system, self.sideband, thetas, drive.t_g_ns, SnapMethod.FLOQUET)
        result = snap_gate(system, floquet, drive.n_c, target, history=True)
        standard = snap_gate(system, build_snap_sequence(system, None, thetas, drive.t_g_ns, SnapMethod.STANDARD),
                             drive.n_c, target)

        history = result.history
        populations = pd.DataFrame(history.populations(), columns=[f'P_{state_name(l)}' for l in history.labels])
        populations.insert(0, 't_ns', history.times)
        self.write_csv('floquet_populations.csv', populations)
        self.write_csv('snap_fidelity.csv', pd.DataFrame([
            {'method': SnapMethod.FLOQUET.value, 't_g_ns': drive.t_g_ns, 'fidelity': result.fidelity,
             'leakage': result.leakage},
            {'method': SnapMethod.STANDARD.value, 't_g_ns': drive.t_g_ns, 'fidelity': standard.fidelity,
             'leakage': standard.leakage},
        ]))
        return {'floquet': result.summary(), 'standard': standard.summary()}

    def run_fidelity_vs_duration(self) -> Dict[str, Any]:
        system, sideband, cfg = self.system, self.sideband, self.config
        frame = system.floquet_frame(sideband.omega_d, sideband.amplitude)
        chi_d = abs(floquet_dispersive_shift(frame.decomposition, system))
        chi_0 = abs(system.dressed.chi_0)
        grid = np.linspace(TWO_PI / chi_d, 2.0 * TWO_PI / chi_0, cfg.sweeps.fidelity_duration_points)
        thetas = self.thetas()
        model = qoc_model_from_system(system, sideband, cfg.drive.n_c, cfg.qoc.magnitude_cutoff, cfg.qoc.rotating_wave)
        target = snap_operator(thetas, cfg.drive.n_c)

        def qoc_fidelity(t_g: float) -> float:
            pulse = optimize(model, t_g, target, init=cfg.qoc.init, max_iterations=cfg.qoc.max_iterations,
                             max_restarts=cfg.qoc.max_restarts, target_cost=cfg.qoc.target_cost, seed=self.seed,
                             n_interior=interior_knot_count(t_g, cfg.qoc.knots_per_quadrature))
            return pulse.cost

        frame_out = fidelity_vs_duration(system, sideband, grid, cfg.drive.n_c, qoc_fidelity, thetas)
        self.write_csv('fidelity_vs_duration.csv', frame_out)
        return {'t_g_ns': grid, 'chi_d_MHz': to_mhz(chi_d)}

    def run_qoc_optimize(self) -> Dict[str, Any]:
        system, qc = self.system, self.config.qoc
        model = qoc_model_from_system(system, self.sideband, qc.n_c, qc.magnitude_cutoff, qc.rotating_wave)
        self.write_csv('qoc_transitions.csv', pd.DataFrame(model.describe()))
        target = snap_operator(self.thetas(), qc.n_c)
        limit = mhz(qc.amplitude_limit_MHz) if qc.amplitude_limit_MHz else None
        pulse = optimize(model, qc.t_g_ns, target, init=qc.init, max_iterations=qc.max_iterations,
                         max_restarts=qc.max_restarts, target_cost=qc.target_cost, seed=self.seed,
                         n_interior=interior_knot_count(qc.t_g_ns, qc.knots_per_quadrature),
                         amplitude_penalty=qc.amplitude_penalty, amplitude_limit=limit)
        save_checkpoint(pulse, os.path.join(self.artifacts_dir, 'qoc_pulse.yaml'))
        export_waveforms(pulse, os.path.join(self.artifacts_dir, 'qoc_waveforms.csv'))
        self.artifacts += ['qoc_pulse.yaml', 'qoc_waveforms.csv']
        self.write_csv('qoc_convergence.csv', pd.DataFrame(pulse.log))
        self.log('INFO', 'qoc-optimize', 'Optimization finished', cost=pulse.cost, converged=pulse.converged,
                 restarts=pulse.restarts)
        return {'cost': pulse.cost, 'converged': pulse.converged, 'iterations': pulse.iterations,
                'restarts': pulse.restarts, 'transitions': len(model.rows), 'carrier_GHz': to_ghz(model.carrier)}

    def run_qoc_validate(self) -> Dict[str, Any]:
        pulse = self.load_pulse()
        target = snap_operator(self.thetas(), pulse.n_c)
        validation = validate_full(pulse, self.system, self.sideband, target)
        frame = pd.DataFrame({'t_ns': validation.phase_times})
        for n in range(pulse.n_c):
            frame[f'phi_{n}_rad'] = validation.phases[:, n]
        self.write_csv('qoc_phases.csv', frame)
        return {'fidelity': validation.fidelity, 'reduced_cost': pulse.cost,
                'phase_differences_rad': validation.phase_differences()}

    def run_fock_prep(self) -> Dict[str, Any]:
        system, drive, qc = self.system, self.config.drive, self.config.qoc
        dim = system.dims[1]
        methods = [(SnapMethod.STANDARD, drive.t_g_ns, None), (SnapMethod.FLOQUET, drive.t_g_ns, None)]
        if qc.checkpoint:
            pulse = self.load_pulse()
            methods.append((SnapMethod.QOC, pulse.t_g, qoc_sequence(pulse, self.sideband)))

        xvec = np.linspace(-3.0, 3.0, 61)
        ideal = ideal_fock_preparation(dim)
        fock1 = np.zeros(dim, dtype=complex)
        fock1[1] = 1.0
        rows = [{'method': 'ideal', 'fidelity_fock': fock_fidelity(ideal, fock1), 'fidelity_approx': 1.0}]
        for method, t_g, snap in methods:
            sequence = fock_preparation_sequence(system, method, drive.t_d_ns, t_g, self.sideband, snap=snap)
            result = simulate_fock_preparation(system, sequence)
            rows.append({'method': method.value, 'fidelity_fock': result.fidelity_fock,
                         'fidelity_approx': result.fidelity_approx})
            grid = wigner(result.cavity_rho, xvec)
            x, p = np.meshgrid(xvec, xvec)
            self.write_csv(f'wigner_{method.value}.csv',
                           pd.DataFrame({'x': x.ravel(), 'p': p.ravel(), 'W': grid.ravel()}))
            self.log('INFO', 'fock-prep', 'Fock preparation simulated', method=method.value,
                     fidelity_fock=result.fidelity_fock)
        self.write_csv('fock_fidelity.csv', pd.DataFrame(rows))
        return {row['method']: {'fidelity_fock': row['fidelity_fock'], 'fidelity_approx': row['fidelity_approx']}
                for row in rows}

    def run_open_fock_prep(self) -> Dict[str, Any]:
        pulse, qc = self.load_pulse(), self.config.qoc
        if qc.fock_n_c > self.system.dims[1]:
            raise ConfigurationError(f"qoc.fock_n_c ({qc.fock_n_c}) exceeds the cavity truncation")
        model = qoc_model_from_system(self.system, self.sideband, qc.fock_n_c, qc.magnitude_cutoff, qc.rotating_wave)
        noise = self.config.noise.to_noise()
        noisy = open_fock_preparation(model, pulse, noise, self.config.drive.t_d_ns)
        closed = open_fock_preparation(model, pulse, noise.model_copy(update={'gamma_q': 0.0, 'gamma_phi_q': 0.0,
                                                                              'gamma_c': 0.0}),
                                       self.config.drive.t_d_ns)
        self.write_csv('open_fock_fidelity.csv', pd.DataFrame([
            {'noise': 'closed', 'fidelity_fock': closed.fidelity_fock, 'fidelity_approx': closed.fidelity_approx},
            {'noise': 'open', 'fidelity_fock': noisy.fidelity_fock, 'fidelity_approx': noisy.fidelity_approx},
        ]))
        return {'open_fidelity_fock': noisy.fidelity_fock, 'open_fidelity_approx': noisy.fidelity_approx,
                'closed_fidelity_fock': closed.fidelity_fock, 'closed_fidelity_approx': closed.fidelity_approx}

    def run_decoherence_sweep(self) -> Dict[str, Any]:
        system, sweeps, drive = self.system, self.config.sweeps, self.config.drive
        grid = ghz(np.linspace(sweeps.decoherence_omega_d_start_GHz, sweeps.decoherence_omega_d_stop_GHz,
                               sweeps.decoherence_points))
        frame = decoherence_sweep(system, ghz(drive.epsilon_GHz), grid, self.config.noise.to_noise(),
                                  self.coupling(system), sweeps.decoherence_duration_us * 1e3,
                                  include_pure_dephasing=self.include_pure_dephasing,
                                  convention=drive.delta_e_convention, max_workers=self.threads)
        self.write_csv('decoherence_sweep.csv', frame)
        return {'points': len(frame), 'invalid_points': int((~frame['valid_flag']).sum()),
                'include_pure_dephasing': self.include_pure_dephasing}

    def run_purcell(self) -> Dict[str, Any]:
        pc = self.config.purcell
        grid = mhz(np.linspace(pc.delta_start_MHz, pc.delta_stop_MHz, pc.points))
        sweep = purcell_sweep(ghz(pc.omega_q_GHz), mhz(pc.alpha_MHz), mhz(pc.g_MHz), 1.0 / pc.t1_q_ns, grid,
                              (pc.ancilla_dim, pc.cavity_dim), pc.lindblad_points, self.threads)
        frame = sweep.to_frame()
        self.write_csv('purcell.csv', frame)
        dip = frame.loc[frame['gamma_excited_per_us'].idxmin()]
        summary = {'excited_minimum_delta_MHz': float(dip['delta_MHz']), 'alpha_MHz': pc.alpha_MHz,
                   'lindblad_points': int(frame['gamma_excited_lindblad_per_us'].notna().sum())}
        if summary['lindblad_points']:
            lindblad_dip = frame.loc[frame['gamma_excited_lindblad_per_us'].idxmin()]
            summary['excited_lindblad_minimum_delta_MHz'] = float(lindblad_dip['delta_MHz'])
        return summary

    def run_fm_qubit_ramsey(self) -> Dict[str, Any]:
        fq = self.config.fm_qubit
        include = fq.include_pure_dephasing and self.include_pure_dephasing
        result = fm_qubit_ramsey(ghz(fq.omega_q_GHz), ghz(fq.omega_d_GHz), ghz(fq.drive_amplitude_GHz), fq.j0_per_ns,
                                 fq.duration_ns, fq.points, include)
        self.write_csv('fm_qubit_ramsey.csv', result.to_frame())
        return {'fitted_rate_per_ns': result.fitted_rate, 'analytic_rate_per_ns': result.analytic_rate,
                'include_pure_dephasing': include}

    def run_ramp_sweep(self) -> Dict[str, Any]:
        sweep = ramp_adiabaticity_sweep(self.system, self.sideband, self.config.sweeps.t_r_grid_ns,
                                        max_workers=self.threads)
        self.write_csv('ramp_sweep.csv', sweep.to_frame())
        best = int(np.argmin(sweep.infidelity[:, 0]))
        return {'best_t_r_ns': float(sweep.t_r[best]), 'best_infidelity_g0': float(sweep.infidelity[best, 0])}

    def run_open_gate_fidelity(self) -> Dict[str, Any]:
        pulse, qc = self.load_pulse(), self.config.qoc
        models = {n_c: qoc_model_from_system(self.system, self.sideband, n_c, qc.magnitude_cutoff, qc.rotating_wave)
                  for n_c in self.config.open_gate.n_c_values}
        frame = open_gate_sweep(models, pulse, self.config.noise.to_noise(), self.thetas(), self.threads)
        self.write_csv('open_gate_fidelity.csv', frame)
        return {'fidelity': dict(zip(frame['n_c'].tolist(), frame['fidelity'].tolist()))}
