"""
Run pipelines behind the CLI subcommands.

Each pipeline takes a validated ScenarioConfig and a run directory, writes
its CSV logs, field dumps and snapshot archives there, and returns a
RunReport. Runtime invariant checks land in ``report.checks``; the CLI exits
with 0 iff every check passed and no solver error occurred.

Wall-clock timings only go to report.json, so the CSV logs of two
single-threaded runs of one config are bit-identical.
"""

from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Tuple

import numpy as np

from app.adaptivity import (
    IndicatorVector,
    MarkParams,
    adapt_loop,
    compute_indicators,
    dorfler_mark,
    interface_band_fraction,
    interface_indicators,
)
from app.config import settings
from app.control import (
    ControlProblem,
    ObjectiveSpec,
    adjoint_solve,
    descent_method,
    layout_ansatz,
    penalization_loop,
    solve_forward,
    steepest_descent,
)
from app.control.penalization import alpha_schedule
from app.core.constants import BOUNDS_TOL, DIVERGENCE_TOL, MASS_TOL
from app.core.exceptions import ChnsError, PodRankError, RomError
from app.fem.assembly import divergence_matrix, mass_matrix
from app.fem.mesh import Mesh, build_rect_mesh
from app.fem.refinement import uniform_refine
from app.fem.spaces import Field, function_space, taylor_hood
from app.fem.transfer import connected_components, integral, l2_error, prolongate, transfer
from app.flow import energy_step_check, ns_step, simulate_chns, total_energy
from app.logging.structured_logger import structured_logger
from app.models.config_models import PotentialSection, ScenarioConfig
from app.models.states import ChParams, CoupledState, FlowState, FluidParams, PhaseState
from app.phasefield import Potential, ch_energy, ch_trajectory
from app.pod import (
    SnapshotSet,
    ch_rom_build,
    ch_rom_simulate,
    eigen_decay_report,
    ns_rom_velocity,
    ns_rom_velocity_pressure,
    numerical_rank,
    pod_basis,
    project_basis,
    project_snapshots,
    projection_error,
    rom_trajectory_error,
)
from app.scenarios import initial_data
from app.storage.snapshot_store import load_fields, save_fields
from app.storage.vtk_writer import write_vtk

logger = logging.getLogger(__name__)

IDENTITY_RTOL = 1e-8
SNAPSHOTS = "snapshots.npz"
PRESSURE_SNAPSHOTS = "snapshots_p.npz"
REPORT = "report.json"


# ── Report ────────────────────────────────────────────────────────────────────

@dataclass
class RunReport:
    command: str
    scenario: str
    checks: Dict[str, bool] = field(default_factory=dict)
    summary: Dict[str, Any] = field(default_factory=dict)
    error: Optional[str] = None

    @property
    def ok(self) -> bool:
        return self.error is None and all(self.checks.values())

    def check(self, name: str, passed: bool) -> None:
        """A named check fails for good once any of its instances fails."""
        self.checks[name] = self.checks.get(name, True) and bool(passed)

    def write(self, run_dir: Path) -> Path:
        path = Path(run_dir) / REPORT
        path.parent.mkdir(parents=True, exist_ok=True)
        payload = {"command": self.command, "scenario": self.scenario, "ok": self.ok,
                   "checks": self.checks, "summary": self.summary, "error": self.error}
        path.write_text(json.dumps(payload, indent=2, sort_keys=True, default=float) + "\n")
        return path


# ── Setup ─────────────────────────────────────────────────────────────────────

@dataclass(frozen=True, eq=False)
class Setup:
    cfg: ScenarioConfig
    mesh: Mesh
    chp: ChParams
    flp: FluidParams
    P: Potential
    initial: Optional[Callable[[Mesh], Field]]
    velocity: Optional[Field]

    @property
    def n_instants(self) -> int:
        return self.cfg.time.K

    @property
    def area(self) -> float:
        return self.mesh.domain_area

    def phi_a(self, mesh: Optional[Mesh] = None) -> Optional[Field]:
        if self.initial is None:
            return None
        return self.initial(self.mesh if mesh is None else mesh)


def build_potential(section: PotentialSection, kappa: float, label: Optional[str] = None) -> Potential:
    """
    The configured potential, or the one named by ``label`` ("variant" or
    "variant:value" with value α for moreau_yosida and r for relaxed_obstacle).
    """
    variant, value = section.variant, None
    if label is not None:
        variant, _, raw = label.partition(":")
        value = float(raw) if raw else None
    if variant == "double_well":
        return Potential.double_well(kappa)
    if variant == "moreau_yosida":
        alpha = section.alpha if value is None else value
        return Potential.moreau_yosida(alpha, kappa, section.psi1, section.psi2)
    if variant == "relaxed_obstacle":
        r = section.r if value is None else value
        return Potential.relaxed_obstacle(r, section.s, kappa)
    if variant == "double_obstacle":
        return Potential.double_obstacle(section.psi1, section.psi2, kappa)
    raise ValueError(f"unknown potential variant {variant!r}")


def _initial_phase(cfg: ScenarioConfig) -> Optional[Callable[[Mesh], Field]]:
    ini, eps = cfg.initial, cfg.phasefield.eps
    if ini.shape == "none":
        return None
    if ini.shape == "ellipse":
        return lambda mesh: initial_data.ellipse(function_space(mesh, 1), ini.center, ini.semi_axes, eps)
    return lambda mesh: initial_data.circle(function_space(mesh, 1), ini.center, ini.radius, eps)


def build_setup(cfg: ScenarioConfig) -> Setup:
    mesh = build_rect_mesh(cfg.mesh.nx, cfg.mesh.ny, cfg.mesh.domain)
    if cfg.mesh.pre_refine:
        mesh = uniform_refine(mesh, cfg.mesh.pre_refine)
    pf, fl = cfg.phasefield, cfg.fluid
    kappa = cfg.potential.kappa if cfg.potential.kappa is not None else pf.kappa
    chp = ChParams(sigma=pf.sigma, eps=pf.eps, kappa=kappa, mobility=pf.mobility,
                   mobility2=pf.mobility2, tau=cfg.time.tau, scaled=pf.scaled)
    flp = FluidParams(rho1=fl.rho1, rho2=fl.rho2, eta1=fl.eta1, eta2=fl.eta2, gravity=fl.gravity,
                      Re=fl.Re, tau=cfg.time.tau, convection=fl.convection,
                      momentum=fl.momentum)
    velocity = initial_data.velocity_field(cfg.initial.velocity, mesh, cfg.initial.amplitude)
    return Setup(cfg, mesh, chp, flp, build_potential(cfg.potential, kappa), _initial_phase(cfg), velocity)


# ── Logging helpers ───────────────────────────────────────────────────────────

_NAN = float("nan")


def _phase_row(step: int, t: float, phi: Field, prev_mass: float) -> Dict[str, Any]:
    mass = integral(phi)
    values = phi.coeffs
    return {"step": step, "time": t, "mass": mass,
            "mass_drift": 0.0 if step == 0 else abs(mass - prev_mass),
            "phi_min": float(values.min()), "phi_max": float(values.max()),
            "energy": _NAN, "energy_before": _NAN, "transport_defect": _NAN, "lhs": _NAN,
            "rhs": _NAN, "energy_ok": True, "div_residual": _NAN}


def _divergence_residual(v: Field) -> float:
    pspace = taylor_hood(v.mesh)[1]
    return float(np.max(np.abs(divergence_matrix(v.space, pspace) @ v.coeffs), initial=0.0))


def _check_phase(report: RunReport, row: Dict[str, Any], area: float, P: Potential) -> None:
    report.check("mass", row["mass_drift"] <= MASS_TOL * area)
    if not P.is_smooth:
        report.check("bounds", row["phi_min"] >= P.psi1 - BOUNDS_TOL and row["phi_max"] <= P.psi2 + BOUNDS_TOL)


def _dump(run_dir: Path, stride: int, step: int, last: bool, mesh: Mesh, fields: Dict[str, Field]) -> None:
    if stride <= 0 or not (step % stride == 0 or last):
        return
    write_vtk(Path(run_dir) / "fields" / f"step_{step:05d}.vtk", mesh, fields, title=f"step {step}")


def log_phase_trajectory(report: RunReport, setup: Setup, run_dir: Path,
                         phis: List[Field], states: List[PhaseState]) -> None:
    """Rows for instants 0, …, K−1 of a prescribed-velocity run; φ_0 = φ_a has no μ."""
    prev_mass = integral(phis[0])
    for i, phi in enumerate(phis):
        row = _phase_row(i, i * setup.chp.tau, phi, prev_mass)
        if i > 0:
            row["energy"] = ch_energy(states[i - 1], setup.P, setup.chp)
        prev_mass = row["mass"]
        _check_phase(report, row, setup.area, setup.P)
        structured_logger.log("steps", row)
        fields = {"phi": phi}
        if i > 0:
            fields["mu"] = states[i - 1].mu
        _dump(run_dir, setup.cfg.output.dump_stride, i, i == len(phis) - 1, phi.mesh, fields)


def log_coupled_trajectory(report: RunReport, setup: Setup, run_dir: Path, traj: List[CoupledState],
                           P: Potential, controls: Optional[Callable[[int], Optional[Field]]] = None) -> None:
    """Rows with the discrete energy estimate re-evaluated for every step."""
    chp, flp = setup.chp, setup.flp
    prev_mass = integral(traj[0].phi_prev)
    for i, state in enumerate(traj):
        row = _phase_row(i, state.time, state.phase.phi, prev_mass)
        prev_mass = row["mass"]
        row["div_residual"] = _divergence_residual(state.flow.v)
        if i == 0:
            row["energy"] = total_energy(state, P, chp, flp)
        else:
            u = controls(i) if controls is not None else None
            rep = energy_step_check(traj[i - 1], state, u, P, chp, flp)
            row.update(energy=rep.energy_after, energy_before=rep.energy_before,
                       transport_defect=rep.transport_defect, lhs=rep.lhs, rhs=rep.rhs,
                       energy_ok=rep.ok)
            report.check("energy", rep.ok)
        _check_phase(report, row, setup.area, P)
        report.check("divergence", row["div_residual"] <= DIVERGENCE_TOL * max(1.0, float(np.abs(state.flow.v.coeffs).max())))
        structured_logger.log("steps", row)
        _dump(run_dir, setup.cfg.output.dump_stride, i, i == len(traj) - 1, state.mesh,
              {"phi": state.phase.phi, "mu": state.phase.mu, "v": state.flow.v, "p": state.flow.p})


# ── Full-order runs ───────────────────────────────────────────────────────────

def phase_snapshots(setup: Setup, P: Optional[Potential] = None,
                    meshes: Optional[List[Mesh]] = None) -> Tuple[List[Field], List[PhaseState], float]:
    """
    φ_a followed by K−1 transported Cahn-Hilliard steps; with ``meshes``
    instant i lives on meshes[i]. Returns (fields, states, seconds per step).
    """
    K = setup.n_instants
    phi_a = setup.phi_a(meshes[0] if meshes is not None else None)
    start = time.perf_counter()
    states = ch_trajectory(phi_a, K - 1, setup.P if P is None else P, setup.chp, setup.velocity,
                           meshes=meshes[1:] if meshes is not None else None)
    seconds = (time.perf_counter() - start) / max(K - 1, 1)
    return [phi_a] + [s.phi for s in states], states, seconds


def flow_snapshots(setup: Setup) -> Tuple[List[FlowState], float]:
    """Single-phase run from rest under the manufactured forcing."""
    vspace, pspace = taylor_hood(setup.mesh)
    forcing = initial_data.manufactured_forcing(setup.flp.Re)
    flow = FlowState(v=Field.zeros(vspace), p=Field.zeros(pspace))
    flows = [flow]
    start = time.perf_counter()
    for i in range(1, setup.n_instants):
        flow = ns_step(flow, forcing, setup.flp, step=i)
        flows.append(flow)
    return flows, (time.perf_counter() - start) / max(setup.n_instants - 1, 1)


def _kinetic(v: Field) -> float:
    return 0.5 * float(v.coeffs @ (mass_matrix(v.space) @ v.coeffs))


def _save_snapshots(setup: Setup, run_dir: Path, fields: List[Field], name: str = SNAPSHOTS,
                    x_space: Optional[str] = None, kind: str = "phi") -> None:
    if not setup.cfg.output.snapshots:
        return
    pod = setup.cfg.pod
    weights = SnapshotSet.from_fields(fields, pod.weights, setup.chp.tau).weights
    save_fields(Path(run_dir) / name, fields, weights=weights,
                labels=[f"{kind}{i}" for i in range(len(fields))],
                attrs={"kind": kind, "tau": setup.chp.tau, "x_space": x_space or pod.x_space,
                       "scenario": setup.cfg.run.scenario})


def run_simulate(cfg: ScenarioConfig, run_dir: Path) -> RunReport:
    setup = build_setup(cfg)
    report = RunReport("simulate", cfg.run.scenario)
    report.summary["domain_area"] = setup.area
    if setup.initial is None:
        flows, seconds = flow_snapshots(setup)
        exact = initial_data.stream_vortex(1.0)
        for i, flow in enumerate(flows):
            row = {"step": i, "time": i * setup.flp.tau, "mass": _NAN, "mass_drift": _NAN,
                   "phi_min": _NAN, "phi_max": _NAN, "energy": _kinetic(flow.v), "energy_before": _NAN,
                   "transport_defect": _NAN, "lhs": _NAN, "rhs": _NAN, "energy_ok": True,
                   "div_residual": _divergence_residual(flow.v)}
            report.check("divergence", row["div_residual"] <= DIVERGENCE_TOL * max(1.0, float(np.abs(flow.v.coeffs).max())))
            structured_logger.log("steps", row)
            _dump(run_dir, cfg.output.dump_stride, i, i == len(flows) - 1, setup.mesh, {"v": flow.v, "p": flow.p})
        report.summary.update(stokes_l2_distance=l2_error(flows[-1].v, exact), seconds_per_step=seconds)
        _save_snapshots(setup, run_dir, [f.v for f in flows], kind="v")
        _save_snapshots(setup, run_dir, [f.p for f in flows], PRESSURE_SNAPSHOTS, "L2", kind="p")
        return report

    if setup.velocity is not None:
        phis, states, seconds = phase_snapshots(setup)
        log_phase_trajectory(report, setup, run_dir, phis, states)
    else:
        start = time.perf_counter()
        traj = simulate_chns(setup.phi_a(), setup.n_instants, setup.P, setup.chp, setup.flp,
                             coupling_mode=cfg.fluid.coupling)
        seconds = (time.perf_counter() - start) / max(setup.n_instants - 1, 1)
        log_coupled_trajectory(report, setup, run_dir, traj, setup.P)
        phis = [s.phase.phi for s in traj]
    report.summary.update(
        components_initial=connected_components(phis[0]),
        components_final=connected_components(phis[-1]),
        seconds_per_step=seconds,
    )
    _save_snapshots(setup, run_dir, phis)
    return report


# ── Optimal control ───────────────────────────────────────────────────────────

def target_phase(setup: Setup, mesh: Optional[Mesh] = None) -> Field:
    """φ_d from ``[control] target``: two_squares, initial, or a snapshot archive."""
    mesh = setup.mesh if mesh is None else mesh
    cfg = setup.cfg
    target = cfg.control.target
    if target == "two_squares":
        centers, side = initial_data.two_squares_for(cfg.initial.radius, cfg.initial.center, cfg.mesh.domain)
        return initial_data.squares(function_space(mesh, 1), centers, side, cfg.phasefield.eps)
    if target == "initial":
        return setup.phi_a(mesh)
    archive = load_fields(Path(target), root=mesh.hierarchy_root)
    return transfer(archive.fields[-1], mesh)


def control_problem(setup: Setup, mesh: Optional[Mesh] = None) -> ControlProblem:
    cfg = setup.cfg
    mesh = setup.mesh if mesh is None else mesh
    ansatz = None if cfg.control.layout == "full" else layout_ansatz(cfg.control.layout, cfg.mesh.domain)
    v0 = None if setup.velocity is None else transfer(setup.velocity, mesh)
    return ControlProblem(
        phi_a=setup.phi_a(mesh), n_instants=setup.n_instants,
        spec=ObjectiveSpec(target_phase(setup, mesh), cfg.control.xi), potential=setup.P,
        chp=setup.chp, flp=setup.flp, ansatz=ansatz, v0=v0, coupling=cfg.fluid.coupling,
    )


def _monotone(values: List[float]) -> bool:
    return all(b <= a + 1e-12 * max(1.0, abs(a)) for a, b in zip(values, values[1:]))


def run_control(cfg: ScenarioConfig, run_dir: Path) -> RunReport:
    setup = build_setup(cfg)
    report = RunReport("control", cfg.run.scenario)
    report.summary["domain_area"] = setup.area
    problem = control_problem(setup)
    ctl = cfg.control
    u0 = problem.zero_control()
    level = {"index": 0, "alpha": _NAN}

    def on_iteration(rec: Dict[str, float]) -> None:
        structured_logger.log("optimization", {
            "level": level["index"], "alpha": level["alpha"], "iteration": rec["iteration"],
            "objective": rec["objective"], "grad_norm": rec.get("grad_norm", rec.get("h_norm", _NAN)),
            "step_size": rec["step"], "r1": _NAN, "r2": _NAN,
        })

    if ctl.method == "penalization":
        schedule = alpha_schedule(ctl.alpha0, ctl.alpha_factor, ctl.schedule_len)
        level["alpha"] = schedule[0]

        def on_level(rec: Dict[str, float]) -> None:
            structured_logger.log("optimization", {
                "level": rec["level"], "alpha": rec["alpha"], "iteration": rec["iterations"],
                "objective": rec["objective"], "grad_norm": rec["grad_norm"], "step_size": _NAN,
                "r1": rec["r1"], "r2": rec["r2"],
            })
            level["index"] = rec["level"] + 1
            if level["index"] < len(schedule):
                level["alpha"] = schedule[level["index"]]

        result = penalization_loop(u0, problem, tol_c=ctl.tol_c, schedule=schedule,
                                   descent_tol=ctl.descent_tol, descent_rtol=ctl.descent_rtol,
                                   max_iter=ctl.max_iter, step_rule=ctl.step_rule,
                                   on_level=on_level, on_iteration=on_iteration)
        for res in result.levels:
            report.check("objective_monotone", _monotone(res.objective))
        u, traj = result.u, result.traj
        P_final = setup.P.with_alpha(result.alphas[result.best_level]) if not setup.P.is_smooth else setup.P
        r1, r2 = result.residuals[result.best_level]
        report.summary.update(converged=result.converged, levels=len(result.alphas), r1=r1, r2=r2,
                              objective=result.objective[result.best_level])
    elif ctl.method == "descent":
        result = descent_method(u0, problem, tol=ctl.descent_tol, max_iter=ctl.max_iter,
                                alpha0=ctl.alpha0, alpha_factor=ctl.alpha_factor, on_iteration=on_iteration)
        report.check("descent_certificates", result.certificates_ok)
        u, P_final = result.u, setup.P
        traj = solve_forward(problem, u)
        report.summary.update(converged=result.converged, iterations=result.iterations,
                              h_norm=result.h_norm[-1] if result.h_norm else _NAN,
                              robustifications=result.robustifications, objective=result.objective[-1],
                              positive_certificates=result.positive_certificates)
    else:
        P_final = setup.P if setup.P.is_smooth else setup.P.with_alpha(ctl.alpha0)
        level["alpha"] = ctl.alpha0 if not setup.P.is_smooth else _NAN
        result = steepest_descent(u0, problem, P_final, tol=ctl.descent_tol, rtol=ctl.descent_rtol,
                                  max_iter=ctl.max_iter, step_rule=ctl.step_rule, on_iteration=on_iteration)
        report.check("objective_monotone", _monotone(result.objective))
        u, traj = result.u, result.traj
        report.summary.update(converged=result.converged, iterations=result.iterations,
                              grad_norm=result.grad_norm[-1], objective=result.objective[-1])

    log_coupled_trajectory(report, setup, run_dir, traj, P_final, controls=u.at)
    report.summary["components_final"] = connected_components(traj[-1].phase.phi)
    fields = [problem.spec.phi_d, traj[-1].phase.phi] + [u.at(j) for j in range(1, u.n_controls + 1)]
    labels = ["phi_d", "phi_final"] + [f"u{j}" for j in range(1, u.n_controls + 1)]
    save_fields(Path(run_dir) / "control.npz", fields, labels=labels,
                attrs={"method": ctl.method, "layout": ctl.layout, "xi": ctl.xi,
                       "coeffs": u.coeffs.tolist()})
    return report


# ── POD and reduced models ────────────────────────────────────────────────────

def _spectrum_rows(label: str, lam: np.ndarray) -> List[Dict[str, Any]]:
    top = lam[0] if lam.size and lam[0] > 0.0 else 1.0
    return [{"label": label, "j": j + 1, "eigenvalue": float(v), "normalized": float(v / top)}
            for j, v in enumerate(lam)]


def _identity_ok(perr: float, tail: float, lam: np.ndarray) -> bool:
    scale = float(np.clip(lam, 0.0, None).sum())
    return abs(perr - tail) <= IDENTITY_RTOL * tail + 1e-12 * scale


def adaptive_phase_snapshots(setup: Setup, on_cycle=None):
    """Per-instant adapted meshes for the transported phase field."""
    cfg = setup.cfg
    mk = MarkParams(a_max=cfg.marking.a_max, theta_r=cfg.marking.theta_r, theta_c=cfg.marking.theta_c)

    def solve(meshes: List[Mesh]):
        fields, states, _ = phase_snapshots(setup, meshes=meshes)
        eta = compute_indicators(states, setup.chp, velocity=setup.velocity, phi_a=fields[0])
        return fields, IndicatorVector([interface_indicators(fields[0])] + eta.eta)

    return adapt_loop(solve, [setup.mesh] * setup.n_instants, mk, max_cycles=cfg.marking.max_cycles,
                      on_cycle=on_cycle)


def _ch_pod(setup: Setup, report: RunReport, run_dir: Path) -> None:
    cfg, chp = setup.cfg, setup.chp
    if cfg.mesh.adapt:
        adapted = adaptive_phase_snapshots(setup, lambda c: structured_logger.log("adapt", c.as_row()))
        fields = adapted.solution
        _, _, fom_seconds = phase_snapshots(setup)
        report.summary["adapt_cycles"] = adapted.n_adapted
    else:
        fields, _, fom_seconds = phase_snapshots(setup)
    _save_snapshots(setup, run_dir, fields)
    S = SnapshotSet.from_fields(fields, cfg.pod.weights, chp.tau, cfg.pod.x_space)
    lam = pod_basis(S, 1).eigenvalues
    rank = numerical_rank(lam)
    for row in _spectrum_rows("main", lam):
        structured_logger.log("spectrum", row)
    use_rom = setup.P.is_smooth and chp.mobility2 is None
    timings: Dict[str, float] = {"fom_step_seconds": fom_seconds}
    errors: Dict[int, float] = {}
    for ell in cfg.pod.ells:
        if ell > rank:
            logger.warning("ell=%d exceeds the numerical rank %d; skipped", ell, rank)
            continue
        basis = pod_basis(S, ell)
        perr, tail = projection_error(S, basis), basis.tail_sum()
        report.check("pod_identity", _identity_ok(perr, tail, lam))
        rom_err = _NAN
        if use_rom:
            rom = ch_rom_build(basis, setup.P, chp, setup.velocity)
            run = ch_rom_simulate(rom, fields[0], setup.n_instants)
            rom_err = rom_trajectory_error(rom, run, fields, chp.tau)
            errors[ell] = rom_err
            timings[f"rom_step_seconds_{ell}"] = run.seconds_per_step
        structured_logger.log("pod_errors", {"label": "main", "ell": ell, "projection_error": perr,
                                             "tail_sum": tail, "rom_error": rom_err})
    report.summary.update(rank=rank, rom_errors=errors, timings=timings)

    if cfg.pod.compare:
        lo, hi = cfg.pod.tail
        decay: Dict[str, Any] = {}
        for label in cfg.pod.compare:
            P_cmp = build_potential(cfg.potential, chp.kappa, label)
            cmp_fields, _, _ = phase_snapshots(setup, P_cmp)
            S_cmp = SnapshotSet.from_fields(cmp_fields, cfg.pod.weights, chp.tau, cfg.pod.x_space)
            rep = eigen_decay_report(S, S_cmp, (lo, hi))
            for row in _spectrum_rows(label, pod_basis(S_cmp, 1).eigenvalues):
                structured_logger.log("spectrum", row)
            decay[label] = {"ordering_ok": rep.ordering_ok,
                            "tail_main": float(rep.smooth[lo - 1:hi].sum()),
                            "tail_other": float(rep.nonsmooth[lo - 1:hi].sum())}
        report.summary["decay"] = decay


def _relative_velocity_error(traj, flows: List[FlowState], weights: np.ndarray) -> float:
    num = den = 0.0
    M = mass_matrix(traj.vspace)
    for i, (w, flow) in enumerate(zip(weights, flows)):
        v = prolongate(flow.v, traj.vspace.mesh, 2).coeffs
        e = traj.velocity(i).coeffs - v
        num += w * float(e @ (M @ e))
        den += w * float(v @ (M @ v))
    return float(np.sqrt(num / den)) if den > 0.0 else float(np.sqrt(num))


def _ns_pod(setup: Setup, report: RunReport, run_dir: Path) -> None:
    cfg, flp = setup.cfg, setup.flp
    flows, fom_seconds = flow_snapshots(setup)
    vfields, pfields = [f.v for f in flows], [f.p for f in flows]
    _save_snapshots(setup, run_dir, vfields, kind="v")
    _save_snapshots(setup, run_dir, pfields, PRESSURE_SNAPSHOTS, "L2", kind="p")
    S_v = SnapshotSet.from_fields(vfields, cfg.pod.weights, flp.tau, cfg.pod.x_space)
    S_p = SnapshotSet.from_fields(pfields, cfg.pod.weights, flp.tau, "L2")
    lam = pod_basis(S_v, 1).eigenvalues
    rank, rank_p = numerical_rank(lam), numerical_rank(pod_basis(S_p, 1).eigenvalues)
    for row in _spectrum_rows("main", lam):
        structured_logger.log("spectrum", row)
    forcing = initial_data.manufactured_forcing(flp.Re)
    S_div = project_snapshots(S_v) if cfg.pod.projection == "snapshots" else None
    pspace = taylor_hood(setup.mesh)[1]
    timings: Dict[str, float] = {"fom_step_seconds": fom_seconds}
    for ell in cfg.pod.ells:
        if ell > rank:
            logger.warning("ell=%d exceeds the numerical rank %d; skipped", ell, rank)
            continue
        raw = pod_basis(S_v, ell)
        perr, tail = projection_error(S_v, raw), raw.tail_sum()
        report.check("pod_identity", _identity_ok(perr, tail, lam))
        try:
            basis = pod_basis(S_div, ell) if S_div is not None else project_basis(raw)
        except PodRankError as exc:
            logger.warning("divergence-free basis for ell=%d: %s", ell, exc)
            continue
        worst = float(np.abs(divergence_matrix(basis.space, pspace) @ basis.matrix).max())
        report.check("mode_divergence", worst <= DIVERGENCE_TOL)
        start = time.perf_counter()
        traj = ns_rom_velocity(basis, flp, setup.n_instants, forcing=forcing)
        timings[f"rom_step_seconds_{ell}"] = (time.perf_counter() - start) / max(setup.n_instants - 1, 1)
        rom_err = _relative_velocity_error(traj, flows, S_v.weights)
        structured_logger.log("pod_errors", {"label": "velocity", "ell": ell, "projection_error": perr,
                                             "tail_sum": tail, "rom_error": rom_err})
        for i, k in enumerate(traj.kinetic):
            structured_logger.log("ns_rom", {"model": f"velocity_{ell}", "instant": i,
                                             "kinetic": float(k), "condition": _NAN})
        if rank_p == 0:
            continue
        p_basis = pod_basis(S_p, min(ell, rank_p))
        try:
            vp = ns_rom_velocity_pressure(basis, p_basis, flp, setup.n_instants, forcing=forcing, enrich=True)
        except RomError as exc:
            report.check("saddle_nonsingular", False)
            report.summary[f"saddle_error_{ell}"] = str(exc)
            continue
        report.check("saddle_nonsingular", True)
        condition = float(vp.condition) if vp.condition is not None else _NAN
        for i, k in enumerate(vp.kinetic):
            structured_logger.log("ns_rom", {"model": f"velocity_pressure_{ell}", "instant": i,
                                             "kinetic": float(k), "condition": condition})
    report.summary.update(rank=rank, pressure_rank=rank_p, timings=timings)


def run_pod(cfg: ScenarioConfig, run_dir: Path) -> RunReport:
    setup = build_setup(cfg)
    report = RunReport("pod", cfg.run.scenario)
    if cfg.pod.rom == "ns" or setup.initial is None:
        _ns_pod(setup, report, run_dir)
    else:
        if setup.velocity is None:
            raise ValueError("phase-field POD needs a prescribed velocity ([initial] velocity)")
        _ch_pod(setup, report, run_dir)
    return report


# ── Adaptivity ────────────────────────────────────────────────────────────────

def _shared_mesh_adapt(setup: Setup, on_cycle):
    """One mesh for all instants of the coupled (optionally controlled) problem."""
    cfg = setup.cfg
    mk = MarkParams(a_max=cfg.marking.a_max, theta_r=cfg.marking.theta_r, theta_c=cfg.marking.theta_c)
    with_adjoint = cfg.run.scenario == "rising_bubble_control"
    P = setup.P if setup.P.is_smooth else setup.P.with_alpha(cfg.control.alpha0)

    def solve(meshes: List[Mesh]):
        mesh = meshes[0]
        if with_adjoint:
            problem = control_problem(setup, mesh)
            u = problem.zero_control()
            traj = solve_forward(problem, u, P)
            adj = adjoint_solve(traj, u, problem.spec, P, setup.chp, setup.flp)
            eta = compute_indicators(traj, setup.chp, adj)
        else:
            traj = simulate_chns(setup.phi_a(mesh), setup.n_instants, P, setup.chp, setup.flp,
                                 coupling_mode=cfg.fluid.coupling)
            eta = compute_indicators(traj, setup.chp)
        return [s.phase.phi for s in traj], eta

    return adapt_loop(solve, [setup.mesh] * setup.n_instants, mk, max_cycles=cfg.marking.max_cycles,
                      shared_mesh=True, on_cycle=on_cycle)


def run_adapt(cfg: ScenarioConfig, run_dir: Path) -> RunReport:
    setup = build_setup(cfg)
    report = RunReport("adapt", cfg.run.scenario)
    if setup.initial is None:
        raise ValueError("adaptivity needs a phase field ([initial] shape)")

    def on_cycle(c) -> None:
        structured_logger.log("adapt", c.as_row())

    shared = cfg.marking.shared_mesh or setup.velocity is None
    result = _shared_mesh_adapt(setup, on_cycle) if shared else adaptive_phase_snapshots(setup, on_cycle)
    fields = result.solution
    if shared:
        marks = dorfler_mark(IndicatorVector([result.indicators.summed()]), cfg.marking.theta_r)
        band = interface_band_fraction(marks, fields[-1:])
    else:
        band = interface_band_fraction(dorfler_mark(result.indicators, cfg.marking.theta_r), fields)
    final = result.cycles[-1]
    report.summary.update(cycles=len(result.cycles), n_adapted=result.n_adapted,
                          total_cells=final.total_cells, eta_total=final.eta_total,
                          interface_band_fraction=band, shared_mesh=shared)
    prev = integral(fields[0])
    for i, phi in enumerate(fields):
        mass = integral(phi)
        if i > 0:
            report.check("mass", abs(mass - prev) <= MASS_TOL * setup.area)
        prev = mass
    if not shared:
        _save_snapshots(setup, run_dir, fields)
    return report


PIPELINES: Dict[str, Callable[[ScenarioConfig, Path], RunReport]] = {
    "simulate": run_simulate,
    "control": run_control,
    "pod": run_pod,
    "adapt": run_adapt,
}


def run_pipeline(command: str, cfg: ScenarioConfig, run_dir: Path) -> RunReport:
    """
    Run one pipeline with the structured logger attached to ``run_dir``.
    Solver failures become the report's error; the report is always written.
    """
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    structured_logger.attach(run_dir, run=cfg.run.label or cfg.run.scenario)
    logger.info("%s: scenario=%s seed=%d out=%s", command, cfg.run.scenario, settings.SEED, run_dir)
    try:
        report = PIPELINES[command](cfg, run_dir)
    except (ChnsError, ValueError) as exc:
        step = getattr(exc, "step", None)
        logger.error("%s failed%s: %s", command, f" at step {step}" if step is not None else "", exc)
        report = RunReport(command, cfg.run.scenario, error=f"{type(exc).__name__}: {exc}")
        if step is not None:
            report.summary["failed_step"] = step
    finally:
        failures = structured_logger.persistence_failures
        structured_logger.detach()
    report.check("logs_persisted", not failures)
    if failures:
        report.summary["log_failures"] = failures
    report.summary.setdefault("seed", settings.SEED)
    report.write(run_dir)
    return report
