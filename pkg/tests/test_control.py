"""
tests/test_control.py — objective, adjoint gradient and the optimization loops.

    python -m tests.test_control
    pytest tests/test_control.py
"""

from __future__ import annotations

import logging
from dataclasses import replace

import numpy as np

from app.control.adjoint import adjoint_solve, reduced_gradient
from app.control.ansatz import ControlField, layout_ansatz
from app.control.descent import steepest_descent
from app.control.directional import (
    DERIVATIVE_TOL,
    DescentMethodResult,
    StepDerivative,
    descent_method,
    descent_subproblem,
    directional_derivative_solve,
)
from app.control.objective import ControlProblem, ObjectiveSpec, objective, reduced_objective, solve_forward
from app.control.penalization import alpha_schedule, penalization_loop
from app.control.stationarity import c_stationarity_residual
from app.fem.assembly import mass_matrix
from app.fem.mesh import build_rect_mesh
from app.fem.spaces import Field, function_space, taylor_hood
from app.models.states import ChParams, CoupledState, FlowState, FluidParams, PhaseState
from app.phasefield.potentials import Potential
from app.scenarios.initial_data import circle, squares
from tests.harness import NodeResult, assert_node, main

TAU = 1e-2
CHP = ChParams(sigma=1.0, eps=0.12, kappa=1.0, mobility=1e-2, tau=TAU)
FLP = FluidParams(rho1=1.0, rho2=1.5, eta1=1.0, eta2=0.5, gravity=0.5, tau=TAU, convection="skew")
REGION = (0.0, 1.0, 0.0, 1.0)


def _problem(n_instants: int = 3, potential: Potential = Potential.double_well(),
             ansatz: bool = True, n: int = 6) -> ControlProblem:
    mesh = build_rect_mesh(n, n)
    p1 = function_space(mesh, 1)
    phi_a = circle(p1, (0.5, 0.5), 0.3, CHP.eps)
    phi_d = squares(p1, [(0.3, 0.5), (0.7, 0.5)], 0.3, CHP.eps)
    return ControlProblem(
        phi_a=phi_a, n_instants=n_instants, spec=ObjectiveSpec(phi_d, 1e-4), potential=potential,
        chp=CHP, flp=FLP, ansatz=layout_ansatz("2x4", REGION) if ansatz else None,
    )


def _random_control(problem: ControlProblem, seed: int, scale: float = 1.0) -> ControlField:
    u = problem.zero_control()
    rng = np.random.default_rng(seed)
    coeffs = scale * rng.standard_normal(u.coeffs.shape)
    if u.ansatz is None:
        coeffs[:, u.vspace.dirichlet_mask] = 0.0
    return u.with_coeffs(coeffs)


# ─────────────────────────────────────────────────────────────────────────────
# OBJ — objective and control fields
# ─────────────────────────────────────────────────────────────────────────────

def node_objective() -> NodeResult:
    node = NodeResult("OBJ", "Objective and control fields")
    mesh = build_rect_mesh(4, 4)
    p1 = function_space(mesh, 1)
    vspace, pspace = taylor_hood(mesh)

    def _final_state(phi: Field) -> CoupledState:
        flow = FlowState(v=Field.zeros(vspace), p=Field.zeros(pspace))
        return CoupledState(phase=PhaseState.from_phi(phi), flow=flow, phi_prev=phi)

    def cost_of_unit_control():
        spec = ObjectiveSpec(Field(p1, np.ones(p1.n_dof)), 1e-11)
        u = ControlField.zeros(vspace, 2)
        rng = np.random.default_rng(0)
        c = rng.standard_normal(u.coeffs.shape)
        c[:, vspace.dirichlet_mask] = 0.0
        u = u.with_coeffs(c)
        u = u * (1.0 / np.sqrt(u.norm_sq()))
        J = objective([_final_state(Field.zeros(p1))], u, spec)
        assert abs(J - (0.5 + 5e-12)) < 1e-15, J

    def misfit_zero_at_target():
        phi = Field(p1, np.linspace(-1.0, 1.0, p1.n_dof))
        spec = ObjectiveSpec(phi, 1.0)
        u = ControlField.zeros(vspace, 3)
        assert abs(objective([_final_state(phi)], u, spec)) < 1e-15

    def nonpositive_xi_rejected():
        try:
            ObjectiveSpec(Field.zeros(p1), 0.0)
        except ValueError:
            return
        raise AssertionError("xi = 0 accepted")

    def ansatz_expansion():
        ansatz = layout_ansatz("2x4", REGION)
        assert ansatz.size == 8
        u = ControlField.zeros(vspace, 4, ansatz)
        assert u.n_controls == 3 and u.kind == "ansatz"
        U = u.with_coeffs(np.ones((3, 8))).expand()
        assert U.shape == (3, vspace.n_dof)
        assert np.all(U[:, vspace.dirichlet_mask] == 0.0)

    def control_index_range():
        u = ControlField.zeros(vspace, 3)
        u.at(1), u.at(2)
        for j in (0, 3):
            try:
                u.at(j)
            except IndexError:
                continue
            raise AssertionError(f"u_{j} accepted")

    def unknown_layout():
        try:
            layout_ansatz("3x3", REGION)
        except ValueError:
            return
        raise AssertionError("unknown layout accepted")

    node.run("ξ = 1e-11 with ‖u‖ = 1: J = 0.5 + 5e-12", cost_of_unit_control)
    node.run("J = 0 when φ hits the target with u = 0", misfit_zero_at_target)
    node.run("ξ ≤ 0 raises ValueError", nonpositive_xi_rejected)
    node.run("2x4 ansatz expands to zero-trace velocities", ansatz_expansion)
    node.run("u_j exists for j = 1..K−1 only", control_index_range)
    node.run("unknown layout raises ValueError", unknown_layout)
    return node


# ─────────────────────────────────────────────────────────────────────────────
# GRAD — adjoint gradient against finite differences
# ─────────────────────────────────────────────────────────────────────────────

def _fd_check(problem: ControlProblem, P: Potential, seed: int) -> None:
    u = _random_control(problem, seed, 0.5)
    d = _random_control(problem, seed + 1, 1.0)
    traj = solve_forward(problem, u, P)
    adj = adjoint_solve(traj, u, problem.spec, P, problem.chp, problem.flp)
    g = reduced_gradient(traj, adj, u, problem.spec)
    h = 1e-4
    Jp, _ = reduced_objective(problem, u + h * d, P)
    Jm, _ = reduced_objective(problem, u + (-h) * d, P)
    fd = (Jp - Jm) / (2.0 * h)
    exact = g.inner(d)
    assert abs(fd - exact) <= 1e-3 * abs(exact) + 1e-10, (fd, exact)


def node_gradient() -> NodeResult:
    node = NodeResult("GRAD", "Adjoint gradient")

    def ansatz_double_well():
        _fd_check(_problem(3), Potential.double_well(), 11)

    def ansatz_moreau_yosida():
        p = _problem(3, Potential.double_obstacle())
        _fd_check(p, p.potential.with_alpha(1e-1), 21)

    def full_control():
        _fd_check(_problem(3, ansatz=False, n=4), Potential.double_well(), 31)

    def adjoint_shapes():
        p = _problem(3)
        u = p.zero_control()
        traj = solve_forward(p, u)
        adj = adjoint_solve(traj, u, p.spec, p.potential, p.chp, p.flp)
        assert len(adj.p_adj) == 3 and len(adj.q_adj) == 3
        assert np.all(adj.p_adj[-1].coeffs == 0.0)
        r1, r2 = c_stationarity_residual(traj, adj)
        assert r1 >= 0.0 and r2 >= 0.0

    def skew_momentum_form():
        p = _problem(3)
        _fd_check(replace(p, flp=replace(FLP, momentum="skew")), Potential.double_well(), 61)

    def ansatz_gradient_is_projection():
        pa, pf = _problem(3), _problem(3, ansatz=False)
        ua = _random_control(pa, 71, 0.5)
        uf = pf.zero_control().with_coeffs(ua.expand())
        ga, gf = (reduced_gradient(t, adjoint_solve(t, u, p.spec, p.potential, p.chp, p.flp), u, p.spec)
                  for p, u, t in ((pa, ua, solve_forward(pa, ua)), (pf, uf, solve_forward(pf, uf))))
        Bm = pa.ansatz.basis_matrix(pa.vspace)
        projected = (Bm.T @ (mass_matrix(pa.vspace) @ gf.coeffs.T)).T
        assert np.max(np.abs(ga.coeffs - projected)) <= 1e-10 * max(1.0, np.max(np.abs(projected)))

    node.run("pDWE, ansatz control: adjoint = central difference", ansatz_double_well)
    node.run("MY(0.1), ansatz control: adjoint = central difference", ansatz_moreau_yosida)
    node.run("pDWE, full control: adjoint = central difference", full_control)
    node.run("adjoint has one state per instant, terminal state zero", adjoint_shapes)
    node.run("skew momentum form: adjoint = central difference", skew_momentum_form)
    node.run("ansatz gradient = bump projection of the full gradient", ansatz_gradient_is_projection)
    return node


# ─────────────────────────────────────────────────────────────────────────────
# OPT — optimization loops
# ─────────────────────────────────────────────────────────────────────────────

def node_optimization() -> NodeResult:
    node = NodeResult("OPT", "Optimization loops")

    def schedule_values():
        s = alpha_schedule(1e-1, 0.1, 4)
        assert np.allclose(s, [1e-1, 1e-2, 1e-3, 1e-4])
        try:
            alpha_schedule(1e-1, 1.5, 3)
        except ValueError:
            return
        raise AssertionError("factor ≥ 1 accepted")

    def descent_monotone():
        p = _problem(3)
        rows = []
        res = steepest_descent(p.zero_control(), p, Potential.double_well(), max_iter=3,
                               on_iteration=rows.append)
        J = res.objective
        assert len(J) == res.iterations + 1
        assert all(b <= a for a, b in zip(J, J[1:])), J
        assert [r["iteration"] for r in rows] == list(range(1, res.iterations + 1))

    def descent_rejects_obstacle():
        p = _problem(3, Potential.double_obstacle())
        try:
            steepest_descent(p.zero_control(), p, p.potential, max_iter=1)
        except ValueError:
            return
        raise AssertionError("steepest descent accepted the obstacle")

    def penalization_levels():
        p = _problem(3, Potential.double_obstacle())
        levels = []
        res = penalization_loop(p.zero_control(), p, schedule=[1e-1, 1e-2], max_iter=2,
                                on_level=levels.append)
        assert res.alphas == [1e-1, 1e-2]
        assert len(res.residuals) == 2 and len(levels) == 2
        assert 0 <= res.best_level < 2
        assert all(np.isfinite(r1) and np.isfinite(r2) for r1, r2 in res.residuals)

    def schedule_must_decrease():
        p = _problem(3, Potential.double_obstacle())
        try:
            penalization_loop(p.zero_control(), p, schedule=[1e-2, 1e-1], max_iter=1)
        except ValueError:
            return
        raise AssertionError("increasing schedule accepted")

    def directional_descent():
        p = _problem(2, Potential.double_obstacle())
        res = descent_method(p.zero_control(), p, max_iter=2)
        J = res.objective
        assert all(b <= a for a, b in zip(J, J[1:])), J
        assert all(c <= DERIVATIVE_TOL for c in res.certificates), res.certificates
        assert res.certificates_ok

    def directional_needs_one_step():
        p = _problem(3, Potential.double_obstacle())
        try:
            descent_method(p.zero_control(), p, max_iter=1)
        except ValueError:
            return
        raise AssertionError("descent method accepted K = 3")

    node.run("α schedule values and validation", schedule_values)
    node.run("steepest descent decreases J", descent_monotone)
    node.run("steepest descent rejects the obstacle", descent_rejects_obstacle)
    node.run("penalization runs every level", penalization_levels)
    node.run("increasing α schedule raises ValueError", schedule_must_decrease)
    node.run("descent method: J decreases, certificates ≤ 0", directional_descent)
    node.run("descent method needs K = 2", directional_needs_one_step)
    return node


# ─────────────────────────────────────────────────────────────────────────────
# DIR — directional derivative of the obstacle step
# ─────────────────────────────────────────────────────────────────────────────

def node_directional() -> NodeResult:
    node = NodeResult("DIR", "Directional derivative and descent certificates")
    problem = _problem(2, Potential.double_obstacle())
    u = _random_control(problem, 41, 0.5)
    traj = solve_forward(problem, u)
    vspace = problem.vspace

    def _direction(seed: int) -> ControlField:
        return _random_control(problem, seed, 1.0)

    def linear_in_h():
        deriv = StepDerivative(traj[0], traj[1], u.at(1), problem, problem.potential)
        h1, h2 = _direction(42).at(1), _direction(43).at(1)
        d1, d2 = deriv.solve(h1), deriv.solve(h2)
        d12 = deriv.solve(Field(vspace, 2.0 * h1.coeffs - h2.coeffs))
        scale = max(1.0, float(np.abs(d1.phi.coeffs).max()), float(np.abs(d2.phi.coeffs).max()))
        assert np.max(np.abs(d12.phi.coeffs - (2.0 * d1.phi.coeffs - d2.phi.coeffs))) <= 1e-10 * scale
        assert np.max(np.abs(d12.v.coeffs - (2.0 * d1.v.coeffs - d2.v.coeffs))) <= 1e-10 * scale

    def forward_difference():
        d = _direction(44)
        chi = directional_derivative_solve(traj[0], traj[1], u.at(1), d.at(1), problem).phi.coeffs
        t = 1e-5
        moved = solve_forward(problem, u + t * d)[1]
        assert np.array_equal(moved.phase.active_plus, traj[1].phase.active_plus)
        assert np.array_equal(moved.phase.active_minus, traj[1].phase.active_minus)
        fd = (moved.phase.phi.coeffs - traj[1].phase.phi.coeffs) / t
        assert np.max(np.abs(chi)) > 0.0
        assert np.max(np.abs(fd - chi)) <= 1e-5 * np.max(np.abs(chi)) + 1e-9, np.max(np.abs(fd - chi))

    def stationary_point_gives_zero_h():
        zero = problem.zero_control()
        at_rest = solve_forward(problem, zero)
        stationary = replace(problem, spec=ObjectiveSpec(at_rest[1].phase.phi, 1e-4))
        c_h, g, h_sq = descent_subproblem(zero, at_rest, stationary, stationary.potential)
        assert np.max(np.abs(g)) <= 1e-14, g
        assert h_sq <= 1e-26 and np.max(np.abs(c_h)) <= 1e-12
        res = descent_method(zero, stationary, max_iter=3)
        assert res.converged and res.iterations == 0
        assert len(res.h_norm) == 1 and res.h_norm[0] <= 1e-12

    def positive_certificate_flagged():
        res = DescentMethodResult(u=problem.zero_control())
        assert res.record_certificate(1, -0.25, 0.5)
        logging.disable(logging.CRITICAL)
        try:
            assert not res.record_certificate(2, 1e-3, -1e-3)
        finally:
            logging.disable(logging.NOTSET)
        assert res.certificates == [-0.25, 1e-3]
        assert res.positive_certificates == [2] and not res.certificates_ok

    node.run("S′(u; h) is linear in h", linear_in_h)
    node.run("S′(u; h) matches a forward difference", forward_difference)
    node.run("h = 0 at a B-stationary point", stationary_point_gives_zero_h)
    node.run("positive certificate is recorded on the result", positive_certificate_flagged)
    return node


# ─────────────────────────────────────────────────────────────────────────────
# STAT — C-stationarity residuals
# ─────────────────────────────────────────────────────────────────────────────

def node_stationarity() -> NodeResult:
    node = NodeResult("STAT", "C-stationarity residuals")

    def r1_shrinks_with_alpha():
        problem = _problem(3, Potential.double_obstacle())
        u = _random_control(problem, 51, 0.5)
        r1s = []
        for alpha in (1e-1, 1e-2, 1e-3):
            P = problem.potential.with_alpha(alpha)
            traj = solve_forward(problem, u, P)
            adj = adjoint_solve(traj, u, problem.spec, P, problem.chp, problem.flp)
            r1s.append(c_stationarity_residual(traj, adj)[0])
        assert r1s[0] > 0.0, r1s
        assert all(b < a for a, b in zip(r1s, r1s[1:])), r1s

    node.run("r1 decreases as α decreases", r1_shrinks_with_alpha)
    return node


TREE = [
    ("OBJ", "Objective and control fields", node_objective),
    ("GRAD", "Adjoint gradient", node_gradient),
    ("OPT", "Optimization loops", node_optimization),
    ("DIR", "Directional derivative and descent certificates", node_directional),
    ("STAT", "C-stationarity residuals", node_stationarity),
]


def test_objective():
    assert_node(node_objective())


def test_gradient():
    assert_node(node_gradient())


def test_optimization():
    assert_node(node_optimization())


def test_directional():
    assert_node(node_directional())


def test_stationarity():
    assert_node(node_stationarity())


if __name__ == "__main__":
    main(TREE)
