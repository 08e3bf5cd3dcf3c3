"""
tests/test_navier_stokes.py — single-phase Navier-Stokes and the coupled CHNS step.

    python -m tests.test_navier_stokes
    pytest tests/test_navier_stokes.py
"""

from __future__ import annotations

from dataclasses import replace

import numpy as np

from app.fem.assembly import (
    divergence_matrix,
    load_vector,
    lumped_mass_vector,
    mass,
    mass_matrix,
    strain,
)
from app.fem.mesh import build_rect_mesh
from app.fem.quadrature import cell_quadrature
from app.fem.spaces import Field, function_space, interpolate, taylor_hood
from app.fem.transfer import l2_error
from app.flow.coupled import ChnsSystem, chns_step, initialize_chns, simulate_chns
from app.flow.energy import energy_step_check, kinetic_energy, total_energy
from app.flow.linearization import linearize_step
from app.flow.navier_stokes import ns_step
from app.models.states import ChParams, FlowState, FluidParams
from app.phasefield.potentials import Potential
from app.scenarios.initial_data import circle, manufactured_forcing, stream_vortex
from tests.harness import NodeResult, assert_node, main

TAU = 1e-2
CHP = ChParams(sigma=1.0, eps=0.1, kappa=1.0, mobility=1e-2, tau=TAU)
FLP = FluidParams(rho1=1.0, rho2=2.0, eta1=1.0, eta2=0.5, gravity=1.0, tau=TAU, convection="skew")
FLP_SKEW = replace(FLP, momentum="skew")


def _rest(mesh) -> FlowState:
    vspace, pspace = taylor_hood(mesh)
    return FlowState(v=Field.zeros(vspace), p=Field.zeros(pspace))


def _droplet(mesh) -> Field:
    return circle(function_space(mesh, 1), (0.5, 0.45), 0.25, CHP.eps)


# ─────────────────────────────────────────────────────────────────────────────
# NS — single-phase flow
# ─────────────────────────────────────────────────────────────────────────────

def node_ns() -> NodeResult:
    node = NodeResult("NS", "Single-phase Navier-Stokes")
    mesh = build_rect_mesh(8, 8)

    def rest_stays_at_rest():
        for form in ("standard", "skew", "stokes"):
            out = ns_step(_rest(mesh), None, FluidParams(tau=TAU, convection=form))
            assert np.max(np.abs(out.v.coeffs)) < 1e-14, form
            assert np.max(np.abs(out.p.coeffs)) < 1e-14, form

    def kinetic_energy_decays_unforced():
        vspace, pspace = taylor_hood(mesh)
        v = interpolate(vspace, stream_vortex(1.0))
        flow = FlowState(v=v, p=Field.zeros(pspace))
        params = FluidParams(tau=TAU, Re=10.0, convection="skew")
        M = mass_matrix(vspace)
        e0 = 0.5 * v.coeffs @ (M @ v.coeffs)
        for step in range(3):
            flow = ns_step(flow, None, params, step=step)
            e1 = 0.5 * flow.v.coeffs @ (M @ flow.v.coeffs)
            assert e1 <= e0 * (1.0 + 1e-12), (step, e0, e1)
            e0 = e1

    def solenoidal_and_zero_mean():
        params = FluidParams(tau=TAU, Re=1.0, convection="standard")
        out = ns_step(_rest(mesh), manufactured_forcing(1.0), params)
        div = divergence_matrix(out.v.space, out.p.space) @ out.v.coeffs
        v_norm = np.sqrt(out.v.coeffs @ (mass_matrix(out.v.space) @ out.v.coeffs))
        assert np.max(np.abs(div)) <= 1e-10 * max(1.0, v_norm)
        assert abs(lumped_mass_vector(out.p.space) @ out.p.coeffs) < 1e-11
        assert np.all(out.v.coeffs[out.v.space.dirichlet_mask] == 0.0)

    def manufactured_stokes_steady_state():
        params = FluidParams(tau=1.0, Re=1.0, convection="stokes")
        flow = _rest(mesh)
        for step in range(12):
            flow = ns_step(flow, manufactured_forcing(1.0), params, step=step)
        ref = np.sqrt(3.0 * np.pi ** 2 / 8.0)  # ‖v*‖_L²
        err = l2_error(flow.v, stream_vortex(1.0))
        assert err < 0.05 * ref, err

    def manufactured_stokes_rate():
        # τ large enough that one step is the steady Stokes solve
        params = FluidParams(tau=1e8, Re=1.0, convection="stokes")
        errs = []
        for n in (4, 8, 16):
            m = build_rect_mesh(n, n)
            flow = ns_step(_rest(m), manufactured_forcing(1.0), params)
            errs.append(l2_error(flow.v, stream_vortex(1.0)))
        rates = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
        assert rates[-1] >= 2.5, (errs, rates)
        assert np.all(rates > 2.0), (errs, rates)

    node.run("rest state stays at rest for every convection form", rest_stays_at_rest)
    node.run("kinetic energy decays without forcing (skew form)", kinetic_energy_decays_unforced)
    node.run("velocity weakly solenoidal, pressure zero-mean", solenoidal_and_zero_mean)
    node.run("Stokes steps approach the manufactured vortex", manufactured_stokes_steady_state)
    node.run("manufactured Stokes velocity converges at rate ≥ 2.5", manufactured_stokes_rate)
    return node


# ─────────────────────────────────────────────────────────────────────────────
# CHNS — coupled steps
# ─────────────────────────────────────────────────────────────────────────────

def node_chns() -> NodeResult:
    node = NodeResult("CHNS", "Coupled Cahn-Hilliard Navier-Stokes")
    mesh = build_rect_mesh(8, 8)
    phi_a = _droplet(mesh)
    L = lumped_mass_vector(phi_a.space)

    def zero_state_stationary():
        zero = Field.zeros(phi_a.space)
        flp = FluidParams(tau=TAU, convection="skew")
        traj = simulate_chns(zero, 3, Potential.double_well(), CHP, flp)
        for s in traj:
            assert np.max(np.abs(s.phase.phi.coeffs)) < 1e-13
            assert np.max(np.abs(s.flow.v.coeffs)) < 1e-13

    def mass_and_divergence():
        for P in (Potential.double_well(), Potential.double_obstacle()):
            traj = simulate_chns(phi_a, 3, P, CHP, FLP)
            assert len(traj) == 3
            m0 = L @ phi_a.coeffs
            for s in traj:
                assert abs(L @ s.phase.phi.coeffs - m0) <= 1e-11, P.label
                div = divergence_matrix(s.flow.v.space, s.flow.p.space) @ s.flow.v.coeffs
                assert np.max(np.abs(div)) <= 1e-9
            if not P.is_smooth:
                phis = np.concatenate([s.phase.phi.coeffs for s in traj])
                assert phis.min() >= -1.0 and phis.max() <= 1.0

    def energy_inequality_every_step():
        for P in (Potential.double_well(), Potential.moreau_yosida(1e-2), Potential.double_obstacle()):
            reports = []
            simulate_chns(phi_a, 4, P, CHP, FLP_SKEW,
                          on_step=lambda a, b: reports.append(energy_step_check(a, b, None, P, CHP, FLP_SKEW)))
            assert len(reports) == 3
            bad = [(r.step, r.lhs, r.rhs) for r in reports if not r.ok]
            assert not bad, (P.label, bad)

    def energy_inequality_with_control():
        vspace = taylor_hood(mesh)[0]
        u = interpolate(vspace, stream_vortex(0.5))
        s0 = initialize_chns(phi_a, Potential.double_well(), CHP)
        s1 = chns_step(s0, u, Potential.double_well(), CHP, FLP_SKEW)
        rep = energy_step_check(s0, s1, u, Potential.double_well(), CHP, FLP_SKEW)
        assert rep.ok, (rep.lhs, rep.rhs)
        assert rep.work != 0.0

    def fixed_point_matches_monolithic():
        P = Potential.double_well()
        a = simulate_chns(phi_a, 2, P, CHP, FLP, coupling_mode="monolithic")
        b = simulate_chns(phi_a, 2, P, CHP, FLP, coupling_mode="fixed_point")
        diff = np.max(np.abs(a[-1].phase.phi.coeffs - b[-1].phase.phi.coeffs))
        assert diff < 1e-7, diff

    def time_steps_must_match():
        s0 = initialize_chns(phi_a, Potential.double_well(), CHP)
        try:
            chns_step(s0, None, Potential.double_well(), CHP, FluidParams(tau=2 * TAU))
        except ValueError:
            return
        raise AssertionError("mismatched time steps accepted")

    def initialization_uses_one_ch_step():
        s0 = initialize_chns(phi_a, Potential.double_well(), CHP)
        assert s0.step == 0
        assert np.array_equal(s0.phi_prev.coeffs, phi_a.coeffs)
        assert np.max(np.abs(s0.flow.v.coeffs)) == 0.0
        assert kinetic_energy(s0.flow.v, s0.phi_prev, FLP) == 0.0
        assert np.isfinite(total_energy(s0, Potential.double_well(), CHP, FLP))

    def conservative_momentum_residual():
        P = Potential.double_well()
        traj = simulate_chns(phi_a, 3, P, CHP, FLP)
        before, after = traj[1], traj[2]
        vspace, pspace = after.flow.v.space, after.flow.p.space
        W = cell_quadrature(mesh).weights
        phi_qp = before.phase.phi.values_qp()
        phim_qp = before.phi_prev.values_qp()
        rho_m = FLP.rho(phim_qp)
        w = (rho_m[..., None] * before.flow.v.values_qp()
             - 0.5 * (FLP.rho2 - FLP.rho1) * CHP.m(phim_qp)[..., None] * before.phase.mu.grads_qp())
        v_new = after.flow.v
        flux = np.einsum("mqa,mqd->mqad", v_new.values_qp(), w)
        local = np.einsum("mq,mqad,mqid->mai", W, flux, vspace.qp_grads).reshape(mesh.n_cells, -1)
        transport = np.zeros(vspace.n_dof)
        np.add.at(transport, vspace.vector_cell_dofs, local)
        gravity = np.zeros(rho_m.shape + (2,))
        gravity[..., 1] = -FLP.gravity * rho_m
        capillary = load_vector(vspace, after.phase.mu.values_qp()[..., None] * before.phase.phi.grads_qp())
        lagged = mass(vspace, rho_m) @ before.flow.v.coeffs / TAU + load_vector(vspace, gravity)
        r = (mass(vspace, FLP.rho(phi_qp)) @ v_new.coeffs / TAU
             - transport
             + strain(vspace, FLP.eta(phi_qp)) @ v_new.coeffs
             + divergence_matrix(vspace, pspace).T @ after.flow.p.coeffs
             - capillary - lagged)
        free = vspace.free_dofs
        weights = 1.0 / mass_matrix(vspace).diagonal()[free]
        res = np.sqrt(np.sum(weights * r[free] ** 2))
        scale = np.sqrt(np.sum(weights * lagged[free] ** 2))
        assert np.max(np.abs(v_new.coeffs)) > 1e-6
        assert res <= 1e-9 * max(1.0, scale), (res, scale)

    def conservative_energy_balance():
        P = Potential.double_well()
        reports = {}
        for label, flp in (("conservative", FLP), ("skew", FLP_SKEW)):
            rows = []
            simulate_chns(phi_a, 4, P, CHP, flp,
                          on_step=lambda a, b, flp=flp, rows=rows: rows.append(energy_step_check(a, b, None, P, CHP, flp)))
            reports[label] = rows
        assert all(r.ok for r in reports["conservative"])
        assert any(r.transport_defect != 0.0 for r in reports["conservative"])
        assert all(r.transport_defect == 0.0 for r in reports["skew"])

    def matched_densities_drop_flux():
        flp = replace(FLP, rho2=FLP.rho1)
        P = Potential.double_well()
        traj = simulate_chns(phi_a, 3, P, CHP, flp)
        before, after = traj[1], traj[2]
        assert np.max(np.abs(before.phase.mu.coeffs)) > 0.0
        sysm = ChnsSystem.build(before, None, CHP, flp)
        rho = flp.rho(before.phi_prev.values_qp())
        assert np.array_equal(sysm.w_qp, rho[..., None] * before.flow.v.values_qp())
        lin = linearize_step(before, after, None, P, CHP, flp)
        lay = lin.layout
        assert lin.B[lay.v, lay.mu].count_nonzero() == 0

    def kinetic_energy_two_paths():
        v = interpolate(taylor_hood(mesh)[0], stream_vortex(0.7))
        a = kinetic_energy(v, phi_a, FLP, "matrix")
        b = kinetic_energy(v, phi_a, FLP, "quadrature")
        assert a > 0.0
        assert abs(a - b) <= 1e-12 * a, (a, b)

    node.run("φ = 0, v = 0 stays stationary", zero_state_stationary)
    node.run("∫φ conserved and v solenoidal (pDWE, DOE)", mass_and_divergence)
    node.run("discrete energy inequality holds every step (skew momentum)", energy_inequality_every_step)
    node.run("energy inequality with a control force (skew momentum)", energy_inequality_with_control)
    node.run("conservative momentum equation holds to 1e-9", conservative_momentum_residual)
    node.run("conservative energy balance closes with the transport defect", conservative_energy_balance)
    node.run("ρ₁ = ρ₂ removes the ∇μ flux", matched_densities_drop_flux)
    node.run("kinetic energy: matrix and quadrature agree", kinetic_energy_two_paths)
    node.run("block iteration reproduces the monolithic step", fixed_point_matches_monolithic)
    node.run("mismatched τ raises ValueError", time_steps_must_match)
    node.run("initial state from one Cahn-Hilliard step", initialization_uses_one_ch_step)
    return node


TREE = [
    ("NS", "Single-phase Navier-Stokes", node_ns),
    ("CHNS", "Coupled Cahn-Hilliard Navier-Stokes", node_chns),
]


def test_ns():
    assert_node(node_ns())


def test_chns():
    assert_node(node_chns())


if __name__ == "__main__":
    main(TREE)
