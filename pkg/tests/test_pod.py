"""
tests/test_pod.py — snapshot POD, reduced Cahn-Hilliard and reduced Navier-Stokes.

    python -m tests.test_pod
    python -m tests.test_pod BASIS
    pytest tests/test_pod.py
"""

from __future__ import annotations

import numpy as np

from app.core.exceptions import PodRankError, RomError
from app.fem.assembly import divergence_matrix, gram_matrix, mass_matrix
from app.fem.mesh import build_rect_mesh
from app.fem.refinement import refine
from app.fem.spaces import Field, function_space, interpolate, taylor_hood
from app.flow.navier_stokes import ns_step
from app.models.states import ChParams, FlowState, FluidParams
from app.phasefield.cahn_hilliard import ch_trajectory
from app.phasefield.potentials import Potential
from app.pod import (
    PodBasis,
    SnapshotSet,
    ch_rom_build,
    ch_rom_simulate,
    discrete_inf_sup,
    div_free_project,
    eigen_decay_report,
    normalized_spectrum,
    ns_rom_velocity,
    ns_rom_velocity_pressure,
    orthonormalize,
    pod_basis,
    project_basis,
    projection_error,
    rom_trajectory_error,
    snapshot_gramian,
    supremizer,
    tail_sums,
)
from app.scenarios.initial_data import circle, manufactured_forcing, velocity_field
from tests.harness import NodeResult, assert_node, main

CHP = ChParams(sigma=1.0, eps=0.1, kappa=1.0, mobility=1e-2, tau=4e-3)


def _ch_snapshots(n_instants: int = 8, P: Potential = Potential.double_well(), velocity: bool = True):
    mesh = build_rect_mesh(8, 8)
    phi_a = circle(function_space(mesh, 1), (0.5, 0.35), 0.2, CHP.eps)
    v = velocity_field("vortex", mesh, 1.0) if velocity else None
    states = ch_trajectory(phi_a, n_instants - 1, P, CHP, velocity=v)
    return phi_a, v, [phi_a] + [s.phi for s in states]


def _identity_holds(S: SnapshotSet, ell: int) -> None:
    basis = pod_basis(S, ell)
    err = projection_error(S, basis)
    tail = basis.tail_sum()
    scale = float(np.clip(basis.eigenvalues, 0.0, None).sum())
    assert abs(err - tail) <= 1e-8 * tail + 1e-12 * scale, (ell, err, tail)


# ─────────────────────────────────────────────────────────────────────────────
# BASIS — Gramian, spectrum, optimality identity
# ─────────────────────────────────────────────────────────────────────────────

def node_basis() -> NodeResult:
    node = NodeResult("BASIS", "Snapshot Gramian and POD basis")
    mesh = build_rect_mesh(4, 4)
    p1 = function_space(mesh, 1)

    def orthonormal_snapshots_give_identity():
        rng = np.random.default_rng(3)
        M = mass_matrix(p1).toarray()
        C = np.linalg.cholesky(M)
        Q, _ = np.linalg.qr(rng.standard_normal((p1.n_dof, 2)))
        Y = np.linalg.solve(C.T, Q)        # Yᵀ M Y = I
        S = SnapshotSet([Field(p1, Y[:, 0]), Field(p1, Y[:, 1])], np.ones(2))
        assert np.allclose(snapshot_gramian(S), np.eye(2), atol=1e-12)

    def single_snapshot_eigenvalue():
        y = Field(p1, np.full(p1.n_dof, 2.0))  # ‖y‖² = 4
        S = SnapshotSet([y], np.array([0.5]))
        K = snapshot_gramian(S)
        assert K.shape == (1, 1) and abs(K[0, 0] - 2.0) < 1e-13
        basis = pod_basis(S, 1)
        assert abs(basis.eigenvalues[0] - 2.0) < 1e-13
        assert basis.tail_sum() == 0.0

    def identity_for_several_ells():
        _, _, fields = _ch_snapshots()
        S = SnapshotSet.from_fields(fields, "trapezoidal", CHP.tau)
        for ell in (1, 2, 5):
            _identity_holds(S, ell)

    def identity_in_h1():
        _, _, fields = _ch_snapshots()
        S = SnapshotSet.from_fields(fields, "uniform", x_space="H1")
        basis = pod_basis(S, 3)
        G = basis.matrix.T @ (gram_matrix(basis.space, "H1") @ basis.matrix)
        assert np.allclose(G, np.eye(3), atol=1e-10)
        _identity_holds(S, 3)

    def snapshots_on_different_meshes():
        _, _, fields = _ch_snapshots(4, velocity=False)
        base = fields[0].mesh
        finer = refine(base, [0, 1, 2, 3])
        moved = [fields[0], interpolate(function_space(finer, 1), lambda x: np.cos(np.pi * x[:, 0]))] + fields[2:]
        S = SnapshotSet.from_fields(moved, "uniform")
        assert np.allclose(snapshot_gramian(S, "common"), snapshot_gramian(S, "pairwise"), atol=1e-12)
        _identity_holds(S, 2)

    def rank_exceeded():
        y = Field(p1, np.linspace(0.0, 1.0, p1.n_dof))
        S = SnapshotSet([y, y.with_coeffs(2.0 * y.coeffs)], np.ones(2))
        try:
            pod_basis(S, 2)
        except PodRankError:
            return
        raise AssertionError("ell above the numerical rank accepted")

    def invalid_sets():
        y = Field(p1, np.ones(p1.n_dof))
        for build in (lambda: SnapshotSet([], np.zeros(0)),
                      lambda: SnapshotSet([y], np.array([-1.0])),
                      lambda: SnapshotSet([y, y], np.ones(3)),
                      lambda: SnapshotSet([y], np.ones(1), "H2")):
            try:
                build()
            except ValueError:
                continue
            raise AssertionError("invalid snapshot set accepted")

    node.run("two X-orthonormal snapshots → identity Gramian", orthonormal_snapshots_give_identity)
    node.run("‖y‖² = 4, α = 0.5 → [2]", single_snapshot_eigenvalue)
    node.run("projection error = Σ_{j>ℓ} λ_j for ℓ ∈ {1, 2, 5}", identity_for_several_ells)
    node.run("H1 modes orthonormal, identity holds", identity_in_h1)
    node.run("snapshots on different meshes of one hierarchy", snapshots_on_different_meshes)
    node.run("ℓ above the rank raises PodRankError", rank_exceeded)
    node.run("invalid snapshot sets raise ValueError", invalid_sets)
    return node


# ─────────────────────────────────────────────────────────────────────────────
# DECAY — eigenvalue decay comparisons
# ─────────────────────────────────────────────────────────────────────────────

def node_decay() -> NodeResult:
    node = NodeResult("DECAY", "Eigenvalue decay")
    _, _, fields = _ch_snapshots()
    S = SnapshotSet.from_fields(fields, "uniform")

    def normalized_starts_at_one():
        lam = normalized_spectrum(S)
        assert abs(lam[0] - 1.0) < 1e-15
        assert np.all(np.diff(lam) <= 1e-15)

    def same_set_is_ordered():
        rep = eigen_decay_report(S, S, (2, 4))
        assert rep.ordering_ok
        assert len(rep.rows()) == S.size

    def tail_sums_per_label():
        lam = normalized_spectrum(S)
        sums = tail_sums({"a": lam}, 2)
        assert abs(sums["a"] - float(np.clip(lam[1:], 0.0, None).sum())) < 1e-15

    node.run("λ_j/λ₁ starts at 1 and decreases", normalized_starts_at_one)
    node.run("a set compared with itself is ordered", same_set_is_ordered)
    node.run("tail sums from a 1-based start", tail_sums_per_label)
    return node


# ─────────────────────────────────────────────────────────────────────────────
# CHROM — reduced Cahn-Hilliard model
# ─────────────────────────────────────────────────────────────────────────────

def node_ch_rom() -> NodeResult:
    node = NodeResult("CHROM", "Reduced Cahn-Hilliard model")
    phi_a, v, fields = _ch_snapshots()
    S = SnapshotSet.from_fields(fields, "trapezoidal", CHP.tau)

    def reduced_mass_is_identity():
        rom = ch_rom_build(pod_basis(S, 4), Potential.double_well(), CHP, v)
        assert np.allclose(rom.M_r, np.eye(4), atol=1e-10)

    def no_transport_without_velocity():
        rom = ch_rom_build(pod_basis(S, 4), Potential.double_well(), CHP, None)
        assert np.max(np.abs(rom.T_r)) == 0.0

    def trajectory_from_projected_datum():
        basis = pod_basis(S, 5)
        rom = ch_rom_build(basis, Potential.double_well(), CHP, v)
        run = ch_rom_simulate(rom, phi_a, len(fields))
        assert run.coeffs.shape == (len(fields), 5)
        assert np.allclose(run.coeffs[0], basis.coefficients(phi_a))
        err = rom_trajectory_error(rom, run, fields, CHP.tau)
        assert np.isfinite(err) and err < 0.5, err

    def full_space_reproduces_fem():
        space = phi_a.space
        C = np.linalg.cholesky(mass_matrix(space).toarray())
        Psi = np.linalg.solve(C.T, np.eye(space.n_dof))      # ΨᵀMΨ = I
        full = PodBasis(space, Psi, np.ones(space.n_dof), "L2")
        rom = ch_rom_build(full, Potential.double_well(), CHP, v)
        run = ch_rom_simulate(rom, phi_a, len(fields))
        err = rom_trajectory_error(rom, run, fields, CHP.tau)
        assert err <= 1e-8, err

    def more_modes_no_worse():
        _, v_long, long_fields = _ch_snapshots(40)
        S_long = SnapshotSet.from_fields(long_fields, "trapezoidal", CHP.tau)
        rank = pod_basis(S_long, 1).rank
        hi = min(20, rank)
        lo = min(10, hi)
        errors = []
        for ell in (lo, hi):
            rom = ch_rom_build(pod_basis(S_long, ell), Potential.double_well(), CHP, v_long)
            run = ch_rom_simulate(rom, long_fields[0], len(long_fields))
            errors.append(rom_trajectory_error(rom, run, long_fields, CHP.tau))
        assert errors[1] <= errors[0] * (1.0 + 1e-6) + 1e-12, (lo, hi, errors)

    def obstacle_rejected():
        try:
            ch_rom_build(pod_basis(S, 2), Potential.double_obstacle(), CHP)
        except RomError:
            return
        raise AssertionError("reduced model accepted the obstacle")

    def variable_mobility_rejected():
        chp = ChParams(sigma=1.0, eps=0.1, mobility=1e-2, mobility2=2e-2, tau=1e-3)
        try:
            ch_rom_build(pod_basis(S, 2), Potential.double_well(), chp)
        except RomError:
            return
        raise AssertionError("reduced model accepted a variable mobility")

    node.run("L² basis → reduced mass = I", reduced_mass_is_identity)
    node.run("zero velocity → transport block = 0", no_transport_without_velocity)
    node.run("reduced trajectory starts at P_ℓ φ_a and tracks the full one", trajectory_from_projected_datum)
    node.run("full-dimensional basis reproduces the FEM trajectory", full_space_reproduces_fem)
    node.run("ℓ = 20 tracks at least as well as ℓ = 10", more_modes_no_worse)
    node.run("obstacle potential raises RomError", obstacle_rejected)
    node.run("variable mobility raises RomError", variable_mobility_rejected)
    return node


# ─────────────────────────────────────────────────────────────────────────────
# NSROM — divergence-free modes and reduced Navier-Stokes
# ─────────────────────────────────────────────────────────────────────────────

def _flow_snapshots(n_steps: int = 6):
    mesh = build_rect_mesh(4, 4)
    vspace, pspace = taylor_hood(mesh)
    params = FluidParams(tau=0.05, Re=1.0, convection="skew")
    flow = FlowState(v=Field.zeros(vspace), p=Field.zeros(pspace))
    flows = []
    for step in range(n_steps):
        flow = ns_step(flow, manufactured_forcing(1.0), params, step=step)
        flows.append(flow)
    return params, flows


def node_ns_rom() -> NodeResult:
    node = NodeResult("NSROM", "Reduced Navier-Stokes")
    params, flows = _flow_snapshots()
    Sv = SnapshotSet.from_fields([f.v for f in flows], "trapezoidal", params.tau, "H1")
    Sp = SnapshotSet.from_fields([f.p for f in flows], "trapezoidal", params.tau, "L2")
    vspace, pspace = taylor_hood(flows[0].v.mesh)

    def projection_is_divergence_free():
        rng = np.random.default_rng(5)
        coeffs = rng.standard_normal(vspace.n_dof)
        coeffs[vspace.dirichlet_mask] = 0.0
        u = div_free_project(Field(vspace, coeffs))
        div = divergence_matrix(vspace, pspace) @ u.coeffs
        assert np.max(np.abs(div)) <= 1e-10 * max(1.0, np.linalg.norm(u.coeffs))
        again = div_free_project(u)
        assert np.allclose(again.coeffs, u.coeffs, atol=1e-10)

    def identity_on_velocity_snapshots():
        _identity_holds(Sv, 2)

    def inf_sup_positive():
        beta = discrete_inf_sup(vspace, pspace)
        assert 0.0 < beta < 1.0, beta

    def supremizer_represents_divergence():
        q = interpolate(pspace, lambda x: x[:, 0] - 0.5)
        t = supremizer(q, vspace)
        B = divergence_matrix(vspace, pspace)
        A = gram_matrix(vspace, "H01")
        rng = np.random.default_rng(9)
        w = rng.standard_normal(vspace.n_dof)
        w[vspace.dirichlet_mask] = 0.0
        assert abs(float(t.coeffs @ (A @ w)) - float(q.coeffs @ (B @ w))) < 1e-10

    def velocity_rom_runs():
        basis = project_basis(pod_basis(Sv, 3))
        traj = ns_rom_velocity(basis, params, 4, forcing=manufactured_forcing(1.0))
        assert traj.v_coeffs.shape == (4, basis.ell)
        assert traj.kinetic[0] == 0.0 and np.all(np.isfinite(traj.kinetic))
        assert traj.kinetic[-1] > 0.0

    def velocity_pressure_rom_runs():
        vb = project_basis(pod_basis(Sv, 2))
        pb = pod_basis(Sp, 1)
        traj = ns_rom_velocity_pressure(vb, pb, params, 3, forcing=manufactured_forcing(1.0))
        assert traj.p_coeffs.shape == (3, 1)
        assert traj.condition is not None and np.isfinite(traj.condition)
        assert traj.pressure(2).space is traj.pspace

    def projection_linear_and_optimal():
        rng = np.random.default_rng(11)
        X = gram_matrix(vspace, "H1")
        samples = []
        for _ in range(3):
            coeffs = rng.standard_normal(vspace.n_dof)
            coeffs[vspace.dirichlet_mask] = 0.0
            samples.append(Field(vspace, coeffs))
        a, b = 1.5, -0.25
        combo = div_free_project(Field(vspace, a * samples[0].coeffs + b * samples[1].coeffs))
        parts = a * div_free_project(samples[0]).coeffs + b * div_free_project(samples[1]).coeffs
        assert np.allclose(combo.coeffs, parts, atol=1e-10)
        v = samples[2].coeffs
        u = div_free_project(samples[2]).coeffs
        w = div_free_project(samples[0]).coeffs
        assert abs(float((v - u) @ (X @ w))) <= 1e-10 * float(np.sqrt(v @ (X @ v)) * np.sqrt(w @ (X @ w)))
        dist = float((v - u) @ (X @ (v - u)))
        for t in (0.3, -1.0):
            other = v - (u + t * w)
            assert dist <= float(other @ (X @ other))

    def supremizers_restore_stability():
        vb = pod_basis(Sv, 1)
        Q = orthonormalize(np.column_stack([
            interpolate(pspace, lambda x: x[:, 0] - 0.5).coeffs,
            interpolate(pspace, lambda x: x[:, 1] - 0.5).coeffs,
        ]), mass_matrix(pspace))
        pb = PodBasis(pspace, Q, np.ones(2), "L2")
        try:
            ns_rom_velocity_pressure(vb, pb, params, 2, enrich=False)
        except RomError:
            pass
        else:
            raise AssertionError("one velocity mode against two pressure modes accepted")
        traj = ns_rom_velocity_pressure(vb, pb, params, 2, forcing=manufactured_forcing(1.0))
        assert traj.V.shape[1] == 3
        assert np.isfinite(traj.condition)

    def velocity_only_has_no_pressure():
        traj = ns_rom_velocity(project_basis(pod_basis(Sv, 1)), params, 2)
        try:
            traj.pressure(1)
        except RomError:
            return
        raise AssertionError("velocity-only model returned a pressure")

    node.run("H1 divergence-free projection is idempotent", projection_is_divergence_free)
    node.run("identity on velocity snapshots in H1", identity_on_velocity_snapshots)
    node.run("discrete inf-sup constant is positive", inf_sup_positive)
    node.run("(Tq, w)_H01 = b(w, q)", supremizer_represents_divergence)
    node.run("velocity ROM builds up kinetic energy from rest", velocity_rom_runs)
    node.run("velocity-pressure ROM with supremizers", velocity_pressure_rom_runs)
    node.run("divergence-free projection is linear and X-optimal", projection_linear_and_optimal)
    node.run("1 velocity vs 2 pressure modes: singular, stable with supremizers", supremizers_restore_stability)
    node.run("velocity-only ROM has no pressure", velocity_only_has_no_pressure)
    return node


TREE = [
    ("BASIS", "Snapshot Gramian and POD basis", node_basis),
    ("DECAY", "Eigenvalue decay", node_decay),
    ("CHROM", "Reduced Cahn-Hilliard model", node_ch_rom),
    ("NSROM", "Reduced Navier-Stokes", node_ns_rom),
]


def test_basis():
    assert_node(node_basis())


def test_decay():
    assert_node(node_decay())


def test_ch_rom():
    assert_node(node_ch_rom())


def test_ns_rom():
    assert_node(node_ns_rom())


if __name__ == "__main__":
    main(TREE)
