"""
tests/test_cahn_hilliard.py — potentials and the Cahn-Hilliard step.

    python -m tests.test_cahn_hilliard
    pytest tests/test_cahn_hilliard.py
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components

from app.fem.assembly import lumped_mass_vector
from app.fem.mesh import build_rect_mesh
from app.fem.refinement import refine
from app.fem.spaces import Field, function_space
from app.models.states import ChParams, PhaseState
from app.phasefield.cahn_hilliard import ch_step, ch_step_pdas, ch_step_splitting, ch_trajectory
from app.phasefield.energy import ch_energy, ch_energy_terms
from app.phasefield.potentials import Potential, potential_eval
from app.scenarios.initial_data import circle, ellipse, velocity_field
from tests.harness import NodeResult, assert_node, main

PARAMS = ChParams(sigma=1.0, eps=0.08, kappa=1.0, mobility=1e-2, tau=1e-3)


def _disk(n: int = 12, eps: float = 0.08) -> Field:
    return circle(function_space(build_rect_mesh(n, n), 1), (0.5, 0.45), 0.25, eps)


def _droplets(phi: Field, share: float = 0.1) -> int:
    """Connected parts of {φ > 0} holding at least ``share`` of the largest part's area."""
    inside = phi.coeffs > 0.0
    edges = phi.mesh.edges
    keep = inside[edges[:, 0]] & inside[edges[:, 1]]
    n = phi.space.n_dof
    graph = sp.csr_matrix((np.ones(int(keep.sum())), (edges[keep, 0], edges[keep, 1])), shape=(n, n))
    _, labels = connected_components(graph, directed=False)
    area = np.bincount(labels[inside], weights=lumped_mass_vector(phi.space)[inside])
    area = area[area > 0.0]
    return int(np.sum(area >= share * area.max()))


# ─────────────────────────────────────────────────────────────────────────────
# POT — potential variants
# ─────────────────────────────────────────────────────────────────────────────

def node_potentials() -> NodeResult:
    node = NodeResult("POT", "Potential variants")

    def moreau_yosida_outside():
        P = Potential.moreau_yosida(0.1)
        value, d1, _ = potential_eval(P, 1.5)
        assert abs(value - 1.25) < 1e-14, value
        assert abs(d1 - 5.0) < 1e-14, d1

    def moreau_yosida_inside():
        P = Potential.moreau_yosida(0.1)
        assert potential_eval(P, 0.5) == (0.0, 0.0, 0.0)

    def double_well_at_one():
        value, d1, d2 = potential_eval(Potential.double_well(), 1.0)
        assert (value, d1, d2) == (0.25, 1.0, 3.0)

    def obstacle_subgradient():
        P = Potential.double_obstacle()
        value, (lo, hi) = potential_eval(P, 1.0)
        assert value == 0.0 and lo == 0.0 and hi == np.inf
        value, (lo, hi) = potential_eval(P, -1.0)
        assert lo == -np.inf and hi == 0.0
        value, _ = potential_eval(P, 1.2)
        assert value == np.inf
        assert not P.is_smooth

    def relaxed_obstacle_power():
        P = Potential.relaxed_obstacle(4.0, s=2.0)
        assert abs(float(P.value(1.5)) - 2.0 / 4.0 * 0.5 ** 4) < 1e-15
        assert abs(float(P.derivative(-1.5)) + 2.0 * 0.5 ** 3) < 1e-15

    def labels_and_relaxation():
        assert Potential.double_well().label == "pDWE"
        assert Potential.double_obstacle().label == "DOE"
        assert Potential.relaxed_obstacle(2.0).label == "DOE2"
        my = Potential.double_obstacle().with_alpha(1e-3)
        assert my.is_smooth and my.label == "MY(alpha=0.001)"

    def rejects_bad_parameters():
        for build in (lambda: Potential.moreau_yosida(0.0),
                      lambda: Potential.relaxed_obstacle(1.5),
                      lambda: Potential.double_obstacle(psi1=0.5, psi2=1.0)):
            try:
                build()
            except ValueError:
                continue
            raise AssertionError("invalid potential accepted")

    def second_derivative_matches_difference():
        points = np.linspace(-1.9, 1.9, 20)
        h = 1e-6
        for P in (Potential.double_well(), Potential.moreau_yosida(0.1), Potential.relaxed_obstacle(4.0, s=2.0)):
            fd = (P.derivative(points + h) - P.derivative(points - h)) / (2.0 * h)
            exact = np.asarray(P.second_derivative(points))
            assert np.all(np.abs(fd - exact) <= 1e-6 * np.maximum(1.0, np.abs(exact))), P.label

    node.run("MY(0.1) at φ = 1.5: value 1.25, derivative 5", moreau_yosida_outside)
    node.run("MY(0.1) at φ = 0.5 is zero", moreau_yosida_inside)
    node.run("double well at φ = 1: (0.25, 1, 3)", double_well_at_one)
    node.run("double obstacle subgradient at the bounds", obstacle_subgradient)
    node.run("relaxed obstacle of power 4", relaxed_obstacle_power)
    node.run("labels and Moreau-Yosida relaxation", labels_and_relaxation)
    node.run("invalid parameters raise ValueError", rejects_bad_parameters)
    node.run("Ψ₀″ matches central differences of Ψ₀′ at 20 points", second_derivative_matches_difference)
    return node


# ─────────────────────────────────────────────────────────────────────────────
# STEP — one implicit step
# ─────────────────────────────────────────────────────────────────────────────

def node_step() -> NodeResult:
    node = NodeResult("STEP", "One Cahn-Hilliard step")
    phi = _disk()
    L = lumped_mass_vector(phi.space)

    def zero_stays_zero():
        zero = Field.zeros(phi.space)
        out = ch_step(PhaseState.from_phi(zero), None, Potential.double_well(), PARAMS)
        assert np.max(np.abs(out.phi.coeffs)) < 1e-14
        assert np.max(np.abs(out.mu.coeffs)) < 1e-14

    def mass_conserved_all_variants():
        for P in (Potential.double_well(), Potential.moreau_yosida(1e-2),
                  Potential.relaxed_obstacle(2.0, s=1e2), Potential.double_obstacle()):
            out = ch_step(PhaseState.from_phi(phi), None, P, PARAMS)
            drift = abs(L @ out.phi.coeffs - L @ phi.coeffs)
            assert drift <= 1e-11, (P.label, drift)

    def obstacle_stays_in_bounds():
        P = Potential.double_obstacle()
        out = ch_step_pdas(PhaseState.from_phi(phi), None, P, PARAMS)
        assert out.phi.coeffs.min() >= -1.0 and out.phi.coeffs.max() <= 1.0
        a = out.slack.coeffs
        assert np.all(a[out.active_plus] >= -1e-10)
        assert np.all(a[out.active_minus] <= 1e-10)

    def dispatch_matches_variant():
        state = PhaseState.from_phi(phi)
        try:
            ch_step_splitting(state, None, Potential.double_obstacle(), PARAMS)
        except ValueError:
            pass
        else:
            raise AssertionError("splitting accepted the obstacle")
        try:
            ch_step_pdas(state, None, Potential.double_well(), PARAMS)
        except ValueError:
            return
        raise AssertionError("active-set step accepted a smooth potential")

    def transport_conserves_mass():
        v = velocity_field("vortex", phi.mesh, 1.0)
        out = ch_step(PhaseState.from_phi(phi), v, Potential.double_well(), PARAMS)
        assert abs(L @ out.phi.coeffs - L @ phi.coeffs) <= 1e-11
        assert not np.allclose(out.phi.coeffs, phi.coeffs)

    def moreau_yosida_approaches_obstacle():
        start = PhaseState.from_phi(Field(phi.space, np.clip(1.5 * phi.coeffs, -1.0, 1.0)))
        P = Potential.double_obstacle()
        ref = ch_step_pdas(start, None, P, PARAMS)
        assert ref.active_plus.size + ref.active_minus.size > 0
        errs = [np.max(np.abs(ch_step(start, None, P.with_alpha(a), PARAMS).phi.coeffs - ref.phi.coeffs))
                for a in (1e-2, 1e-3, 1e-4)]
        assert all(b < 0.5 * a for a, b in zip(errs, errs[1:])), errs

    node.run("φ = 0 stays at 0", zero_stays_zero)
    node.run("∫φ conserved for every variant", mass_conserved_all_variants)
    node.run("obstacle step stays in [ψ₁, ψ₂] with a complementary slack", obstacle_stays_in_bounds)
    node.run("solvers reject the wrong potential", dispatch_matches_variant)
    node.run("transport by a wall-bounded vortex conserves ∫φ", transport_conserves_mass)
    node.run("MY(α) steps approach the active-set step as α → 0", moreau_yosida_approaches_obstacle)
    return node


# ─────────────────────────────────────────────────────────────────────────────
# TRAJ — trajectories and energy decay
# ─────────────────────────────────────────────────────────────────────────────

def node_trajectory() -> NodeResult:
    node = NodeResult("TRAJ", "Trajectories and energy decay")
    phi = _disk()

    def energy_non_increasing():
        for P in (Potential.double_well(), Potential.double_obstacle()):
            states = ch_trajectory(phi, 5, P, PARAMS)
            energies = [ch_energy(s, P, PARAMS) for s in states]
            for a, b in zip(energies, energies[1:]):
                assert b <= a + 1e-10 * max(1.0, abs(a)), (P.label, energies)

    def energy_terms_split():
        terms = ch_energy_terms(phi, Potential.double_well(), PARAMS)
        assert terms["gradient"] > 0.0
        assert abs(sum(terms.values()) - ch_energy(PhaseState.from_phi(phi), Potential.double_well(), PARAMS)) < 1e-14

    def trajectory_length():
        states = ch_trajectory(phi, 3, Potential.double_well(), PARAMS)
        assert len(states) == 3

    def per_instant_meshes_conserve_mass():
        base = phi.mesh
        meshes = [base, refine(base, [0, 1, 2]), refine(base, [40])]
        states = ch_trajectory(phi, 3, Potential.double_well(), PARAMS, meshes=meshes)
        L0 = lumped_mass_vector(phi.space)
        m0 = L0 @ phi.coeffs
        for s, m in zip(states, meshes):
            assert s.mesh is m
            mk = lumped_mass_vector(s.phi.space) @ s.phi.coeffs
            assert abs(mk - m0) <= 1e-10, (mk, m0)

    def mesh_count_must_match():
        try:
            ch_trajectory(phi, 3, Potential.double_well(), PARAMS, meshes=[phi.mesh])
        except ValueError:
            return
        raise AssertionError("mesh count mismatch accepted")

    def ellipse_splits_in_two():
        params = ChParams(sigma=1.0, eps=0.02, kappa=1.0, mobility=1.0, tau=2.5e-5)
        mesh = build_rect_mesh(64, 32, (0.0, 2.0, 0.0, 1.0))
        start = ellipse(function_space(mesh, 1), (1.0, 0.5), (0.4, 0.2), params.eps)
        v = velocity_field("ellipse_vortices", mesh, 70.0)
        assert _droplets(start) == 1
        states = ch_trajectory(start, 300, Potential.double_well(), params, velocity=v)
        assert _droplets(states[-1].phi) == 2

    node.run("E(φ) non-increasing without transport", energy_non_increasing)
    node.run("energy terms add up", energy_terms_split)
    node.run("trajectory has one state per instant", trajectory_length)
    node.run("per-instant meshes keep ∫φ", per_instant_meshes_conserve_mass)
    node.run("wrong number of meshes raises ValueError", mesh_count_must_match)
    node.run("ellipse torn by the vortex pair ends as two droplets", ellipse_splits_in_two)
    return node


TREE = [
    ("POT", "Potential variants", node_potentials),
    ("STEP", "One Cahn-Hilliard step", node_step),
    ("TRAJ", "Trajectories and energy decay", node_trajectory),
]


def test_potentials():
    assert_node(node_potentials())


def test_step():
    assert_node(node_step())


def test_trajectory():
    assert_node(node_trajectory())


if __name__ == "__main__":
    main(TREE)
