"""
tests/test_adaptivity.py — indicators, Dörfler marking and the adapt loop.

    python -m tests.test_adaptivity
    pytest tests/test_adaptivity.py
"""

from __future__ import annotations

from itertools import combinations

import numpy as np

from app.adaptivity import (
    IndicatorVector,
    MarkParams,
    adapt_loop,
    coarsen_mark,
    compute_indicators,
    dorfler_mark,
    interface_band_fraction,
    interface_indicators,
    total_cells,
)
from app.fem.assembly import lumped_mass_vector
from app.fem.mesh import build_rect_mesh
from app.fem.spaces import Field, function_space
from app.fem.transfer import integral
from app.models.states import ChParams
from app.phasefield.cahn_hilliard import ch_trajectory
from app.phasefield.potentials import Potential
from app.scenarios.initial_data import circle
from tests.harness import NodeResult, assert_node, main

CHP = ChParams(sigma=1.0, eps=0.1, kappa=1.0, mobility=1e-2, tau=2e-3)


def _smallest_cover(eta: np.ndarray, theta: float) -> int:
    """Cardinality of the smallest index set whose indicators reach θ·Ση."""
    target = theta * eta.sum()
    for k in range(1, eta.size + 1):
        for subset in combinations(range(eta.size), k):
            if eta[list(subset)].sum() >= target:
                return k
    return eta.size


# ─────────────────────────────────────────────────────────────────────────────
# MARK — Dörfler and coarsening marks
# ─────────────────────────────────────────────────────────────────────────────

def node_marking() -> NodeResult:
    node = NodeResult("MARK", "Dörfler and coarsening marks")
    rng = np.random.default_rng(17)

    def dorfler_matches_oracle():
        for trial in range(25):
            n = int(rng.integers(1, 16))
            eta = rng.random(n) ** 3
            theta = float(rng.uniform(0.05, 0.95))
            marked = dorfler_mark(eta, theta)
            assert eta[marked].sum() >= theta * eta.sum() - 1e-15, (trial, theta)
            assert marked.size == _smallest_cover(eta, theta), (trial, n, theta, marked.size)

    def dorfler_over_instants():
        eta = IndicatorVector([np.array([0.1, 5.0, 0.1]), np.array([4.0, 0.2])])
        marks = dorfler_mark(eta, 0.8)
        assert [m.tolist() for m in marks] == [[1], [0]]

    def ties_prefer_lower_instant():
        eta = IndicatorVector([np.array([1.0, 1.0]), np.array([1.0, 1.0])])
        marks = dorfler_mark(eta, 0.4)
        assert [m.tolist() for m in marks] == [[0, 1], []]

    def all_zero_marks_nothing():
        assert dorfler_mark(np.zeros(5), 0.5).size == 0

    def coarsening_excludes_refined():
        eta = np.array([10.0, 0.0, 0.001, 0.0, 5.0])
        refined = dorfler_mark(eta, 0.5)
        coarse = coarsen_mark(eta, 0.01, refined)
        assert set(coarse.tolist()) == {1, 2, 3}
        assert not set(coarse.tolist()) & set(refined.tolist())

    def theta_range():
        for bad in (0.0, 1.0, 1.5):
            try:
                dorfler_mark(np.ones(3), bad)
            except ValueError:
                continue
            raise AssertionError(f"theta {bad} accepted")

    node.run("marked set is minimal (subset enumeration, n ≤ 15)", dorfler_matches_oracle)
    node.run("marking ranks all (instant, cell) pairs together", dorfler_over_instants)
    node.run("ties go to the lower instant", ties_prefer_lower_instant)
    node.run("zero indicators mark nothing", all_zero_marks_nothing)
    node.run("coarsening marks skip refined cells", coarsening_excludes_refined)
    node.run("θ outside (0, 1) raises ValueError", theta_range)
    return node


# ─────────────────────────────────────────────────────────────────────────────
# IND — indicators on phase-field trajectories
# ─────────────────────────────────────────────────────────────────────────────

def node_indicators() -> NodeResult:
    node = NodeResult("IND", "Error indicators")
    mesh = build_rect_mesh(8, 8)
    phi_a = circle(function_space(mesh, 1), (0.5, 0.5), 0.25, CHP.eps)

    def interface_cells_dominate():
        eta = interface_indicators(phi_a)
        top = dorfler_mark(eta, 0.7)
        assert interface_band_fraction([top], [phi_a]) == 1.0
        assert eta.shape == (mesh.n_cells,) and np.all(eta >= 0.0)

    def constant_field_has_zero_indicator():
        flat = Field(phi_a.space, np.ones(phi_a.space.n_dof))
        assert np.max(np.abs(interface_indicators(flat))) == 0.0

    def one_vector_per_instant():
        states = ch_trajectory(phi_a, 3, Potential.double_well(), CHP)
        ind = compute_indicators(states, CHP, phi_a=phi_a)
        assert ind.n_instants == 3
        assert ind.total_cells == 3 * mesh.n_cells
        assert np.all(ind.flat()[0] >= 0.0)
        assert ind.summed().shape == (mesh.n_cells,)

    def params_validation():
        for kwargs in ({"a_max": 0}, {"a_max": 10, "theta_r": 1.0}, {"a_max": 10, "theta_c": 0.0}):
            try:
                MarkParams(**kwargs)
            except ValueError:
                continue
            raise AssertionError(f"{kwargs} accepted")

    node.run("refinement marks hug the interface", interface_cells_dominate)
    node.run("constant φ has zero interface indicator", constant_field_has_zero_indicator)
    node.run("indicators per instant", one_vector_per_instant)
    node.run("MarkParams validation", params_validation)
    return node


# ─────────────────────────────────────────────────────────────────────────────
# LOOP — solve, estimate, mark, adapt
# ─────────────────────────────────────────────────────────────────────────────

def node_loop() -> NodeResult:
    node = NodeResult("LOOP", "Adaptive loop")
    base = build_rect_mesh(6, 6)

    def _initial(mesh) -> Field:
        return circle(function_space(mesh, 1), (0.5, 0.5), 0.25, CHP.eps)

    def _solve(meshes):
        phi_a = _initial(meshes[0])
        states = ch_trajectory(phi_a, len(meshes), Potential.double_well(), CHP, meshes=list(meshes))
        return (phi_a, states), compute_indicators(states, CHP, phi_a=phi_a)

    def per_instant_meshes_grow():
        rows = []
        res = adapt_loop(_solve, [base] * 3, MarkParams(a_max=5000, theta_r=0.5), max_cycles=2,
                         on_cycle=rows.append)
        assert len(res.cycles) == 3 and len(rows) == 3
        assert res.n_adapted == 2
        assert res.cycles[-1].total_cells > res.cycles[0].total_cells
        for m in res.meshes:
            m.check()
        phi_a, states = res.solution
        m0 = integral(phi_a)
        for s in states:
            L = lumped_mass_vector(s.phi.space)
            assert abs(L @ s.phi.coeffs - m0) <= 1e-10

    def shared_mesh_mode():
        res = adapt_loop(_solve, [base] * 3, MarkParams(a_max=5000, theta_r=0.5), max_cycles=1,
                         shared_mesh=True)
        assert all(m is res.meshes[0] for m in res.meshes)
        assert res.cycles[-1].total_cells == 3 * res.meshes[0].n_cells

    def cell_budget_stops_loop():
        res = adapt_loop(_solve, [base] * 2, MarkParams(a_max=200, theta_r=0.5), max_cycles=10)
        assert len(res.cycles) >= 2
        assert res.cycles[-1].total_cells > 200
        assert res.n_adapted == len(res.cycles) - 1

    def totals():
        meshes = [base, build_rect_mesh(2, 2)]
        assert total_cells(meshes) == base.n_cells + 8
        assert total_cells([base, base], shared_mesh=True) == 2 * base.n_cells

    node.run("per-instant meshes refine and conserve ∫φ", per_instant_meshes_grow)
    node.run("shared-mesh mode adapts one mesh", shared_mesh_mode)
    node.run("cell budget A_max stops the loop", cell_budget_stops_loop)
    node.run("total cell counts", totals)
    return node


TREE = [
    ("MARK", "Dörfler and coarsening marks", node_marking),
    ("IND", "Error indicators", node_indicators),
    ("LOOP", "Adaptive loop", node_loop),
]


def test_marking():
    assert_node(node_marking())


def test_indicators():
    assert_node(node_indicators())


def test_loop():
    assert_node(node_loop())


if __name__ == "__main__":
    main(TREE)
