"""
tests/harness.py — tree test harness shared by every test module.

Each test module builds a list of nodes; a node runs a group of named checks
and records PASS/FAIL per check instead of stopping at the first failure:

    TREE = [("MESH", "Mesh and hierarchy", node_mesh), ...]

    python -m tests.test_mesh_fem            # run all nodes
    python -m tests.test_mesh_fem MESH QUAD  # selected nodes

pytest collects the ``test_*`` wrapper of each node, which fails with the
list of failed checks.
"""

from __future__ import annotations

import sys
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence, Tuple


@dataclass
class TestResult:
    __test__ = False

    name: str
    passed: bool
    detail: str = ""


@dataclass
class NodeResult:
    __test__ = False

    node_id: str
    description: str
    results: List[TestResult] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.results)

    @property
    def n_pass(self) -> int:
        return sum(1 for r in self.results if r.passed)

    @property
    def n_fail(self) -> int:
        return sum(1 for r in self.results if not r.passed)

    def run(self, name: str, fn: Callable[[], None]) -> None:
        self.results.append(_run(name, fn))


def _ok(name: str, detail: str = "") -> TestResult:
    return TestResult(name=name, passed=True, detail=detail)


def _fail(name: str, detail: str = "") -> TestResult:
    return TestResult(name=name, passed=False, detail=detail)


def _run(name: str, fn) -> TestResult:
    """Execute fn(); catch any exception and turn it into a FAIL."""
    try:
        fn()
        return _ok(name)
    except AssertionError as e:
        return _fail(name, str(e))
    except Exception as e:
        return _fail(name, f"{type(e).__name__}: {e}")


Tree = Sequence[Tuple[str, str, Callable[[], NodeResult]]]


def assert_node(node: NodeResult) -> None:
    """pytest entry: one assertion listing every failed check of the node."""
    failed = [f"{r.name}: {r.detail}" for r in node.results if not r.passed]
    assert not failed, f"{node.node_id} failed {len(failed)} check(s):\n" + "\n".join(failed)


def _print_node(node: NodeResult) -> None:
    status = "PASS" if node.passed else "FAIL"
    W = 68
    print(f"\n{'═' * W}")
    print(f"  [{status}]  {node.node_id}  —  {node.description}")
    print(f"  {node.n_pass}/{len(node.results)} tests passed")
    print("─" * W)
    for r in node.results:
        print(f"{'  ✓' if r.passed else '  ✗'}  {r.name}")
        if not r.passed and r.detail:
            print(f"       └─ {r.detail}")


def run_tree(tree: Tree, node_filter: Optional[List[str]] = None) -> bool:
    """Run the requested nodes in order; True if all of them pass."""
    nodes = [(nid, desc, fn) for nid, desc, fn in tree if node_filter is None or nid in node_filter]
    all_passed = True
    total = passed = 0
    for nid, desc, fn in nodes:
        print(f"\n  Running {nid}: {desc} ...")
        node = fn()
        _print_node(node)
        all_passed = all_passed and node.passed
        total += len(node.results)
        passed += node.n_pass
    W = 68
    print(f"\n{'═' * W}")
    print(f"  TREE SUMMARY  —  {passed}/{total} tests passed")
    print("  STATUS: ALL NODES PASS" if all_passed else "  STATUS: FAILURES PRESENT — check output above")
    print(f"{'═' * W}\n")
    return all_passed


def main(tree: Tree) -> None:
    filter_ids = [a.upper() for a in sys.argv[1:]] if len(sys.argv) > 1 else None
    sys.exit(0 if run_tree(tree, filter_ids) else 1)
