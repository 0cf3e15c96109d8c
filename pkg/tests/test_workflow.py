"""Abstract workflow validation and level computation."""

from __future__ import annotations

import random

import pytest
from hypothesis import given, settings, strategies as st

from contflow.errors import (
    CycleDetected,
    DanglingEdge,
    MultipleProducers,
    OrphanInput,
)
from contflow.workflow import (
    AbstractWorkflow,
    FileMeta,
    Task,
    parse_workflow,
    serialize_workflow,
    topological_levels,
    validate_dag,
)

from conftest import make_chain, make_diamond


def dfs_acyclic_oracle(n_tasks: int, edges: set[tuple[str, str]]) -> bool:
    """Independent acyclicity check by exhaustive DFS from every node."""
    adj: dict[str, list[str]] = {}
    for u, v in edges:
        adj.setdefault(u, []).append(v)

    def reaches_itself(start: str) -> bool:
        stack, seen = list(adj.get(start, [])), set()
        while stack:
            n = stack.pop()
            if n == start:
                return True
            if n in seen:
                continue
            seen.add(n)
            stack.extend(adj.get(n, []))
        return False

    return not any(reaches_itself(f"t{i}") for i in range(n_tasks))


def brute_force_longest_path(tasks: list[str], edges: set[tuple[str, str]]) -> dict[str, int]:
    """Longest path to each node by repeated relaxation (no topological sort)."""
    dist = {t: 0 for t in tasks}
    for _ in range(len(tasks)):
        for u, v in edges:
            dist[v] = max(dist[v], dist[u] + 1)
    return dist


class TestValidateDag:
    def test_two_task_chain_ok(self):
        validate_dag(make_chain(2))

    def test_cycle_detected(self):
        wf = AbstractWorkflow(
            tasks=(Task("A", "ns::x:1"), Task("B", "ns::x:1")),
            edges=(("A", "B"), ("B", "A")),
        )
        with pytest.raises(CycleDetected) as exc:
            validate_dag(wf)
        assert "A" in exc.value.cycle and "B" in exc.value.cycle

    def test_file_flow_cycle_detected(self):
        wf = AbstractWorkflow(tasks=(
            Task("A", "ns::x:1", inputs=("fb",), outputs=("fa",)),
            Task("B", "ns::x:1", inputs=("fa",), outputs=("fb",)),
        ))
        with pytest.raises(CycleDetected):
            validate_dag(wf)

    def test_dangling_edge(self):
        wf = AbstractWorkflow(tasks=(Task("A", "ns::x:1"),), edges=(("A", "Z"),))
        with pytest.raises(DanglingEdge):
            validate_dag(wf)

    def test_multiple_producers(self):
        wf = AbstractWorkflow(tasks=(
            Task("A", "ns::x:1", outputs=("f",)),
            Task("B", "ns::x:1", outputs=("f",)),
        ))
        with pytest.raises(MultipleProducers):
            validate_dag(wf)

    def test_orphan_input(self):
        wf = AbstractWorkflow(tasks=(Task("A", "ns::x:1", inputs=("mystery",)),))
        with pytest.raises(OrphanInput):
            validate_dag(wf)

    def test_input_with_location_ok(self):
        wf = AbstractWorkflow(
            tasks=(Task("A", "ns::x:1", inputs=("in",)),),
            files={"in": FileMeta("in", 10, initial_location="http://x/in")},
        )
        validate_dag(wf)

    def test_63_task_fixture_valid(self):
        # 63 parallel compute tasks fanning out from one staged input; the
        # fan-in happens at stage-out.  Checked against the DFS oracle.
        from contflow.scenarios import demo_workflow
        wf = demo_workflow()
        assert len(wf.tasks) == 63
        validate_dag(wf)
        assert dfs_acyclic_oracle(63, wf.effective_edges())

    def test_idempotent(self):
        wf = make_diamond()
        validate_dag(wf)
        validate_dag(wf)  # second call must not raise or mutate anything
        assert wf == make_diamond()


class TestTopologicalLevels:
    def test_chain(self):
        levels = topological_levels(make_chain(3))
        assert levels == {"t0": 0, "t1": 1, "t2": 2}

    def test_diamond(self):
        levels = topological_levels(make_diamond())
        assert levels == {"A": 0, "B": 1, "C": 1, "D": 2}

    def test_random_dag_matches_brute_force(self):
        rng = random.Random(7)
        ids = [f"t{i}" for i in range(50)]
        edges = set()
        for i in range(50):
            for j in range(i + 1, 50):
                if rng.random() < 0.05:
                    edges.add((f"t{i}", f"t{j}"))
        wf = AbstractWorkflow(
            tasks=tuple(Task(t, "ns::x:1") for t in ids),
            edges=tuple(sorted(edges)),
        )
        assert topological_levels(wf) == brute_force_longest_path(ids, edges)

    @settings(max_examples=60, deadline=None)
    @given(st.integers(2, 20), st.integers(0, 10**6))
    def test_every_edge_increases_level(self, n, seed):
        rng = random.Random(seed)
        edges = {
            (f"t{i}", f"t{j}")
            for i in range(n) for j in range(i + 1, n)
            if rng.random() < 0.2
        }
        wf = AbstractWorkflow(
            tasks=tuple(Task(f"t{i}", "ns::x:1") for i in range(n)),
            edges=tuple(sorted(edges)),
        )
        levels = topological_levels(wf)
        assert all(levels[u] < levels[v] for u, v in edges)


class TestSerialization:
    def test_round_trip(self):
        wf = make_chain(4)
        assert parse_workflow(serialize_workflow(wf)) == wf

    def test_defaults_applied(self):
        wf = parse_workflow("""
tasks:
  - {id: a, transformation: "ns::x:1"}
files:
  - {name: f1}
""")
        assert wf.tasks[0].expected_runtime_s == 1.0
        assert wf.files["f1"].size_bytes == 1_048_576
