"""Abstract workflow model: tasks, logical files, DAG validation, levels.

The abstract workflow is resource-agnostic: tasks reference logical
transformations and logical file names only.  Dependencies come from the
explicit edge list plus the implied producer→consumer file flow.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import yaml

from .errors import (
    CycleDetected,
    DanglingEdge,
    MultipleProducers,
    OrphanInput,
    ValidationError,
)

DEFAULT_RUNTIME_S = 1.0
DEFAULT_FILE_BYTES = 1_048_576


@dataclass(frozen=True)
class FileMeta:
    name: str
    size_bytes: int = DEFAULT_FILE_BYTES
    initial_location: str | None = None


@dataclass(frozen=True)
class Task:
    id: str
    transformation: str
    inputs: tuple[str, ...] = ()
    outputs: tuple[str, ...] = ()
    expected_runtime_s: float = DEFAULT_RUNTIME_S


@dataclass(frozen=True)
class AbstractWorkflow:
    tasks: tuple[Task, ...] = ()
    edges: tuple[tuple[str, str], ...] = ()
    files: dict[str, FileMeta] = field(default_factory=dict)

    def task_by_id(self, task_id: str) -> Task:
        for t in self.tasks:
            if t.id == task_id:
                return t
        raise KeyError(task_id)

    def file_meta(self, name: str) -> FileMeta:
        return self.files.get(name, FileMeta(name=name))

    def producers(self) -> dict[str, str]:
        """Map logical file name → producing task id."""
        out: dict[str, str] = {}
        for t in self.tasks:
            for f in t.outputs:
                out.setdefault(f, t.id)
        return out

    def effective_edges(self) -> set[tuple[str, str]]:
        """Explicit edges plus producer→consumer data-flow edges."""
        edges = set(self.edges)
        producers = self.producers()
        for t in self.tasks:
            for f in t.inputs:
                p = producers.get(f)
                if p is not None and p != t.id:
                    edges.add((p, t.id))
        return edges

    def workflow_outputs(self) -> list[str]:
        """Files produced by some task and consumed by none."""
        consumed = {f for t in self.tasks for f in t.inputs}
        out = []
        for t in self.tasks:
            for f in t.outputs:
                if f not in consumed and f not in out:
                    out.append(f)
        return out


def _find_cycle(adj: dict[str, list[str]]) -> list[str] | None:
    """Return one cycle as a node list, or None if the graph is acyclic."""
    WHITE, GRAY, BLACK = 0, 1, 2
    color = {n: WHITE for n in adj}
    stack: list[str] = []

    def visit(node: str) -> list[str] | None:
        color[node] = GRAY
        stack.append(node)
        for nxt in adj[node]:
            if color[nxt] == GRAY:
                return stack[stack.index(nxt):] + [nxt]
            if color[nxt] == WHITE:
                found = visit(nxt)
                if found:
                    return found
        stack.pop()
        color[node] = BLACK
        return None

    for node in sorted(adj):
        if color[node] == WHITE:
            found = visit(node)
            if found:
                return found
    return None


def validate_dag(wf: AbstractWorkflow) -> None:
    """Raise a ValidationError subclass if the workflow is malformed."""
    task_ids = [t.id for t in wf.tasks]
    seen: set[str] = set()
    for tid in task_ids:
        if tid in seen:
            raise ValidationError(f"duplicate task id {tid!r}")
        seen.add(tid)

    for u, v in wf.edges:
        if u not in seen or v not in seen:
            raise DanglingEdge(f"edge ({u!r}, {v!r}) references unknown task")

    produced: dict[str, str] = {}
    for t in wf.tasks:
        if set(t.inputs) & set(t.outputs):
            raise ValidationError(f"task {t.id!r}: inputs and outputs overlap")
        for f in t.outputs:
            if f in produced and produced[f] != t.id:
                raise MultipleProducers(
                    f"file {f!r} produced by both {produced[f]!r} and {t.id!r}"
                )
            produced[f] = t.id

    for t in wf.tasks:
        for f in t.inputs:
            if f in produced:
                continue
            meta = wf.files.get(f)
            if meta is None or meta.initial_location is None:
                raise OrphanInput(
                    f"task {t.id!r} input {f!r} has no producer and no initial location"
                )

    adj: dict[str, list[str]] = {tid: [] for tid in task_ids}
    for u, v in sorted(wf.effective_edges()):
        adj[u].append(v)
    cycle = _find_cycle(adj)
    if cycle:
        raise CycleDetected(cycle)


def topological_levels(wf: AbstractWorkflow) -> dict[str, int]:
    """Longest-path depth per task: roots at 0, level = 1 + max parent level."""
    validate_dag(wf)
    parents: dict[str, list[str]] = {t.id: [] for t in wf.tasks}
    children: dict[str, list[str]] = {t.id: [] for t in wf.tasks}
    indeg: dict[str, int] = {t.id: 0 for t in wf.tasks}
    for u, v in sorted(wf.effective_edges()):
        parents[v].append(u)
        children[u].append(v)
        indeg[v] += 1

    levels: dict[str, int] = {}
    ready = sorted(tid for tid, d in indeg.items() if d == 0)
    while ready:
        node = ready.pop(0)
        levels[node] = max((levels[p] for p in parents[node]), default=-1) + 1
        for c in children[node]:
            indeg[c] -= 1
            if indeg[c] == 0:
                ready.append(c)
        ready.sort()
    return levels


def parse_workflow(text: str) -> AbstractWorkflow:
    """Parse the workflow YAML document (tasks / edges / files sections)."""
    try:
        doc = yaml.safe_load(text) or {}
    except yaml.YAMLError as exc:
        raise ValidationError(f"workflow document is not valid YAML: {exc}") from None
    if not isinstance(doc, dict):
        raise ValidationError("workflow document must be a mapping")
    tasks = []
    for raw in doc.get("tasks") or []:
        tasks.append(Task(
            id=str(raw["id"]),
            transformation=str(raw["transformation"]),
            inputs=tuple(str(f) for f in raw.get("inputs") or []),
            outputs=tuple(str(f) for f in raw.get("outputs") or []),
            expected_runtime_s=float(raw.get("runtime", DEFAULT_RUNTIME_S)),
        ))
    edges = tuple((str(u), str(v)) for u, v in (doc.get("edges") or []))
    files = {}
    for raw in doc.get("files") or []:
        meta = FileMeta(
            name=str(raw["name"]),
            size_bytes=int(raw.get("size_bytes", DEFAULT_FILE_BYTES)),
            initial_location=raw.get("initial_location"),
        )
        files[meta.name] = meta
    return AbstractWorkflow(tasks=tuple(tasks), edges=edges, files=files)


def serialize_workflow(wf: AbstractWorkflow) -> str:
    doc = {
        "tasks": [
            {
                "id": t.id,
                "transformation": t.transformation,
                "inputs": list(t.inputs),
                "outputs": list(t.outputs),
                "runtime": t.expected_runtime_s,
            }
            for t in wf.tasks
        ],
        "edges": [[u, v] for u, v in wf.edges],
        "files": [
            {
                "name": m.name,
                "size_bytes": m.size_bytes,
                **({"initial_location": m.initial_location} if m.initial_location else {}),
            }
            for m in wf.files.values()
        ],
    }
    return yaml.safe_dump(doc, sort_keys=False, default_flow_style=False)
