"""Planner: abstract workflow + catalog + sites → executable workflow.

Containers are treated as input data dependencies: for every (container,
staging site) pair that needs a transferable image, exactly one
container-fetch job is inserted, and all dependent compute jobs hang off it.
Compute jobs may be clustered level-by-level so a single image
materialization serves many tasks.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace

import yaml

from .catalog import (
    Catalog,
    ContainerDef,
    ContainerRuntime,
    ImageScheme,
    InstallType,
    resolve_transformation,
)
from .errors import (
    CycleDetected,
    InconsistentPlacement,
    PlanError,
    RuntimeUnavailable,
    UnresolvableTransformation,
)
from .workflow import AbstractWorkflow, topological_levels, validate_dag
from .workflow import _find_cycle  # shared cycle oracle


class JobKind(enum.Enum):
    CONTAINER_FETCH = "container_fetch"
    STAGE_IN = "stage_in"
    COMPUTE = "compute"
    STAGE_OUT = "stage_out"
    CLEANUP = "cleanup"


class PlacementMode(enum.Enum):
    STAGE_COPY = "copy"
    SHARED_FS_SYMLINK = "symlink"
    BYPASS = "bypass"
    SHIFTER_LOCAL = "shifter_local"


TRANSFERABLE_PLACEMENTS = {PlacementMode.STAGE_COPY, PlacementMode.SHARED_FS_SYMLINK}


@dataclass(frozen=True)
class Site:
    name: str
    shared_fs: bool = False
    staging_site: str = ""
    worker_count: int = 1
    slots_per_worker: int = 1
    runtimes_available: frozenset[ContainerRuntime] = frozenset()
    cvmfs_like_paths: tuple[str, ...] = ()

    def __post_init__(self):
        if self.worker_count < 1 or self.slots_per_worker < 1:
            raise PlanError(f"site {self.name!r}: worker/slot counts must be >= 1")

    @property
    def staging(self) -> str:
        return self.staging_site or self.name


@dataclass(frozen=True)
class PlanConfig:
    cluster_size: int = 1
    output_site: str = "submit"
    cleanup: bool = True
    staging_inside_container: bool = True
    docker_load_dedup: bool = True
    placement_override: str | None = None  # copy | symlink | bypass


@dataclass(frozen=True)
class ComputePayload:
    task_ids: tuple[str, ...]
    container: str | None = None
    placement: PlacementMode | None = None
    backend: ContainerRuntime | None = None
    staging_site: str = ""
    level: int = 0
    runtime_s: float = 0.0
    image_bytes: int = 0
    input_files: tuple[tuple[str, int], ...] = ()
    output_files: tuple[tuple[str, int], ...] = ()


@dataclass(frozen=True)
class TransferPayload:
    transfers: tuple[tuple[str, str, int], ...]  # (src url, dst url, bytes)
    src_site: str = ""  # "" means external to the modeled topology
    dst_site: str = ""

    @property
    def total_bytes(self) -> int:
        return sum(b for _, _, b in self.transfers)


@dataclass(frozen=True)
class CleanupPayload:
    target_job: str


@dataclass(frozen=True)
class Job:
    id: str
    kind: JobKind
    site: str
    payload: ComputePayload | TransferPayload | CleanupPayload


@dataclass(frozen=True)
class ExecutableWorkflow:
    jobs: tuple[Job, ...] = ()
    edges: tuple[tuple[str, str], ...] = ()

    def job_by_id(self, job_id: str) -> Job:
        for j in self.jobs:
            if j.id == job_id:
                return j
        raise KeyError(job_id)

    def jobs_of_kind(self, kind: JobKind) -> list[Job]:
        return [j for j in self.jobs if j.kind == kind]

    def parents(self) -> dict[str, list[str]]:
        out: dict[str, list[str]] = {j.id: [] for j in self.jobs}
        for u, v in self.edges:
            out[v].append(u)
        return out

    def children(self) -> dict[str, list[str]]:
        out: dict[str, list[str]] = {j.id: [] for j in self.jobs}
        for u, v in self.edges:
            out[u].append(v)
        return out


def validate_executable(ewf: ExecutableWorkflow) -> None:
    """Check acyclicity and the one-fetch-ancestor-per-container invariant."""
    ids = {j.id for j in ewf.jobs}
    if len(ids) != len(ewf.jobs):
        raise PlanError("duplicate job ids in executable workflow")
    adj: dict[str, list[str]] = {j.id: [] for j in ewf.jobs}
    for u, v in ewf.edges:
        if u not in ids or v not in ids:
            raise PlanError(f"edge ({u!r}, {v!r}) references unknown job")
        adj[u].append(v)
    cycle = _find_cycle({k: sorted(v) for k, v in adj.items()})
    if cycle:
        raise CycleDetected(cycle)

    fetch_for: dict[str, tuple[str, str]] = {}
    for j in ewf.jobs_of_kind(JobKind.CONTAINER_FETCH):
        assert isinstance(j.payload, TransferPayload)
        fetch_for[j.id] = (j.id.split("fetch_", 1)[-1], j.site)

    parents = ewf.parents()
    for j in ewf.jobs_of_kind(JobKind.COMPUTE):
        p = j.payload
        assert isinstance(p, ComputePayload)
        if not p.task_ids:
            raise PlanError(f"compute job {j.id!r} has an empty task list")
        if p.container is None or p.placement not in TRANSFERABLE_PLACEMENTS:
            continue
        fetch_parents = [q for q in parents[j.id] if q in fetch_for]
        if len(fetch_parents) != 1:
            raise PlanError(
                f"compute job {j.id!r} must depend on exactly one container-fetch "
                f"job, found {len(fetch_parents)}"
            )


def decide_placement(c: ContainerDef, s: Site, override: str | None = None) -> PlacementMode:
    """Pick how a container image reaches the workers of a site."""
    if c.runtime not in s.runtimes_available:
        raise RuntimeUnavailable(
            f"runtime {c.runtime.value!r} not available at site {s.name!r}"
        )
    if c.runtime is ContainerRuntime.SHIFTER:
        return PlacementMode.SHIFTER_LOCAL
    if override == "copy":
        return PlacementMode.STAGE_COPY
    if override == "symlink":
        return PlacementMode.SHARED_FS_SYMLINK
    if override == "bypass":
        if not c.site_local:
            raise InconsistentPlacement(
                f"container {c.name!r}: bypass requires site_local"
            )
        return PlacementMode.BYPASS
    if c.site_local and c.image.scheme is ImageScheme.FILE and any(
        c.image.locator.startswith(p.rstrip("/") + "/") or c.image.locator == p
        for p in s.cvmfs_like_paths
    ):
        return PlacementMode.BYPASS
    if s.shared_fs:
        return PlacementMode.SHARED_FS_SYMLINK
    return PlacementMode.STAGE_COPY


def cluster_jobs(ewf: ExecutableWorkflow, k: int) -> ExecutableWorkflow:
    """Merge same-level, same-site, same-container compute jobs into clusters of <= k.

    k = 1 is the identity.  Tasks inside a cluster keep topological order;
    inter-cluster edges are the union of member edges with self-loops removed.
    """
    if k < 1:
        raise PlanError("cluster size must be >= 1")
    if k == 1:
        return ewf

    groups: dict[tuple[int, str, str | None], list[Job]] = {}
    for j in ewf.jobs_of_kind(JobKind.COMPUTE):
        p = j.payload
        assert isinstance(p, ComputePayload)
        groups.setdefault((p.level, j.site, p.container), []).append(j)

    remap: dict[str, str] = {}
    new_jobs: list[Job] = []
    for key in sorted(groups, key=lambda g: (g[0], g[1], g[2] or "")):
        members = sorted(groups[key], key=lambda j: j.id)
        n_clusters = math.ceil(len(members) / k)
        for i in range(n_clusters):
            chunk = members[i * k:(i + 1) * k]
            if len(chunk) == 1:
                new_jobs.append(chunk[0])
                remap[chunk[0].id] = chunk[0].id
                continue
            payloads = [m.payload for m in chunk]
            produced = {f for p in payloads for f, _ in p.output_files}
            inputs: list[tuple[str, int]] = []
            outputs: list[tuple[str, int]] = []
            for p in payloads:
                for f in p.input_files:
                    if f[0] not in produced and f not in inputs:
                        inputs.append(f)
                for f in p.output_files:
                    if f not in outputs:
                        outputs.append(f)
            merged = replace(
                payloads[0],
                task_ids=tuple(t for p in payloads for t in p.task_ids),
                runtime_s=sum(p.runtime_s for p in payloads),
                input_files=tuple(inputs),
                output_files=tuple(outputs),
            )
            level, site, container = key
            cid = f"cluster_l{level}_{site}_{container or 'plain'}_{i:03d}"
            new_jobs.append(Job(id=cid, kind=JobKind.COMPUTE, site=site, payload=merged))
            for m in chunk:
                remap[m.id] = cid

    for j in ewf.jobs:
        if j.id not in remap:
            remap[j.id] = j.id
            new_jobs.append(j)

    edges: list[tuple[str, str]] = []
    seen: set[tuple[str, str]] = set()
    for u, v in ewf.edges:
        e = (remap[u], remap[v])
        if e[0] != e[1] and e not in seen:
            seen.add(e)
            edges.append(e)
    return ExecutableWorkflow(jobs=tuple(new_jobs), edges=tuple(edges))


def insert_container_fetch_jobs(
    ewf: ExecutableWorkflow, cat: Catalog, sites: list[Site]
) -> ExecutableWorkflow:
    """Add exactly one fetch job per (container, staging site) pair in use."""
    pairs: dict[tuple[str, str], list[str]] = {}
    for j in ewf.jobs_of_kind(JobKind.COMPUTE):
        p = j.payload
        assert isinstance(p, ComputePayload)
        if p.container is None or p.placement not in TRANSFERABLE_PLACEMENTS:
            continue
        pairs.setdefault((p.container, p.staging_site), []).append(j.id)

    new_jobs = list(ewf.jobs)
    new_edges = list(ewf.edges)
    for (cname, staging), dependents in sorted(pairs.items()):
        cdef = cat.containers[cname]
        dst = f"file:///staging/{staging}/containers/{cname}.img"
        fetch = Job(
            id=f"fetch_{cname}_{staging}",
            kind=JobKind.CONTAINER_FETCH,
            site=staging,
            payload=TransferPayload(
                transfers=((cdef.image.url(), dst, cdef.image_size_bytes),),
                src_site="",
                dst_site=staging,
            ),
        )
        new_jobs.append(fetch)
        for dep in dependents:
            new_edges.append((fetch.id, dep))
    return ExecutableWorkflow(jobs=tuple(new_jobs), edges=tuple(new_edges))


def _bind_sites(
    wf: AbstractWorkflow, cat: Catalog, sites: list[Site], override: str | None
) -> dict[str, tuple[Site, str | None, PlacementMode | None, ContainerRuntime | None]]:
    """Round-robin tasks over sites able to run their transformation."""
    binding: dict[str, tuple[Site, str | None, PlacementMode | None, ContainerRuntime | None]] = {}
    rr = 0
    for task in wf.tasks:
        eligible: list[tuple[Site, str | None, PlacementMode | None, ContainerRuntime | None]] = []
        runtime_problem: Exception | None = None
        for s in sites:
            try:
                entry, cdef = resolve_transformation(cat, task.transformation, s.name)
            except Exception:
                continue
            if cdef is None:
                eligible.append((s, None, None, None))
                continue
            try:
                placement = decide_placement(cdef, s, override)
            except (RuntimeUnavailable, InconsistentPlacement) as exc:
                runtime_problem = exc
                continue
            eligible.append((s, cdef.name, placement, cdef.runtime))
        if not eligible:
            if runtime_problem is not None:
                raise RuntimeUnavailable(
                    f"task {task.id!r}: {runtime_problem}"
                )
            raise UnresolvableTransformation(
                f"task {task.id!r}: transformation {task.transformation!r} "
                f"not resolvable at any site"
            )
        binding[task.id] = eligible[rr % len(eligible)]
        rr += 1
    return binding


def plan(
    wf: AbstractWorkflow, cat: Catalog, sites: list[Site], cfg: PlanConfig
) -> ExecutableWorkflow:
    """Produce the executable workflow: compute, fetch, stage and cleanup jobs."""
    validate_dag(wf)
    if not wf.tasks:
        return ExecutableWorkflow()
    levels = topological_levels(wf)
    binding = _bind_sites(wf, cat, sites, cfg.placement_override)
    producers = wf.producers()

    jobs: list[Job] = []
    edges: list[tuple[str, str]] = []
    compute_id = {t.id: f"compute_{t.id}" for t in wf.tasks}
    for task in wf.tasks:
        site, cname, placement, backend = binding[task.id]
        cdef = cat.containers[cname] if cname else None
        extra_inputs: list[tuple[str, int]] = []
        entry, _ = resolve_transformation(cat, task.transformation, site.name)
        if entry.install_type is InstallType.STAGEABLE and entry.pfn:
            # stageable executables travel with the job; size unknown → 0
            extra_inputs.append((entry.pfn, 0))
        payload = ComputePayload(
            task_ids=(task.id,),
            container=cname,
            placement=placement,
            backend=backend,
            staging_site=site.staging,
            level=levels[task.id],
            runtime_s=task.expected_runtime_s,
            image_bytes=cdef.image_size_bytes if cdef else 0,
            input_files=tuple(
                [(f, wf.file_meta(f).size_bytes) for f in task.inputs] + extra_inputs
            ),
            output_files=tuple((f, wf.file_meta(f).size_bytes) for f in task.outputs),
        )
        jobs.append(Job(id=compute_id[task.id], kind=JobKind.COMPUTE,
                        site=site.name, payload=payload))
    for u, v in sorted(wf.effective_edges()):
        edges.append((compute_id[u], compute_id[v]))

    ewf = ExecutableWorkflow(jobs=tuple(jobs), edges=tuple(edges))
    ewf = cluster_jobs(ewf, cfg.cluster_size)
    ewf = insert_container_fetch_jobs(ewf, cat, sites)

    jobs = list(ewf.jobs)
    edges = list(ewf.edges)

    # stage-in: workflow inputs land on each staging site used by consumers
    stagein_needs: dict[str, dict[str, int]] = {}
    stagein_consumers: dict[str, list[str]] = {}
    for j in ewf.jobs_of_kind(JobKind.COMPUTE):
        p = j.payload
        assert isinstance(p, ComputePayload)
        for fname, size in p.input_files:
            if fname in producers:
                continue
            meta = wf.files.get(fname)
            if meta is None or meta.initial_location is None:
                continue
            stagein_needs.setdefault(p.staging_site, {})[fname] = size
            stagein_consumers.setdefault(p.staging_site, [])
            if j.id not in stagein_consumers[p.staging_site]:
                stagein_consumers[p.staging_site].append(j.id)
    for staging in sorted(stagein_needs):
        transfers = tuple(
            (wf.files[f].initial_location or "", f"file:///staging/{staging}/{f}", size)
            for f, size in sorted(stagein_needs[staging].items())
        )
        sj = Job(
            id=f"stage_in_{staging}",
            kind=JobKind.STAGE_IN,
            site=staging,
            payload=TransferPayload(transfers=transfers, src_site="", dst_site=staging),
        )
        jobs.append(sj)
        for cid in stagein_consumers[staging]:
            edges.append((sj.id, cid))

    # stage-out: ship workflow outputs from their staging site to the output site
    wf_outputs = set(wf.workflow_outputs())
    stageout_files: dict[str, dict[str, int]] = {}
    stageout_producers: dict[str, list[str]] = {}
    for j in ewf.jobs_of_kind(JobKind.COMPUTE):
        p = j.payload
        assert isinstance(p, ComputePayload)
        outs = [(f, s) for f, s in p.output_files if f in wf_outputs]
        if not outs:
            continue
        for f, s in outs:
            stageout_files.setdefault(p.staging_site, {})[f] = s
        stageout_producers.setdefault(p.staging_site, []).append(j.id)
    stageout_ids: dict[str, str] = {}
    for staging in sorted(stageout_files):
        transfers = tuple(
            (f"file:///staging/{staging}/{f}",
             f"file:///output/{cfg.output_site}/{f}", size)
            for f, size in sorted(stageout_files[staging].items())
        )
        so = Job(
            id=f"stage_out_{staging}",
            kind=JobKind.STAGE_OUT,
            site=cfg.output_site,
            payload=TransferPayload(
                transfers=transfers, src_site=staging, dst_site=cfg.output_site
            ),
        )
        jobs.append(so)
        stageout_ids[staging] = so.id
        for pid in stageout_producers[staging]:
            edges.append((pid, so.id))

    # cleanup: one job per compute-job directory, after its last consumer
    if cfg.cleanup:
        children: dict[str, list[str]] = {}
        for u, v in edges:
            children.setdefault(u, []).append(v)
        for j in ewf.jobs_of_kind(JobKind.COMPUTE):
            cj = Job(
                id=f"cleanup_{j.id}",
                kind=JobKind.CLEANUP,
                site=j.site,
                payload=CleanupPayload(target_job=j.id),
            )
            jobs.append(cj)
            edges.append((j.id, cj.id))
            for consumer in children.get(j.id, []):
                edges.append((consumer, cj.id))

    result = ExecutableWorkflow(jobs=tuple(jobs), edges=tuple(edges))
    validate_executable(result)
    return result


# --- serialization ---------------------------------------------------------

def serialize_executable(ewf: ExecutableWorkflow) -> str:
    def payload_doc(j: Job) -> dict:
        p = j.payload
        if isinstance(p, ComputePayload):
            return {
                "task_ids": list(p.task_ids),
                "container": p.container,
                "placement": p.placement.value if p.placement else None,
                "backend": p.backend.value if p.backend else None,
                "staging_site": p.staging_site,
                "level": p.level,
                "runtime_s": p.runtime_s,
                "image_bytes": p.image_bytes,
                "input_files": [[f, s] for f, s in p.input_files],
                "output_files": [[f, s] for f, s in p.output_files],
            }
        if isinstance(p, TransferPayload):
            return {
                "transfers": [[a, b, n] for a, b, n in p.transfers],
                "src_site": p.src_site,
                "dst_site": p.dst_site,
            }
        return {"target_job": p.target_job}

    doc = {
        "jobs": [
            {"id": j.id, "kind": j.kind.value, "site": j.site, "payload": payload_doc(j)}
            for j in ewf.jobs
        ],
        "edges": [[u, v] for u, v in ewf.edges],
    }
    return yaml.safe_dump(doc, sort_keys=False, default_flow_style=False)


def parse_executable(text: str) -> ExecutableWorkflow:
    doc = yaml.safe_load(text) or {}
    jobs: list[Job] = []
    for raw in doc.get("jobs") or []:
        kind = JobKind(raw["kind"])
        praw = raw.get("payload") or {}
        payload: ComputePayload | TransferPayload | CleanupPayload
        if kind is JobKind.COMPUTE:
            payload = ComputePayload(
                task_ids=tuple(praw.get("task_ids") or []),
                container=praw.get("container"),
                placement=PlacementMode(praw["placement"]) if praw.get("placement") else None,
                backend=ContainerRuntime(praw["backend"]) if praw.get("backend") else None,
                staging_site=praw.get("staging_site", ""),
                level=int(praw.get("level", 0)),
                runtime_s=float(praw.get("runtime_s", 0.0)),
                image_bytes=int(praw.get("image_bytes", 0)),
                input_files=tuple((f, int(s)) for f, s in praw.get("input_files") or []),
                output_files=tuple((f, int(s)) for f, s in praw.get("output_files") or []),
            )
        elif kind is JobKind.CLEANUP:
            payload = CleanupPayload(target_job=praw.get("target_job", ""))
        else:
            payload = TransferPayload(
                transfers=tuple((a, b, int(n)) for a, b, n in praw.get("transfers") or []),
                src_site=praw.get("src_site", ""),
                dst_site=praw.get("dst_site", ""),
            )
        jobs.append(Job(id=str(raw["id"]), kind=kind, site=str(raw["site"]), payload=payload))
    edges = tuple((str(u), str(v)) for u, v in (doc.get("edges") or []))
    return ExecutableWorkflow(jobs=tuple(jobs), edges=edges)


def parse_sites(text: str) -> list[Site]:
    doc = yaml.safe_load(text) or []
    if isinstance(doc, dict):
        doc = doc.get("sites") or []
    sites = []
    for raw in doc:
        sites.append(Site(
            name=str(raw["name"]),
            shared_fs=bool(raw.get("shared_fs", False)),
            staging_site=str(raw.get("staging_site", "")),
            worker_count=int(raw.get("worker_count", 1)),
            slots_per_worker=int(raw.get("slots_per_worker", 1)),
            runtimes_available=frozenset(
                ContainerRuntime(r) for r in raw.get("runtimes") or []
            ),
            cvmfs_like_paths=tuple(raw.get("cvmfs_like_paths") or []),
        ))
    return sites
