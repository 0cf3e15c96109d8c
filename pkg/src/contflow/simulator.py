"""Discrete-event simulation of executable-workflow runs.

Topology: one submit node (also the data gateway to the outside world), an
optional shared-storage node, and worker nodes.  Network transfers are fluid
flows; with fair sharing on, link bandwidth is split max-min fair across
concurrent flows, where every flow is constrained by its node-pair link, the
sender's egress port and the receiver's ingress port.  Docker image loads
additionally occupy a per-node FIFO disk server (the untar), which inflates
the service time of concurrent I/O requests on that node.

A site name maps onto topology nodes whose name equals the site or starts
with ``<site>/``; workers for a compute site are conventionally named
``<site>/w1``, ``<site>/w2``, ...
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field
from pathlib import Path

from .catalog import ContainerRuntime
from .errors import DestinationUnwritable, MissingSize, SimError, UnmappedSite
from .planner import (
    CleanupPayload,
    ComputePayload,
    ExecutableWorkflow,
    Job,
    JobKind,
    PlacementMode,
    TransferPayload,
)

_EPS = 1e-9


@dataclass(frozen=True)
class NodeSpec:
    name: str
    slots: int = 1
    disk_untar_rate: float = 1e8  # bytes/s the disk sustains while importing images
    disk_service_base_ms: float = 10.0

    def __post_init__(self):
        if self.slots < 1:
            raise SimError(f"node {self.name!r}: slots must be >= 1")


@dataclass(frozen=True)
class Topology:
    submit: NodeSpec
    nfs: NodeSpec | None
    workers: tuple[NodeSpec, ...]
    links: dict[tuple[str, str], float]

    def nodes(self) -> list[NodeSpec]:
        out = [self.submit]
        if self.nfs is not None:
            out.append(self.nfs)
        out.extend(self.workers)
        return out

    def node_names(self) -> list[str]:
        return [n.name for n in self.nodes()]

    def node(self, name: str) -> NodeSpec:
        for n in self.nodes():
            if n.name == name:
                return n
        raise UnmappedSite(f"no topology node named {name!r}")

    def nodes_for_site(self, site: str) -> list[NodeSpec]:
        out = [
            n for n in self.nodes()
            if n.name == site or n.name.startswith(site + "/")
        ]
        if not out:
            raise UnmappedSite(f"site {site!r} maps to no topology node")
        return out

    def validate(self) -> None:
        names = set(self.node_names())
        for (a, b), bw in self.links.items():
            if a not in names or b not in names:
                raise SimError(f"link ({a!r}, {b!r}) references unknown node")
            if bw <= 0:
                raise SimError(f"link ({a!r}, {b!r}) has non-positive bandwidth")


@dataclass(frozen=True)
class SimConfig:
    seed: int = 0
    placement_override: PlacementMode | None = None
    docker_load_dedup: bool = True
    fair_share: bool = True


@dataclass
class FlowRecord:
    src: str
    dst: str
    bytes: int
    kind: str
    started: float
    ended: float


@dataclass
class SimResult:
    makespan_s: float
    per_node_egress: dict[str, list[float]]  # bytes/s per 1-second bucket
    per_node_io_wait_ms: dict[str, list[float]]
    transfer_count_by_kind: dict[str, int]
    transfer_bytes_by_kind: dict[str, float]
    job_timeline: list[tuple[str, float, float, str]]
    egress_totals: dict[str, float]
    ingress_totals: dict[str, float]
    flow_ledger: list[FlowRecord]

    @property
    def total_transfer_bytes(self) -> float:
        return sum(f.bytes for f in self.flow_ledger)

    def container_bytes_from(self, node: str) -> float:
        return sum(
            f.bytes for f in self.flow_ledger if f.kind == "container" and f.src == node
        )

    def saturation_window_s(self, node: str, cap: float, frac: float = 0.95) -> int:
        """Longest contiguous run of 1-second buckets with egress >= frac * cap."""
        best = run = 0
        for v in self.per_node_egress.get(node, []):
            if v >= frac * cap:
                run += 1
                best = max(best, run)
            else:
                run = 0
        return best

    def mean_io_wait_ms(self, nodes: list[str] | None = None) -> float:
        samples = []
        for node, series in sorted(self.per_node_io_wait_ms.items()):
            if nodes is not None and node not in nodes:
                continue
            samples.extend(series)
        return sum(samples) / len(samples) if samples else 0.0


class _Flow:
    __slots__ = ("fid", "src", "dst", "total", "remaining", "kind", "done_cb")

    def __init__(self, fid, src, dst, total, kind, done_cb):
        self.fid = fid
        self.src = src
        self.dst = dst
        self.total = total
        self.remaining = float(total)
        self.kind = kind
        self.done_cb = done_cb


class _Engine:
    def __init__(self, ewf: ExecutableWorkflow, topo: Topology, cfg: SimConfig):
        topo.validate()
        self.ewf = ewf
        self.topo = topo
        self.cfg = cfg
        self.now = 0.0
        self.flows: list[_Flow] = []
        self.timers: list[tuple[float, int, object]] = []
        self._seq = 0
        self._fid = 0

        self.node_by_name = {n.name: n for n in topo.nodes()}
        self.running_on: dict[str, int] = {n.name: 0 for n in topo.nodes()}
        self.disk_free_at: dict[str, float] = {n.name: 0.0 for n in topo.nodes()}
        self.untar_records: dict[str, list[tuple[float, float, float, float]]] = {
            n.name: [] for n in topo.nodes()
        }
        self.untar_done_at: dict[tuple[str, str], float] = {}

        self.parents = ewf.parents()
        self.children = ewf.children()
        self.state = {j.id: "pending" for j in ewf.jobs}
        self.timeline: dict[str, tuple[float, float, str]] = {}
        self.job_node: dict[str, str] = {}

        self.egress_buckets: dict[str, list[float]] = {n.name: [] for n in topo.nodes()}
        self.egress_totals: dict[str, float] = {n.name: 0.0 for n in topo.nodes()}
        self.ingress_totals: dict[str, float] = {n.name: 0.0 for n in topo.nodes()}
        self.count_by_kind: dict[str, int] = {}
        self.bytes_by_kind: dict[str, float] = {}
        self.ledger: list[FlowRecord] = []
        self.flow_started: dict[int, float] = {}

        # max link speed seen at each port bounds that port's capacity
        self.egress_cap: dict[str, float] = {}
        self.ingress_cap: dict[str, float] = {}
        for (a, b), bw in topo.links.items():
            self.egress_cap[a] = max(self.egress_cap.get(a, 0.0), bw)
            self.ingress_cap[b] = max(self.ingress_cap.get(b, 0.0), bw)

    # -- primitives ---------------------------------------------------------

    def at(self, t: float, cb) -> None:
        self._seq += 1
        heapq.heappush(self.timers, (max(t, self.now), self._seq, cb))

    def start_flow(self, src: str, dst: str, nbytes: float, kind: str, done_cb) -> None:
        if src == dst or nbytes <= 0:
            self.at(self.now, done_cb)
            return
        if (src, dst) not in self.topo.links:
            raise SimError(f"no link from {src!r} to {dst!r}")
        self._fid += 1
        flow = _Flow(self._fid, src, dst, nbytes, kind, done_cb)
        self.flows.append(flow)
        self.flow_started[flow.fid] = self.now

    def _rates(self) -> dict[int, float]:
        if not self.flows:
            return {}
        if not self.cfg.fair_share:
            out = {}
            for f in self.flows:
                out[f.fid] = min(
                    self.topo.links[(f.src, f.dst)],
                    self.egress_cap[f.src],
                    self.ingress_cap[f.dst],
                )
            return out
        # max-min water filling over pair links and node ports
        groups: dict[tuple, tuple[float, list[_Flow]]] = {}
        for f in self.flows:
            for key, cap in (
                (("p", f.src, f.dst), self.topo.links[(f.src, f.dst)]),
                (("e", f.src), self.egress_cap[f.src]),
                (("i", f.dst), self.ingress_cap[f.dst]),
            ):
                if key in groups:
                    groups[key][1].append(f)
                else:
                    groups[key] = (cap, [f])
        alloc: dict[int, float] = {}
        remaining = {k: cap for k, (cap, _) in groups.items()}
        unfrozen = {f.fid for f in self.flows}
        while unfrozen:
            best_key = None
            best_fair = math.inf
            for key, (_, members) in groups.items():
                n = sum(1 for m in members if m.fid in unfrozen)
                if n == 0:
                    continue
                fair = remaining[key] / n
                if fair < best_fair - _EPS:
                    best_fair = fair
                    best_key = key
            assert best_key is not None
            for m in groups[best_key][1]:
                if m.fid not in unfrozen:
                    continue
                alloc[m.fid] = best_fair
                unfrozen.discard(m.fid)
                for key, (_, members) in groups.items():
                    if key != best_key and any(x.fid == m.fid for x in members):
                        remaining[key] -= best_fair
            remaining[best_key] = 0.0
        return alloc

    def _account(self, src: str, t0: float, t1: float, rate: float) -> None:
        buckets = self.egress_buckets[src]
        t = t0
        while t < t1 - _EPS:
            idx = int(t)
            while len(buckets) <= idx:
                buckets.append(0.0)
            span = min(t1, idx + 1.0) - t
            buckets[idx] += rate * span
            t = idx + 1.0

    # -- disk model ---------------------------------------------------------

    def enqueue_untar(self, node: str, nbytes: float, done_cb) -> float:
        spec = self.node_by_name[node]
        start = max(self.now, self.disk_free_at[node])
        end = start + nbytes / spec.disk_untar_rate
        self.disk_free_at[node] = end
        self.untar_records[node].append((self.now, start, end, nbytes))
        self.at(end, done_cb)
        return end

    # -- job lifecycle ------------------------------------------------------

    def _pick_worker(self, site: str) -> str | None:
        candidates = self.topo.nodes_for_site(site)
        best = None
        for n in sorted(candidates, key=lambda n: n.name):
            if self.running_on[n.name] < n.slots:
                if best is None or self.running_on[n.name] < self.running_on[best]:
                    best = n.name
        return best

    def _staging_node(self, site: str) -> str:
        # storage nodes are exact-name matches; never a /wN worker
        for n in self.topo.nodes_for_site(site):
            if n.name == site:
                return n.name
        return self.topo.nodes_for_site(site)[0].name

    def dispatch(self) -> None:
        progress = True
        while progress:
            progress = False
            ready = sorted(
                j.id for j in self.ewf.jobs
                if self.state[j.id] == "pending"
                and all(self.state[p] == "done" for p in self.parents[j.id])
            )
            for jid in ready:
                job = self.ewf.job_by_id(jid)
                if self.start_job(job):
                    progress = True

    def start_job(self, job: Job) -> bool:
        if job.kind is JobKind.COMPUTE:
            node = self._pick_worker(job.site)
            if node is None:
                return False
            self.state[job.id] = "running"
            self.running_on[node] += 1
            self.job_node[job.id] = node
            self.timeline[job.id] = (self.now, -1.0, node)
            self._compute_image_phase(job, node)
            return True

        self.state[job.id] = "running"
        if job.kind is JobKind.CLEANUP:
            self.job_node[job.id] = ""
            self.timeline[job.id] = (self.now, -1.0, "")
            self.at(self.now, lambda j=job: self.finish_job(j))
            return True

        payload = job.payload
        assert isinstance(payload, TransferPayload)
        kind = {
            JobKind.CONTAINER_FETCH: "container",
            JobKind.STAGE_IN: "stage_in",
            JobKind.STAGE_OUT: "stage_out",
        }[job.kind]
        src = (
            self._staging_node(payload.src_site)
            if payload.src_site else self.topo.submit.name
        )
        dst = self._staging_node(payload.dst_site) if payload.dst_site else src
        self.job_node[job.id] = dst
        self.timeline[job.id] = (self.now, -1.0, dst)
        self.start_flow(
            src, dst, payload.total_bytes, kind, lambda j=job: self.finish_job(j)
        )
        return True

    def _compute_image_phase(self, job: Job, node: str) -> None:
        p = job.payload
        assert isinstance(p, ComputePayload)
        if p.container is not None and p.placement in (
            PlacementMode.STAGE_COPY, PlacementMode.SHARED_FS_SYMLINK
        ) and p.image_bytes <= 0:
            raise MissingSize(
                f"job {job.id!r}: container {p.container!r} has no image size"
            )
        after = lambda: self._compute_untar_phase(job, node)
        if p.placement is PlacementMode.STAGE_COPY and p.image_bytes > 0:
            staging = self._staging_node(p.staging_site)
            self.start_flow(staging, node, p.image_bytes, "container", after)
        else:
            # symlink / bypass / local registry / no container: no copy to the worker
            self.at(self.now, after)

    def _compute_untar_phase(self, job: Job, node: str) -> None:
        p = job.payload
        assert isinstance(p, ComputePayload)
        after = lambda: self._compute_stagein_phase(job, node)
        needs_untar = (
            p.backend is ContainerRuntime.DOCKER
            and p.container is not None
            and p.image_bytes > 0
            and p.placement is not PlacementMode.BYPASS
        )
        if not needs_untar:
            self.at(self.now, after)
            return
        key = (p.container, node)
        if self.cfg.docker_load_dedup and key in self.untar_done_at:
            self.at(max(self.now, self.untar_done_at[key]), after)
            return
        end = self.enqueue_untar(node, p.image_bytes, after)
        self.untar_done_at[key] = end

    def _compute_stagein_phase(self, job: Job, node: str) -> None:
        p = job.payload
        assert isinstance(p, ComputePayload)
        nbytes = sum(s for _, s in p.input_files)
        staging = self._staging_node(p.staging_site)
        self.start_flow(
            staging, node, nbytes, "data_in",
            lambda: self.at(self.now + p.runtime_s,
                            lambda: self._compute_stageout_phase(job, node)),
        )

    def _compute_stageout_phase(self, job: Job, node: str) -> None:
        p = job.payload
        assert isinstance(p, ComputePayload)
        nbytes = sum(s for _, s in p.output_files)
        staging = self._staging_node(p.staging_site)
        self.start_flow(
            node, staging, nbytes, "data_out", lambda: self.finish_job(job)
        )

    def finish_job(self, job: Job) -> None:
        self.state[job.id] = "done"
        start, _, node = self.timeline[job.id]
        self.timeline[job.id] = (start, self.now, node)
        if job.kind is JobKind.COMPUTE:
            self.running_on[node] -= 1
        self.dispatch()

    # -- main loop ----------------------------------------------------------

    def run(self) -> SimResult:
        self.dispatch()
        while self.flows or self.timers:
            rates = self._rates()
            t_next = math.inf
            if self.timers:
                t_next = self.timers[0][0]
            for f in self.flows:
                r = rates.get(f.fid, 0.0)
                if r > 0:
                    t_next = min(t_next, self.now + f.remaining / r)
            if math.isinf(t_next):
                stuck = [j for j, s in self.state.items() if s != "done"]
                raise SimError(f"simulation stalled; unfinished jobs: {stuck[:5]}")
            dt = max(t_next - self.now, 0.0)
            if dt > 0:
                for f in self.flows:
                    r = rates.get(f.fid, 0.0)
                    if r > 0:
                        f.remaining -= r * dt
                        self._account(f.src, self.now, t_next, r)
            self.now = t_next

            finished = [f for f in self.flows if f.remaining <= 1e-3]
            for f in finished:
                self.flows.remove(f)
                self.egress_totals[f.src] += f.total
                self.ingress_totals[f.dst] += f.total
                self.count_by_kind[f.kind] = self.count_by_kind.get(f.kind, 0) + 1
                self.bytes_by_kind[f.kind] = self.bytes_by_kind.get(f.kind, 0.0) + f.total
                self.ledger.append(FlowRecord(
                    f.src, f.dst, f.total, f.kind,
                    self.flow_started[f.fid], self.now,
                ))
            for f in finished:
                f.done_cb()
            while self.timers and self.timers[0][0] <= self.now + _EPS:
                _, _, cb = heapq.heappop(self.timers)
                cb()

        unfinished = [j for j, s in self.state.items() if s != "done"]
        if unfinished:
            raise SimError(f"jobs never became runnable: {unfinished[:5]}")

        makespan = max((end for _, end, _ in self.timeline.values()), default=0.0)
        n_buckets = int(math.ceil(makespan)) if makespan > 0 else 0
        egress = {}
        for name, buckets in self.egress_buckets.items():
            series = list(buckets) + [0.0] * (n_buckets - len(buckets))
            egress[name] = series[:n_buckets] if n_buckets else []
        io_wait = {
            name: self._io_wait_series(name, n_buckets)
            for name in self.node_by_name
        }
        return SimResult(
            makespan_s=makespan,
            per_node_egress=egress,
            per_node_io_wait_ms=io_wait,
            transfer_count_by_kind=dict(sorted(self.count_by_kind.items())),
            transfer_bytes_by_kind=dict(sorted(self.bytes_by_kind.items())),
            job_timeline=sorted(
                (jid, s, e, n) for jid, (s, e, n) in self.timeline.items()
            ),
            egress_totals=self.egress_totals,
            ingress_totals=self.ingress_totals,
            flow_ledger=self.ledger,
        )

    def _io_wait_series(self, node: str, n_buckets: int) -> list[float]:
        spec = self.node_by_name[node]
        records = self.untar_records[node]
        series = []
        for t in range(n_buckets):
            backlog = 0.0
            for arrival, start, end, nbytes in records:
                if arrival <= t < start:
                    backlog += nbytes
                elif start <= t < end:
                    backlog += (end - t) * spec.disk_untar_rate
            series.append(
                spec.disk_service_base_ms + 1000.0 * backlog / spec.disk_untar_rate
            )
        return series


def simulate(
    ewf: ExecutableWorkflow,
    plans: dict | None,
    topo: Topology,
    cfg: SimConfig,
) -> SimResult:
    """Run one deterministic simulated execution of an executable workflow."""
    del plans  # job payloads already carry backend/placement/size information
    return _Engine(ewf, topo, cfg).run()


def critical_path_lower_bound(ewf: ExecutableWorkflow, topo: Topology) -> float:
    """Makespan lower bound: longest path of runtime + bytes at best link speed."""
    max_bw = max(topo.links.values()) if topo.links else math.inf
    weight: dict[str, float] = {}
    for j in ewf.jobs:
        w = 0.0
        p = j.payload
        if isinstance(p, ComputePayload):
            w += p.runtime_s
            moved = sum(s for _, s in p.input_files) + sum(s for _, s in p.output_files)
            if p.placement is PlacementMode.STAGE_COPY:
                moved += p.image_bytes
            w += moved / max_bw
        elif isinstance(p, TransferPayload):
            if p.src_site != p.dst_site:
                w += p.total_bytes / max_bw
        weight[j.id] = w
    order = []
    indeg = {j.id: 0 for j in ewf.jobs}
    children = ewf.children()
    for _, v in ewf.edges:
        indeg[v] += 1
    stack = sorted(j for j, d in indeg.items() if d == 0)
    while stack:
        n = stack.pop(0)
        order.append(n)
        for c in children[n]:
            indeg[c] -= 1
            if indeg[c] == 0:
                stack.append(c)
        stack.sort()
    dist: dict[str, float] = {}
    parents = ewf.parents()
    for n in order:
        dist[n] = weight[n] + max((dist[p] for p in parents[n]), default=0.0)
    return max(dist.values(), default=0.0)


# --- reporting -------------------------------------------------------------

def report(res: SimResult, out: str | Path) -> list[Path]:
    """Write the makespan summary and per-node series as delimited text."""
    out = Path(out)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise DestinationUnwritable(str(exc)) from None

    written = []

    summary = out / "summary.txt"
    lines = [f"makespan_s\t{res.makespan_s:.6f}"]
    for kind in sorted(res.transfer_count_by_kind):
        lines.append(
            f"transfers.{kind}\t{res.transfer_count_by_kind[kind]}"
            f"\t{res.transfer_bytes_by_kind[kind]:.0f}"
        )
    for node in sorted(res.egress_totals):
        lines.append(f"egress_total.{node}\t{res.egress_totals[node]:.0f}")
    for node in sorted(res.ingress_totals):
        lines.append(f"ingress_total.{node}\t{res.ingress_totals[node]:.0f}")
    summary.write_text("\n".join(lines) + "\n")
    written.append(summary)

    for fname, series_map in (
        ("egress.tsv", res.per_node_egress),
        ("io_wait.tsv", res.per_node_io_wait_ms),
    ):
        nodes = sorted(series_map)
        n = max((len(series_map[x]) for x in nodes), default=0)
        rows = ["t\t" + "\t".join(nodes)]
        for t in range(n):
            vals = [
                f"{series_map[x][t]:.6f}" if t < len(series_map[x]) else "0.000000"
                for x in nodes
            ]
            rows.append(f"{t}\t" + "\t".join(vals))
        path = out / fname
        path.write_text("\n".join(rows) + "\n")
        written.append(path)

    timeline = out / "timeline.tsv"
    rows = ["job\tstart\tend\tnode"]
    for jid, start, end, node in res.job_timeline:
        rows.append(f"{jid}\t{start:.6f}\t{end:.6f}\t{node}")
    timeline.write_text("\n".join(rows) + "\n")
    written.append(timeline)
    return written


def sweep(
    scenarios: list[tuple[str, ExecutableWorkflow, Topology, SimConfig]],
) -> list[dict]:
    """Simulate each scenario; return one row per label, sorted by label."""
    if not scenarios:
        raise SimError("sweep needs at least one scenario")
    rows = []
    for label, ewf, topo, cfg in scenarios:
        res = simulate(ewf, None, topo, cfg)
        rows.append({
            "label": label,
            "makespan_s": res.makespan_s,
            "transfers": dict(res.transfer_count_by_kind),
            "container_bytes_from_submit": res.container_bytes_from(topo.submit.name),
        })
    return sorted(rows, key=lambda r: r["label"])


def parse_topology(text: str) -> Topology:
    """Parse the topology YAML document (submit / nfs / workers / links)."""
    import yaml

    doc = yaml.safe_load(text) or {}

    def node(raw: dict) -> NodeSpec:
        return NodeSpec(
            name=str(raw["name"]),
            slots=int(raw.get("slots", 1)),
            disk_untar_rate=float(raw.get("disk_untar_rate", 1e8)),
            disk_service_base_ms=float(raw.get("disk_service_base_ms", 10.0)),
        )

    links: dict[tuple[str, str], float] = {}
    for raw in doc.get("links") or []:
        links[(str(raw["src"]), str(raw["dst"]))] = float(raw["bandwidth"])
    topo = Topology(
        submit=node(doc["submit"]),
        nfs=node(doc["nfs"]) if doc.get("nfs") else None,
        workers=tuple(node(w) for w in doc.get("workers") or []),
        links=links,
    )
    topo.validate()
    return topo


def serialize_topology(topo: Topology) -> str:
    import yaml

    def node(n: NodeSpec) -> dict:
        return {
            "name": n.name,
            "slots": n.slots,
            "disk_untar_rate": n.disk_untar_rate,
            "disk_service_base_ms": n.disk_service_base_ms,
        }

    doc = {
        "submit": node(topo.submit),
        "nfs": node(topo.nfs) if topo.nfs else None,
        "workers": [node(w) for w in topo.workers],
        "links": [
            {"src": a, "dst": b, "bandwidth": bw}
            for (a, b), bw in topo.links.items()
        ],
    }
    return yaml.safe_dump(doc, sort_keys=False, default_flow_style=False)


def format_sweep(rows: list[dict]) -> str:
    out = [f"{'label':<28} {'makespan_s':>12}  transfers"]
    for r in rows:
        transfers = ", ".join(f"{k}={v}" for k, v in sorted(r["transfers"].items()))
        out.append(f"{r['label']:<28} {r['makespan_s']:>12.2f}  {transfers}")
    return "\n".join(out)
