"""Command-line entry point: plan, wrappers, run, simulate, report, sweep.

Exit codes: 0 success, 1 input/parse error, 2 execution or simulation error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import yaml

from . import launcher, planner, simulator
from .catalog import parse_catalog
from .errors import ContflowError, LaunchError, SimError, TransferError
from .planner import PlanConfig, parse_executable, parse_sites, serialize_executable
from .simulator import SimConfig, SimResult, FlowRecord, parse_topology
from .workflow import parse_workflow


def _onoff(value: str) -> bool:
    if value not in ("on", "off"):
        raise argparse.ArgumentTypeError(f"expected on|off, got {value!r}")
    return value == "on"


def _read(path: str) -> str:
    try:
        return Path(path).read_text()
    except OSError as exc:
        raise ContflowError(f"cannot read {path}: {exc}") from None


def _plan_config(args) -> PlanConfig:
    return PlanConfig(
        cluster_size=args.cluster_size,
        output_site=args.output_site,
        cleanup=args.cleanup,
        staging_inside_container=args.staging_inside,
        docker_load_dedup=args.dedup_load,
        placement_override=None if args.placement == "auto" else args.placement,
    )


def cmd_plan(args) -> int:
    wf = parse_workflow(_read(args.workflow))
    cat = parse_catalog(_read(args.catalog))
    sites = parse_sites(_read(args.sites))
    ewf = planner.plan(wf, cat, sites, _plan_config(args))
    Path(args.out).write_text(serialize_executable(ewf))
    counts: dict[str, int] = {}
    for j in ewf.jobs:
        counts[j.kind.value] = counts.get(j.kind.value, 0) + 1
    print(f"planned {len(ewf.jobs)} jobs -> {args.out}")
    for kind in sorted(counts):
        print(f"  {kind}: {counts[kind]}")
    return 0


def cmd_wrappers(args) -> int:
    ewf = parse_executable(_read(args.executable))
    cat = parse_catalog(_read(args.catalog))
    cfg = PlanConfig(
        staging_inside_container=args.staging_inside,
        docker_load_dedup=args.dedup_load,
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    plans = launcher.build_plans(ewf, cat, cfg)
    for job_id in sorted(plans):
        (out / f"{job_id}.sh").write_text(launcher.render_wrapper(plans[job_id]))
    print(f"wrote {len(plans)} wrapper scripts to {out}")
    return 0


def cmd_run(args) -> int:
    ewf = parse_executable(_read(args.executable))
    cat = parse_catalog(_read(args.catalog))
    cfg = PlanConfig(docker_load_dedup=args.dedup_load)
    plans = launcher.build_plans(ewf, cat, cfg)
    fail_step = None
    if args.fail_step:
        job_id, _, step = args.fail_step.partition(":")
        fail_step = (job_id, launcher.StepKind(step))
    mode = launcher.ExecMode(args.mode)
    try:
        rep = launcher.execute_local(
            ewf, plans, mode, slots=args.slots, node_count=args.nodes,
            fail_step=fail_step,
        )
    except LaunchError as exc:
        rep = getattr(exc, "report", None)
        if rep is not None:
            _print_run_table(rep)
        print(f"error: {exc}", file=sys.stderr)
        return 2
    _print_run_table(rep)
    return 0 if rep.ok else 2


def _print_run_table(rep: launcher.ExecutionReport) -> None:
    print(f"{'job':<36} {'status':<8} node")
    for job_id in sorted(rep.jobs):
        jr = rep.jobs[job_id]
        print(f"{job_id:<36} {jr.status:<8} {jr.node}")


def _result_to_doc(res: SimResult) -> dict:
    return {
        "makespan_s": res.makespan_s,
        "per_node_egress": res.per_node_egress,
        "per_node_io_wait_ms": res.per_node_io_wait_ms,
        "transfer_count_by_kind": res.transfer_count_by_kind,
        "transfer_bytes_by_kind": res.transfer_bytes_by_kind,
        "job_timeline": [list(row) for row in res.job_timeline],
        "egress_totals": res.egress_totals,
        "ingress_totals": res.ingress_totals,
        "flow_ledger": [
            [f.src, f.dst, f.bytes, f.kind, f.started, f.ended]
            for f in res.flow_ledger
        ],
    }


def _result_from_doc(doc: dict) -> SimResult:
    return SimResult(
        makespan_s=doc["makespan_s"],
        per_node_egress=doc["per_node_egress"],
        per_node_io_wait_ms=doc["per_node_io_wait_ms"],
        transfer_count_by_kind=doc["transfer_count_by_kind"],
        transfer_bytes_by_kind=doc["transfer_bytes_by_kind"],
        job_timeline=[tuple(row) for row in doc["job_timeline"]],
        egress_totals=doc["egress_totals"],
        ingress_totals=doc["ingress_totals"],
        flow_ledger=[FlowRecord(*row) for row in doc["flow_ledger"]],
    )


def cmd_simulate(args) -> int:
    ewf = parse_executable(_read(args.executable))
    topo = parse_topology(_read(args.topology))
    cfg = SimConfig(
        seed=args.seed,
        docker_load_dedup=args.dedup_load,
        fair_share=not args.no_fair_share,
    )
    res = simulator.simulate(ewf, None, topo, cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "result.json").write_text(
        json.dumps(_result_to_doc(res), indent=1, sort_keys=True)
    )
    simulator.report(res, out)
    print(f"makespan: {res.makespan_s:.2f} s")
    print(f"reports written to {out}")
    return 0


def cmd_report(args) -> int:
    doc = json.loads(_read(args.result))
    res = _result_from_doc(doc)
    simulator.report(res, args.out)
    print(f"reports written to {args.out}")
    return 0


def cmd_sweep(args) -> int:
    doc = yaml.safe_load(_read(args.scenarios)) or {}
    scenarios = []
    for raw in doc.get("scenarios") or []:
        wf = parse_workflow(_read(raw["workflow"]))
        cat = parse_catalog(_read(raw["catalog"]))
        sites = parse_sites(_read(raw["sites"]))
        topo = parse_topology(_read(raw["topology"]))
        cfg = PlanConfig(
            cluster_size=int(raw.get("cluster_size", 1)),
            output_site=str(raw.get("output_site", "submit")),
            cleanup=bool(raw.get("cleanup", True)),
        )
        ewf = planner.plan(wf, cat, sites, cfg)
        scenarios.append((str(raw["label"]), ewf, topo,
                          SimConfig(seed=int(raw.get("seed", 0)))))
    rows = simulator.sweep(scenarios)
    print(simulator.format_sweep(rows))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="contflow",
        description="Container-aware workflow planning, wrapping and simulation.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("plan", help="plan an abstract workflow")
    p.add_argument("workflow")
    p.add_argument("catalog")
    p.add_argument("sites")
    p.add_argument("--cluster-size", type=int, default=1)
    p.add_argument("--output-site", default="submit")
    p.add_argument("--cleanup", type=_onoff, default=True)
    p.add_argument("--staging-inside", type=_onoff, default=True)
    p.add_argument("--dedup-load", type=_onoff, default=True)
    p.add_argument("--placement", choices=["auto", "copy", "symlink", "bypass"],
                   default="auto")
    p.add_argument("--out", default="executable.yml")
    p.set_defaults(func=cmd_plan)

    p = sub.add_parser("wrappers", help="render wrapper scripts")
    p.add_argument("executable")
    p.add_argument("catalog")
    p.add_argument("--staging-inside", type=_onoff, default=True)
    p.add_argument("--dedup-load", type=_onoff, default=True)
    p.add_argument("--out", default="wrappers")
    p.set_defaults(func=cmd_wrappers)

    p = sub.add_parser("run", help="execute locally (mock by default)")
    p.add_argument("executable")
    p.add_argument("catalog")
    p.add_argument("--mode", choices=["mock", "real"], default="mock")
    p.add_argument("--slots", type=int, default=4)
    p.add_argument("--nodes", type=int, default=1)
    p.add_argument("--dedup-load", type=_onoff, default=True)
    p.add_argument("--fail-step", default="",
                   help="inject a failure, format JOB_ID:step-kind")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("simulate", help="simulate an executable workflow")
    p.add_argument("executable")
    p.add_argument("topology")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--dedup-load", type=_onoff, default=True)
    p.add_argument("--no-fair-share", action="store_true")
    p.add_argument("--out", default="simout")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("report", help="re-render report files from a result")
    p.add_argument("result")
    p.add_argument("--out", default="simout")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("sweep", help="run a scenario comparison")
    p.add_argument("scenarios")
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (SimError, LaunchError, TransferError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except ContflowError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (KeyError, ValueError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
