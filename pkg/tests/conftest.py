"""Shared fixtures and random-model builders for the test suite."""

from __future__ import annotations

import random
from pathlib import Path

import pytest

from contflow.catalog import (
    Catalog,
    ContainerDef,
    ContainerRuntime,
    TransformationEntry,
    parse_image_url,
)
from contflow.planner import PlanConfig, Site, plan
from contflow.workflow import AbstractWorkflow, FileMeta, Task

FIXTURES = Path(__file__).parent / "fixtures"
GOLDEN = Path(__file__).parent / "golden"


@pytest.fixture
def listing_text() -> str:
    return (FIXTURES / "catalog_listing.yml").read_text()


def make_chain(n: int = 3, runtime: float = 1.0) -> AbstractWorkflow:
    tasks = []
    files = {}
    for i in range(n):
        inputs = (f"f{i}",) if i > 0 else ()
        tasks.append(Task(
            id=f"t{i}", transformation="ns::tool:1.0",
            inputs=inputs, outputs=(f"f{i + 1}",), expected_runtime_s=runtime,
        ))
        files[f"f{i + 1}"] = FileMeta(f"f{i + 1}", 1000)
    return AbstractWorkflow(tasks=tuple(tasks), files=files)


def make_diamond() -> AbstractWorkflow:
    tasks = (
        Task("A", "ns::tool:1.0", outputs=("fa",)),
        Task("B", "ns::tool:1.0", inputs=("fa",), outputs=("fb",)),
        Task("C", "ns::tool:1.0", inputs=("fa",), outputs=("fc",)),
        Task("D", "ns::tool:1.0", inputs=("fb", "fc"), outputs=("fd",)),
    )
    return AbstractWorkflow(tasks=tasks)


RUNTIMES = [ContainerRuntime.DOCKER, ContainerRuntime.SINGULARITY,
            ContainerRuntime.SHIFTER]

IMAGE_URL = {
    ContainerRuntime.DOCKER: "docker:///acme/tool:latest",
    ContainerRuntime.SINGULARITY: "shub://hub.example.org/acme/tool",
    ContainerRuntime.SHIFTER: "shifter:///acme/tool:latest",
}


def make_random_model(
    rng: random.Random,
    max_tasks: int = 50,
    max_containers: int = 3,
    max_staging_sites: int = 2,
) -> tuple[AbstractWorkflow, Catalog, list[Site]]:
    """Random DAG + catalog + sites for planner/simulator property tests."""
    n_tasks = rng.randint(1, max_tasks)
    n_containers = rng.randint(0, max_containers)
    n_staging = rng.randint(1, max_staging_sites)

    containers: dict[str, ContainerDef] = {}
    for i in range(n_containers):
        runtime = rng.choice(RUNTIMES)
        containers[f"c{i}"] = ContainerDef(
            name=f"c{i}",
            image=parse_image_url(IMAGE_URL[runtime]),
            runtime=runtime,
            image_size_bytes=rng.randint(1, 50) * 1_000_000,
        )

    sites: list[Site] = []
    for i in range(n_staging):
        sites.append(Site(name=f"staging{i}"))
    compute_sites = []
    for i in range(n_staging):
        s = Site(
            name=f"compute{i}",
            shared_fs=rng.random() < 0.3,
            staging_site=f"staging{i}",
            worker_count=2,
            slots_per_worker=4,
            runtimes_available=frozenset(RUNTIMES),
        )
        sites.append(s)
        compute_sites.append(s)

    transformations = []
    n_transforms = max(1, n_containers + 1)
    for i in range(n_transforms):
        cname = f"c{i}" if i < n_containers else None
        for s in compute_sites:
            transformations.append(TransformationEntry(
                namespace="ns", name=f"tool{i}", version="1.0", site=s.name,
                pfn=f"/opt/tool{i}", container=cname,
            ))
    cat = Catalog(transformations=tuple(transformations), containers=containers)

    tasks = []
    edges = []
    files: dict[str, FileMeta] = {
        "seed.dat": FileMeta("seed.dat", 1_000_000, initial_location="http://x/seed.dat")
    }
    for i in range(n_tasks):
        inputs = ["seed.dat"]
        for j in range(i):
            if rng.random() < 0.08:
                inputs.append(f"out{j}")
                edges.append((f"t{j}", f"t{i}"))
        tasks.append(Task(
            id=f"t{i}",
            transformation=f"ns::tool{rng.randrange(n_transforms)}:1.0",
            inputs=tuple(inputs),
            outputs=(f"out{i}",),
            expected_runtime_s=rng.uniform(0.5, 3.0),
        ))
        files[f"out{i}"] = FileMeta(f"out{i}", rng.randint(1, 20) * 100_000)
    wf = AbstractWorkflow(tasks=tuple(tasks), edges=tuple(edges), files=files)
    return wf, cat, sites


def plan_random(rng: random.Random, **kwargs):
    wf, cat, sites = make_random_model(rng, **kwargs)
    cfg = PlanConfig(cluster_size=rng.choice([1, 2, 4]),
                     output_site="staging0", cleanup=rng.random() < 0.5)
    return plan(wf, cat, sites, cfg), wf, cat, sites, cfg
