"""Exception hierarchy shared across contflow modules."""

from __future__ import annotations


class ContflowError(Exception):
    """Base class for all contflow errors."""


# --- catalog ---------------------------------------------------------------

class CatalogError(ContflowError):
    pass


class CatalogSyntaxError(CatalogError):
    pass


class DanglingContainerRef(CatalogError):
    pass


class DuplicateName(CatalogError):
    pass


class UnknownScheme(CatalogError):
    pass


class EmptyLocator(CatalogError):
    pass


class MalformedMount(CatalogError):
    pass


class UnknownOption(CatalogError):
    pass


class NotFound(CatalogError):
    pass


# --- workflow --------------------------------------------------------------

class ValidationError(ContflowError):
    pass


class CycleDetected(ValidationError):
    def __init__(self, cycle: list[str]):
        self.cycle = cycle
        super().__init__(f"cycle detected: {' -> '.join(cycle)}")


class DanglingEdge(ValidationError):
    pass


class MultipleProducers(ValidationError):
    pass


class OrphanInput(ValidationError):
    pass


# --- planner ---------------------------------------------------------------

class PlanError(ContflowError):
    pass


class UnresolvableTransformation(PlanError):
    pass


class RuntimeUnavailable(PlanError):
    pass


class InconsistentPlacement(PlanError):
    pass


# --- launcher --------------------------------------------------------------

class LaunchError(ContflowError):
    pass


class StepFailed(LaunchError):
    def __init__(self, job_id: str, step_kind: str, message: str = ""):
        self.job_id = job_id
        self.step_kind = step_kind
        super().__init__(f"job {job_id}: step {step_kind} failed{': ' + message if message else ''}")


class MissingRuntime(LaunchError):
    pass


# --- transfer --------------------------------------------------------------

class TransferError(ContflowError):
    pass


class SchemeNotExportable(TransferError):
    pass


class RegistryMiss(TransferError):
    pass


class SourceMissing(TransferError):
    pass


class DestinationUnwritable(TransferError):
    pass


class ChecksumMismatch(TransferError):
    pass


# --- simulator -------------------------------------------------------------

class SimError(ContflowError):
    pass


class UnmappedSite(SimError):
    pass


class MissingSize(SimError):
    pass
