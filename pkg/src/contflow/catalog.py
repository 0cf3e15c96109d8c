"""Transformation/container catalog: parsing, validation and lookup.

The on-disk format is a YAML document with two sequences, ``transformations``
and ``cont``.  Each transformation maps a logical id (``namespace::name:version``)
to per-site executables; a site entry may point at a named container.  Each
``cont`` entry describes one container: image URL, runtime type, extra mounts
and env profiles.  ``image_size_bytes`` and ``site_local`` are extensions used
by the simulator and the staging-bypass policy; both default to 0 / false.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace

import yaml

from .errors import (
    CatalogSyntaxError,
    DanglingContainerRef,
    DuplicateName,
    EmptyLocator,
    MalformedMount,
    NotFound,
    UnknownOption,
    UnknownScheme,
)

MOUNT_OPTIONS = {"ro", "rw"}


class ContainerRuntime(enum.Enum):
    DOCKER = "docker"
    SINGULARITY = "singularity"
    SHIFTER = "shifter"


class InstallType(enum.Enum):
    INSTALLED = "INSTALLED"
    STAGEABLE = "STAGEABLE"


class ImageScheme(enum.Enum):
    DOCKER = "docker"
    SHUB = "shub"
    SHIFTER = "shifter"
    FILE = "file"
    HTTP = "http"


@dataclass(frozen=True)
class ImageRef:
    scheme: ImageScheme
    locator: str
    tag: str | None = None

    def url(self) -> str:
        tail = f":{self.tag}" if self.tag else ""
        if self.scheme in (ImageScheme.DOCKER, ImageScheme.SHIFTER):
            return f"{self.scheme.value}:///{self.locator}{tail}"
        if self.scheme is ImageScheme.FILE:
            return f"file://{self.locator}{tail}"
        return f"{self.scheme.value}://{self.locator}{tail}"


@dataclass(frozen=True)
class MountSpec:
    src: str
    dst: str
    options: tuple[str, ...] = ()

    def render(self) -> str:
        opts = f":{','.join(self.options)}" if self.options else ""
        return f"{self.src}:{self.dst}{opts}"


@dataclass(frozen=True)
class ContainerDef:
    name: str
    image: ImageRef
    runtime: ContainerRuntime
    mounts: tuple[MountSpec, ...] = ()
    profiles: dict[str, str] = field(default_factory=dict)
    image_size_bytes: int = 0
    site_local: bool = False


@dataclass(frozen=True)
class TransformationEntry:
    namespace: str
    name: str
    version: str
    site: str
    arch: str = ""
    os: str = ""
    pfn: str = ""
    install_type: InstallType = InstallType.INSTALLED
    container: str | None = None
    profiles: dict[str, str] = field(default_factory=dict)

    @property
    def logical_id(self) -> str:
        return f"{self.namespace}::{self.name}:{self.version}"


@dataclass(frozen=True)
class Catalog:
    transformations: tuple[TransformationEntry, ...] = ()
    containers: dict[str, ContainerDef] = field(default_factory=dict)

    def container_for(self, entry: TransformationEntry) -> ContainerDef | None:
        if entry.container is None:
            return None
        return self.containers[entry.container]


def parse_image_url(url: str) -> ImageRef:
    """Decompose an image URL into scheme, locator and optional tag.

    A colon after the final path segment separates the tag; anything
    else stays in the locator.  Tags apply to registry schemes only.
    """
    if "://" not in url:
        raise UnknownScheme(f"no scheme in image URL: {url!r}")
    scheme_s, rest = url.split("://", 1)
    try:
        scheme = ImageScheme(scheme_s)
    except ValueError:
        raise UnknownScheme(f"unknown image URL scheme: {scheme_s!r}") from None

    tag: str | None = None
    if scheme is ImageScheme.FILE:
        locator = "/" + rest.lstrip("/")
        if locator == "/":
            raise EmptyLocator(f"empty path in {url!r}")
        return ImageRef(scheme, locator)
    if scheme is ImageScheme.HTTP:
        locator = rest
    else:
        locator = rest.lstrip("/")
        last = locator.rsplit("/", 1)[-1]
        if ":" in last:
            locator, tag = locator.rsplit(":", 1)
    if not locator:
        raise EmptyLocator(f"empty locator in image URL: {url!r}")
    return ImageRef(scheme, locator, tag)


def parse_mount_spec(s: str) -> MountSpec:
    """Parse ``src-dir:dest-dir[:options]`` into a MountSpec."""
    parts = s.split(":")
    if len(parts) < 2:
        raise MalformedMount(f"need src and dst in mount spec: {s!r}")
    if len(parts) > 3:
        raise MalformedMount(f"too many fields in mount spec: {s!r}")
    src, dst = parts[0], parts[1]
    if not src.startswith("/") or not dst.startswith("/"):
        raise MalformedMount(f"mount paths must be absolute: {s!r}")
    options: tuple[str, ...] = ()
    if len(parts) == 3:
        options = tuple(tok for tok in parts[2].split(",") if tok)
        for tok in options:
            if tok not in MOUNT_OPTIONS:
                raise UnknownOption(f"unknown mount option {tok!r} in {s!r}")
    return MountSpec(src, dst, options)


def _parse_profiles(raw: object, where: str) -> dict[str, str]:
    if raw is None:
        return {}
    if not isinstance(raw, list):
        raise CatalogSyntaxError(f"{where}: profile must be a sequence")
    env: dict[str, str] = {}
    for item in raw:
        if not isinstance(item, dict):
            raise CatalogSyntaxError(f"{where}: bad profile entry {item!r}")
        for key, values in item.items():
            if key != "env":
                raise CatalogSyntaxError(
                    f"{where}: only env profiles are supported, got {key!r}"
                )
            if not isinstance(values, dict):
                raise CatalogSyntaxError(f"{where}: env profile must be a mapping")
            for k, v in values.items():
                env[str(k)] = str(v)
    return env


def _parse_container(raw: dict, seen: set[str]) -> ContainerDef:
    try:
        name = str(raw["name"])
        image_url = str(raw["image"])
        runtime_s = str(raw["type"]).lower()
    except KeyError as exc:
        raise CatalogSyntaxError(f"cont entry missing field {exc}") from None
    if name in seen:
        raise DuplicateName(f"duplicate container name {name!r}")
    try:
        runtime = ContainerRuntime(runtime_s)
    except ValueError:
        raise CatalogSyntaxError(f"unknown container type {runtime_s!r}") from None
    image = parse_image_url(image_url)
    if runtime is ContainerRuntime.SHIFTER and image.scheme is not ImageScheme.SHIFTER:
        raise CatalogSyntaxError(
            f"container {name!r}: shifter containers require a shifter image URL"
        )
    mounts = tuple(parse_mount_spec(str(m)) for m in raw.get("mount") or [])
    profiles = _parse_profiles(raw.get("profile"), f"cont {name!r}")
    size = int(raw.get("image_size_bytes") or 0)
    if size < 0:
        raise CatalogSyntaxError(f"container {name!r}: negative image_size_bytes")
    return ContainerDef(
        name=name,
        image=image,
        runtime=runtime,
        mounts=mounts,
        profiles=profiles,
        image_size_bytes=size,
        site_local=bool(raw.get("site_local", False)),
    )


def _parse_transformation(raw: dict) -> list[TransformationEntry]:
    try:
        namespace = str(raw["namespace"])
        name = str(raw["name"])
        version = str(raw["version"])
    except KeyError as exc:
        raise CatalogSyntaxError(f"transformation missing field {exc}") from None
    sites = raw.get("site") or []
    if not isinstance(sites, list):
        raise CatalogSyntaxError(f"transformation {name!r}: site must be a sequence")
    entries = []
    for site_raw in sites:
        if not isinstance(site_raw, dict) or "name" not in site_raw:
            raise CatalogSyntaxError(f"transformation {name!r}: bad site entry")
        type_s = str(site_raw.get("type", "INSTALLED")).upper()
        try:
            install_type = InstallType(type_s)
        except ValueError:
            raise CatalogSyntaxError(
                f"transformation {name!r}: unknown type {type_s!r}"
            ) from None
        container = site_raw.get("container")
        entries.append(TransformationEntry(
            namespace=namespace,
            name=name,
            version=version,
            site=str(site_raw["name"]),
            arch=str(site_raw.get("arch", "")),
            os=str(site_raw.get("os", "")),
            pfn=str(site_raw.get("pfn", "")),
            install_type=install_type,
            container=str(container) if container is not None else None,
            profiles=_parse_profiles(site_raw.get("profile"), f"transformation {name!r}"),
        ))
    return entries


def parse_catalog(text: str) -> Catalog:
    """Parse a catalog document into a validated Catalog.

    Accepts either a top-level mapping with ``transformations``/``cont`` keys
    or a sequence of single-key mappings carrying the same content.
    """
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise CatalogSyntaxError(f"malformed catalog document: {exc}") from None
    if doc is None:
        doc = {}
    if isinstance(doc, list):
        merged: dict = {}
        for item in doc:
            if not isinstance(item, dict):
                raise CatalogSyntaxError(f"unexpected top-level entry {item!r}")
            merged.update(item)
        doc = merged
    if not isinstance(doc, dict):
        raise CatalogSyntaxError("catalog document must be a mapping or sequence")

    containers: dict[str, ContainerDef] = {}
    for raw in doc.get("cont") or []:
        cdef = _parse_container(raw, set(containers))
        containers[cdef.name] = cdef

    transformations: list[TransformationEntry] = []
    seen_keys: set[tuple[str, str, str, str]] = set()
    for raw in doc.get("transformations") or []:
        for entry in _parse_transformation(raw):
            key = (entry.namespace, entry.name, entry.version, entry.site)
            if key in seen_keys:
                raise DuplicateName(
                    f"duplicate transformation {entry.logical_id!r} at site {entry.site!r}"
                )
            seen_keys.add(key)
            if entry.container is not None and entry.container not in containers:
                raise DanglingContainerRef(
                    f"transformation {entry.logical_id!r} references unknown "
                    f"container {entry.container!r}"
                )
            transformations.append(entry)

    return Catalog(transformations=tuple(transformations), containers=containers)


def serialize_catalog(cat: Catalog) -> str:
    """Serialize a Catalog back to its YAML document form."""
    by_logical: dict[tuple[str, str, str], list[TransformationEntry]] = {}
    for entry in cat.transformations:
        by_logical.setdefault((entry.namespace, entry.name, entry.version), []).append(entry)
    transformations = []
    for (namespace, name, version), entries in by_logical.items():
        sites = []
        for e in entries:
            site: dict = {"name": e.site, "arch": e.arch, "os": e.os,
                          "pfn": e.pfn, "type": e.install_type.value}
            if e.container is not None:
                site["container"] = e.container
            if e.profiles:
                site["profile"] = [{"env": dict(e.profiles)}]
            sites.append(site)
        transformations.append({
            "namespace": namespace, "name": name, "version": version, "site": sites,
        })
    conts = []
    for cdef in cat.containers.values():
        raw: dict = {
            "name": cdef.name,
            "image": cdef.image.url(),
            "type": cdef.runtime.value,
        }
        if cdef.mounts:
            raw["mount"] = [m.render() for m in cdef.mounts]
        if cdef.profiles:
            raw["profile"] = [{"env": dict(cdef.profiles)}]
        if cdef.image_size_bytes:
            raw["image_size_bytes"] = cdef.image_size_bytes
        if cdef.site_local:
            raw["site_local"] = True
        conts.append(raw)
    return yaml.safe_dump(
        {"transformations": transformations, "cont": conts},
        sort_keys=False, default_flow_style=False,
    )


def parse_logical_id(logical_id: str) -> tuple[str, str, str]:
    """Split ``namespace::name:version`` into its parts."""
    if "::" not in logical_id:
        raise NotFound(f"bad logical transformation id {logical_id!r}")
    namespace, rest = logical_id.split("::", 1)
    if ":" not in rest:
        raise NotFound(f"bad logical transformation id {logical_id!r}")
    name, version = rest.rsplit(":", 1)
    return namespace, name, version


def resolve_transformation(
    cat: Catalog, logical_id: str, site: str
) -> tuple[TransformationEntry, ContainerDef | None]:
    """Look up the site-specific entry for a logical id and its container."""
    namespace, name, version = parse_logical_id(logical_id)
    for entry in cat.transformations:
        if (entry.namespace, entry.name, entry.version, entry.site) == \
                (namespace, name, version, site):
            return entry, cat.container_for(entry)
    raise NotFound(f"no transformation {logical_id!r} at site {site!r}")


def with_container(cat: Catalog, cdef: ContainerDef) -> Catalog:
    """Return a copy of the catalog with one container added/replaced."""
    containers = dict(cat.containers)
    containers[cdef.name] = cdef
    return replace(cat, containers=containers)
