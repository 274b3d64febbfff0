"""Per-container resource renaming and a copy-on-write resource store.

Files and registry keys are renamed by prefixing ``/vm<id>`` to the path;
IPC objects (and service names) get a ``-vm<id>`` suffix.  Both tokens are
reserved, so an undecorated host name can never collide with a renamed one.
"""

from __future__ import annotations

import enum
import re
from dataclasses import dataclass, field

from .errors import (
    AlreadyDecorated,
    DuplicateContainerId,
    InvalidResourceName,
    NoSuchContainer,
)


class Host(enum.Enum):
    HOST = "HOST"

    def __str__(self) -> str:
        return "HOST"


HOST = Host.HOST

_PREFIX_RE = re.compile(r"^/vm(\d+)(?=/)")
_SUFFIX_RE = re.compile(r"-vm(\d+)$")


class ResourceKind(enum.Enum):
    FILE = "file"
    REGISTRY_KEY = "key"
    PORT = "port"
    NAMED_PIPE = "pipe"
    MUTEX = "mutex"
    SECTION = "section"
    EVENT = "event"

    @property
    def is_ipc(self) -> bool:
        return self not in (ResourceKind.FILE, ResourceKind.REGISTRY_KEY)

    @property
    def is_path(self) -> bool:
        return not self.is_ipc


@dataclass(frozen=True, order=True)
class ResourceName:
    kind: ResourceKind
    name: str

    def __post_init__(self):
        if not self.name:
            raise InvalidResourceName("resource name must be non-empty")
        if self.kind.is_path and not self.name.startswith("/"):
            raise InvalidResourceName(f"path must be absolute: {self.name!r}")

    def __str__(self) -> str:
        return f"{self.kind.value}:{self.name}"


@dataclass(frozen=True)
class Container:
    id: int

    @property
    def name(self) -> str:
        return f"vm{self.id}"


def check_container_id(cid) -> int:
    if isinstance(cid, bool) or not isinstance(cid, int) or cid < 1:
        raise InvalidResourceName(f"container id must be a positive integer, got {cid!r}")
    return cid


def suffix_token(name: str) -> int | None:
    """Container id carried by a ``-vm<id>`` suffix, or None."""
    m = _SUFFIX_RE.search(name)
    return int(m.group(1)) if m else None


def prefix_token(path: str) -> int | None:
    """Container id carried by a ``/vm<id>/`` path prefix, or None."""
    m = _PREFIX_RE.match(path)
    return int(m.group(1)) if m else None


def strip_suffix(name: str) -> str:
    return _SUFFIX_RE.sub("", name)


def decoration_of(r: ResourceName) -> int | None:
    if r.kind.is_path:
        return prefix_token(r.name)
    return suffix_token(r.name)


def is_decorated(r: ResourceName) -> bool:
    return decoration_of(r) is not None


def suffix_name(name: str, cid: int) -> str:
    """``name`` -> ``name-vm<cid>``; shared by IPC objects and service names."""
    check_container_id(cid)
    if suffix_token(name) is not None:
        raise AlreadyDecorated(name)
    return f"{name}-vm{cid}"


def rename_resource(cid: int, r: ResourceName) -> ResourceName:
    check_container_id(cid)
    if is_decorated(r):
        raise AlreadyDecorated(str(r))
    if r.kind.is_path:
        return ResourceName(r.kind, f"/vm{cid}{r.name}")
    return ResourceName(r.kind, suffix_name(r.name, cid))


def undecorate(r: ResourceName) -> ResourceName:
    if r.kind.is_path:
        m = _PREFIX_RE.match(r.name)
        return ResourceName(r.kind, r.name[m.end():]) if m else r
    return ResourceName(r.kind, strip_suffix(r.name))


@dataclass
class _Layer:
    private: dict[ResourceName, bytes] = field(default_factory=dict)
    deleted: set[ResourceName] = field(default_factory=set)


class CowStore:
    """Shared host layer plus one private copy-on-write layer per container.

    Container layers are keyed by the container-scoped (renamed) name.  A
    container may address a resource by its host name or by its own scoped
    name; both resolve to the same private slot.
    """

    def __init__(self, host: dict[ResourceName, bytes] | None = None):
        self.host_layer: dict[ResourceName, bytes] = {}
        self.layers: dict[int, _Layer] = {}
        for r, v in (host or {}).items():
            self.write(HOST, r, v)

    def create_container(self, cid: int) -> Container:
        check_container_id(cid)
        if cid in self.layers:
            raise DuplicateContainerId(cid)
        self.layers[cid] = _Layer()
        return Container(cid)

    def has_container(self, cid) -> bool:
        return cid in self.layers

    def containers(self) -> list[int]:
        return sorted(self.layers)

    def _layer(self, cid: int) -> _Layer:
        try:
            return self.layers[cid]
        except KeyError:
            raise NoSuchContainer(cid) from None

    def scoped(self, cid: int, r: ResourceName) -> ResourceName:
        """Key of ``r`` inside container ``cid``'s private layer."""
        owner = decoration_of(r)
        if owner is None:
            return rename_resource(cid, r)
        if owner != cid:
            raise AlreadyDecorated(f"{r} belongs to vm{owner}, not vm{cid}")
        return r

    def read(self, cid, r: ResourceName) -> bytes | None:
        """Resolve a read; None means the resource is absent in that view."""
        if cid is HOST:
            return self.host_layer.get(r)
        layer = self._layer(cid)
        key = self.scoped(cid, r)
        if key in layer.private:
            return layer.private[key]
        if key in layer.deleted:
            return None
        return self.host_layer.get(undecorate(key))

    def write(self, cid, r: ResourceName, value: bytes) -> None:
        value = bytes(value)
        if cid is HOST:
            if is_decorated(r):
                raise AlreadyDecorated(f"reserved name in host layer: {r}")
            self.host_layer[r] = value
            return
        layer = self._layer(cid)
        key = self.scoped(cid, r)
        layer.private[key] = value
        layer.deleted.discard(key)

    def delete(self, cid, r: ResourceName) -> None:
        if cid is HOST:
            self.host_layer.pop(r, None)
            return
        layer = self._layer(cid)
        key = self.scoped(cid, r)
        layer.private.pop(key, None)
        layer.deleted.add(key)

    def snapshot(self) -> dict:
        return {
            "host": dict(self.host_layer),
            "containers": {
                cid: (dict(layer.private), frozenset(layer.deleted))
                for cid, layer in self.layers.items()
            },
        }


# functional spellings of the store methods
def resolve_read(store: CowStore, cid, r: ResourceName) -> bytes | None:
    return store.read(cid, r)


def resolve_write(store: CowStore, cid, r: ResourceName, value: bytes) -> None:
    store.write(cid, r, value)
