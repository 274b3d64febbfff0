"""Host IPC Object (HIO) table and the renaming decision for container IPC.

The table maps IPC names owned by host core processes to access lists of
service names.  While the HIO flag is clear the table learns: any
duplicated service touching an HIO is added to its list.  Once the flag is
set the table is frozen and services missing from a list are denied.
"""

from __future__ import annotations

import enum
import hashlib
from dataclasses import dataclass
from importlib import resources
from typing import Iterable

from .errors import MalformedPattern, TableFrozen
from .namespace import ResourceKind, ResourceName, rename_resource

SEED_KINDS = {
    "port": ResourceKind.PORT,
    "pipe": ResourceKind.NAMED_PIPE,
    "mutex": ResourceKind.MUTEX,
    "section": ResourceKind.SECTION,
    "event": ResourceKind.EVENT,
}


class DecisionKind(enum.Enum):
    USE_ORIGINAL = "UseOriginal"
    USE_RENAMED = "UseRenamed"
    DENIED = "Denied"

    def __str__(self) -> str:
        return self.value


@dataclass(frozen=True)
class Decision:
    kind: DecisionKind
    name: ResourceName | None = None
    pattern: str | None = None

    def __str__(self) -> str:
        if self.kind is DecisionKind.USE_RENAMED:
            return f"UseRenamed({self.name.name})"
        return str(self.kind)


def _check_pattern(pattern: str) -> None:
    if not pattern or pattern == "*":
        raise MalformedPattern(f"empty pattern: {pattern!r}")
    if "*" in pattern[:-1]:
        raise MalformedPattern(f"'*' is only allowed as the last character: {pattern!r}")


class HioTable:
    def __init__(self):
        self._literal: dict[str, set[str]] = {}
        self._prefix: dict[str, set[str]] = {}  # prefix (without '*') -> acl
        self.kinds: dict[str, ResourceKind] = {}
        self.frozen = False
        self.insertions = 0

    def add(self, kind: ResourceKind, pattern: str) -> None:
        if self.frozen:
            raise TableFrozen(pattern)
        if not kind.is_ipc:
            raise MalformedPattern(f"{kind.value} is not an IPC kind")
        _check_pattern(pattern)
        if pattern in self.kinds:
            raise MalformedPattern(f"duplicate pattern: {pattern!r}")
        if pattern.endswith("*"):
            self._prefix[pattern[:-1]] = set()
        else:
            self._literal[pattern] = set()
        self.kinds[pattern] = kind

    def __len__(self) -> int:
        return len(self.kinds)

    def patterns(self) -> list[str]:
        return sorted(self.kinds)

    def lookup(self, name: str) -> str | None:
        """Pattern that ``name`` hits, or None.  Literal entries win."""
        if name in self._literal:
            return name
        # a starred prefix may itself end in digits, so try every split point
        # inside the trailing digit run (at least one digit must remain)
        stem = len(name.rstrip("0123456789"))
        for cut in range(len(name) - 1, stem - 1, -1):
            if name[:cut] in self._prefix:
                return name[:cut] + "*"
        return None

    def acl(self, pattern: str) -> frozenset[str]:
        if pattern.endswith("*"):
            return frozenset(self._prefix[pattern[:-1]])
        return frozenset(self._literal[pattern])

    def _acl_mut(self, pattern: str) -> set[str]:
        if pattern.endswith("*"):
            return self._prefix[pattern[:-1]]
        return self._literal[pattern]

    def serialize(self) -> str:
        return "".join(
            f"{p}\t{','.join(sorted(self.acl(p)))}\n" for p in self.patterns()
        )

    def digest(self) -> str:
        return hashlib.sha256(self.serialize().encode("utf-8")).hexdigest()

    def set_flag(self, frozen: bool) -> None:
        self.frozen = bool(frozen)

    def decide(self, cid: int, service: str, r: ResourceName) -> Decision:
        """Renaming decision for an IPC access by ``service`` running in ``cid``."""
        if not r.kind.is_ipc:
            raise ValueError(f"not an IPC resource: {r}")
        pattern = self.lookup(r.name)
        if pattern is None:
            return Decision(DecisionKind.USE_RENAMED, rename_resource(cid, r))
        acl = self._acl_mut(pattern)
        if not self.frozen:
            if service not in acl:
                acl.add(service)
                self.insertions += 1
            return Decision(DecisionKind.USE_ORIGINAL, r, pattern)
        if service in acl:
            return Decision(DecisionKind.USE_ORIGINAL, r, pattern)
        return Decision(DecisionKind.DENIED, None, pattern)


def load_hio_table(seed: Iterable[tuple[ResourceKind | str, str]]) -> HioTable:
    table = HioTable()
    for kind, pattern in seed:
        if isinstance(kind, str):
            try:
                kind = SEED_KINDS[kind]
            except KeyError:
                raise MalformedPattern(f"unknown IPC kind {kind!r}") from None
        table.add(kind, pattern)
    return table


def match_hio(table: HioTable, name: str) -> bool:
    return table.lookup(name) is not None


def renaming_decision(table: HioTable, cid: int, service: str, r: ResourceName) -> Decision:
    return table.decide(cid, service, r)


def set_hio_flag(table: HioTable, frozen: bool) -> None:
    table.set_flag(frozen)


def parse_hio_seed(text: str) -> list[tuple[str, str]]:
    """Parse ``<kind><TAB><pattern>`` lines; ``#`` starts a comment."""
    seed = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        kind, sep, pattern = line.partition("\t")
        pattern = pattern.strip()
        if not sep or not pattern:
            raise MalformedPattern(f"line {lineno}: expected '<kind>\\t<pattern>': {raw!r}")
        kind = kind.strip()
        if kind not in SEED_KINDS:
            raise MalformedPattern(f"line {lineno}: unknown IPC kind {kind!r}")
        seed.append((kind, pattern))
    return seed


def load_hio_file(path) -> HioTable:
    with open(path, encoding="utf-8") as fh:
        return load_hio_table(parse_hio_seed(fh.read()))


def default_seed_text() -> str:
    return resources.files("fvmsim").joinpath("data/table1.hio").read_text(encoding="utf-8")


def default_hio_table() -> HioTable:
    return load_hio_table(parse_hio_seed(default_seed_text()))
