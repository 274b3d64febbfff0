"""Line-oriented scenario scripts and the engine that replays them.

Grammar (one command per line, ``#`` starts a comment, double quotes group
words)::

    CONTAINER <id>
    SEED_HIO <file>
    FREEZE_HIO
    HOST_SERVICE <name> TYPE=EXE|DLL IMAGE=<path> [GROUP=<g>] [DEPS=<a,b>]
                 [HARDCODED] [CORE] [PAYLOAD=<str>] [BINARY=<file>]
                 [IPC=<kind>:<name>]...
    DUPLICATE <svc> INTO <cid> [NOREWRITE]
    START <svc> [NOAGENT]
    REQUEST <cid|HOST> <svc> EXPECT <payload>
    WRITE <cid|HOST> <kind> <name> <value>
    DELETE <cid|HOST> <kind> <name>
    ASSERT STATUS <svc> <state>
    ASSERT PLACEMENT <svc> <cid|HOST>
    ASSERT ACL <pattern> CONTAINS <svc>
    ASSERT READ <cid|HOST> <kind> <name> <value|ABSENT>
    ASSERT HIO_STABLE

Relative file names resolve against the script's directory first and the
bundled data directory second.  Commands other than ASSERT/REQUEST record
errors in the log and carry on; a failed check aborts the run.
"""

from __future__ import annotations

import shlex
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

from .binscan import MockBinary, parse_mock_binary
from .duplication import DuplicationEngine
from .errors import FvmError, ScenarioAssertionError, ScenarioParseError
from .eventlog import EventLog
from .hio import HioTable, default_hio_table, load_hio_file
from .namespace import HOST, CowStore, ResourceKind, ResourceName
from .scm import ServiceControlManager, ServiceRecord, ServiceType

KINDS = {k.value: k for k in ResourceKind}

_SERVICE_KEYS = {"TYPE", "IMAGE", "GROUP", "DEPS", "PAYLOAD", "BINARY", "IPC"}
_SERVICE_FLAGS = {"HARDCODED", "CORE"}


def data_dir() -> Path:
    return Path(str(resources.files("fvmsim").joinpath("data")))


def scenarios_dir() -> Path:
    return data_dir() / "scenarios"


@dataclass(frozen=True)
class Command:
    line: int
    text: str
    op: str
    args: dict


@dataclass
class Scenario:
    name: str
    commands: list[Command] = field(default_factory=list)
    seed: int = 0
    base_dir: Path | None = None

    @classmethod
    def from_file(cls, path, seed: int = 0) -> "Scenario":
        path = Path(path)
        return parse_scenario(path.read_text(encoding="utf-8"), name=path.stem,
                              base_dir=path.parent, seed=seed)


def _tokens(line: str) -> list[str]:
    lex = shlex.shlex(line, posix=True)
    lex.whitespace_split = True
    lex.escape = ""
    lex.commenters = "#"
    return list(lex)


def _target(tok: str, lineno: int):
    if tok.upper() == "HOST":
        return HOST
    if tok.isdigit() and int(tok) >= 1:
        return int(tok)
    raise ScenarioParseError(f"expected a container id or HOST, got {tok!r}", lineno)


def _cid(tok: str, lineno: int) -> int:
    target = _target(tok, lineno)
    if target is HOST:
        raise ScenarioParseError("a container id is required here", lineno)
    return target


def _kind(tok: str, lineno: int) -> ResourceKind:
    try:
        return KINDS[tok.lower()]
    except KeyError:
        raise ScenarioParseError(f"unknown resource kind {tok!r}", lineno) from None


def _resource(kind_tok: str, name: str, lineno: int) -> ResourceName:
    try:
        return ResourceName(_kind(kind_tok, lineno), name)
    except FvmError as exc:
        raise ScenarioParseError(str(exc), lineno) from None


def _parse_host_service(toks: list[str], lineno: int) -> dict:
    if len(toks) < 2:
        raise ScenarioParseError("HOST_SERVICE needs a name", lineno)
    args = {"name": toks[1], "flags": set(), "ipc": []}
    for tok in toks[2:]:
        key, eq, value = tok.partition("=")
        key = key.upper()
        if not eq:
            if key not in _SERVICE_FLAGS:
                raise ScenarioParseError(f"unknown HOST_SERVICE flag {tok!r}", lineno)
            args["flags"].add(key)
        elif key == "IPC":
            kind, colon, name = value.partition(":")
            if not colon:
                raise ScenarioParseError(f"IPC expects <kind>:<name>, got {value!r}", lineno)
            res = _resource(kind, name, lineno)
            if not res.kind.is_ipc:
                raise ScenarioParseError(f"{kind} is not an IPC kind", lineno)
            args["ipc"].append(res)
        elif key in _SERVICE_KEYS:
            args[key.lower()] = value
        else:
            raise ScenarioParseError(f"unknown HOST_SERVICE attribute {key!r}", lineno)
    if args.get("type", "").upper() not in ("EXE", "DLL"):
        raise ScenarioParseError("HOST_SERVICE needs TYPE=EXE or TYPE=DLL", lineno)
    if "image" not in args:
        raise ScenarioParseError("HOST_SERVICE needs IMAGE=<path>", lineno)
    return args


def _parse_command(toks: list[str], lineno: int) -> tuple[str, dict]:
    op = toks[0].upper()
    n = len(toks)

    def need(count: int, usage: str):
        if n != count:
            raise ScenarioParseError(f"usage: {usage}", lineno)

    if op == "CONTAINER":
        need(2, "CONTAINER <id>")
        return op, {"cid": _cid(toks[1], lineno)}
    if op == "SEED_HIO":
        need(2, "SEED_HIO <file>")
        return op, {"file": toks[1]}
    if op == "FREEZE_HIO":
        need(1, "FREEZE_HIO")
        return op, {}
    if op == "HOST_SERVICE":
        return op, _parse_host_service(toks, lineno)
    if op == "DUPLICATE":
        if n not in (4, 5) or toks[2].upper() != "INTO" or (n == 5 and toks[4].upper() != "NOREWRITE"):
            raise ScenarioParseError("usage: DUPLICATE <svc> INTO <cid> [NOREWRITE]", lineno)
        return op, {"svc": toks[1], "cid": _cid(toks[3], lineno), "rewrite": n == 4}
    if op == "START":
        if n not in (2, 3) or (n == 3 and toks[2].upper() != "NOAGENT"):
            raise ScenarioParseError("usage: START <svc> [NOAGENT]", lineno)
        return op, {"svc": toks[1], "agent": n == 2}
    if op == "REQUEST":
        if n != 5 or toks[3].upper() != "EXPECT":
            raise ScenarioParseError("usage: REQUEST <cid|HOST> <svc> EXPECT <payload>", lineno)
        return op, {"target": _target(toks[1], lineno), "svc": toks[2], "expect": toks[4]}
    if op == "WRITE":
        need(5, "WRITE <cid|HOST> <kind> <name> <value>")
        return op, {"target": _target(toks[1], lineno),
                    "resource": _resource(toks[2], toks[3], lineno), "value": toks[4]}
    if op == "DELETE":
        need(4, "DELETE <cid|HOST> <kind> <name>")
        return op, {"target": _target(toks[1], lineno),
                    "resource": _resource(toks[2], toks[3], lineno)}
    if op == "ASSERT":
        what = toks[1].upper() if n > 1 else ""
        if what == "STATUS":
            need(4, "ASSERT STATUS <svc> <state>")
            return "ASSERT_STATUS", {"svc": toks[2], "state": toks[3]}
        if what == "PLACEMENT":
            need(4, "ASSERT PLACEMENT <svc> <cid|HOST>")
            return "ASSERT_PLACEMENT", {"svc": toks[2], "target": _target(toks[3], lineno)}
        if what == "ACL":
            if n != 5 or toks[3].upper() != "CONTAINS":
                raise ScenarioParseError("usage: ASSERT ACL <pattern> CONTAINS <svc>", lineno)
            return "ASSERT_ACL", {"pattern": toks[2], "svc": toks[4]}
        if what == "READ":
            need(6, "ASSERT READ <cid|HOST> <kind> <name> <value|ABSENT>")
            return "ASSERT_READ", {"target": _target(toks[2], lineno),
                                   "resource": _resource(toks[3], toks[4], lineno),
                                   "value": toks[5]}
        if what == "HIO_STABLE":
            need(2, "ASSERT HIO_STABLE")
            return "ASSERT_HIO_STABLE", {}
        raise ScenarioParseError(f"unknown assertion {what!r}", lineno)
    raise ScenarioParseError(f"unknown command {toks[0]!r}", lineno)


def parse_scenario(text: str, name: str = "scenario", base_dir=None, seed: int = 0) -> Scenario:
    commands = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        try:
            toks = _tokens(raw)
        except ValueError as exc:
            raise ScenarioParseError(str(exc), lineno) from None
        if not toks:
            continue
        op, args = _parse_command(toks, lineno)
        commands.append(Command(lineno, raw.strip(), op, args))
    return Scenario(name, commands, seed, Path(base_dir) if base_dir is not None else None)


class Simulation:
    """All simulated state: COW store, HIO table, SCM and duplication engine."""

    def __init__(self, hio: HioTable | None = None, base_dir=None):
        self.log = EventLog()
        self.store = CowStore()
        self.hio = hio if hio is not None else default_hio_table()
        self.scm = ServiceControlManager(hio=self.hio, log=self.log)
        self.engine = DuplicationEngine(self.scm, self.store)
        self.base_dir = Path(base_dir) if base_dir is not None else None

    def resolve(self, name: str) -> Path:
        path = Path(name)
        candidates = [path] if path.is_absolute() else []
        if not path.is_absolute():
            if self.base_dir is not None:
                candidates.append(self.base_dir / path)
            candidates += [data_dir() / path, scenarios_dir() / path]
        for cand in candidates:
            if cand.is_file():
                return cand
        raise FileNotFoundError(name)

    # -- commands ----------------------------------------------------------

    def seed_hio(self, name: str) -> None:
        self.hio = load_hio_file(self.resolve(name))
        self.scm.hio = self.hio
        self.scm.ipc_accesses.clear()

    def host_service(self, args: dict) -> ServiceRecord:
        binary: MockBinary | None = None
        image_bytes = None
        if "binary" in args:
            source = self.resolve(args["binary"]).read_text(encoding="utf-8")
            binary = parse_mock_binary(source)
            image_bytes = source.encode("utf-8")
        deps = tuple(d for d in args.get("deps", "").split(",") if d)
        record = ServiceRecord(
            name=args["name"],
            svc_type=ServiceType(args["type"].upper()),
            image_path=args["image"],
            group=args.get("group"),
            dependencies=deps,
            hardcoded_name="HARDCODED" in args["flags"],
            core="CORE" in args["flags"],
            payload=args.get("payload", "{service}"),
            binary=binary,
            ipc=tuple(args["ipc"]),
        )
        image = ResourceName(ResourceKind.FILE, record.image_path)
        if self.store.read(HOST, image) is None:
            self.store.write(HOST, image, image_bytes or f"MZ {record.image_path}".encode())
        return self.scm.create_service(record)

    def replay_hio(self) -> tuple[int, bool]:
        """Re-issue every recorded container IPC access.

        Returns the number of ACL insertions the replay caused and whether the
        serialized table is unchanged.
        """
        before_digest, before = self.hio.digest(), self.hio.insertions
        for cid, service, r in list(self.scm.ipc_accesses):
            self.hio.decide(cid, service, r)
        return self.hio.insertions - before, self.hio.digest() == before_digest

    def _check(self, cmd: Command, expected, actual) -> None:
        ok = expected == actual
        self.log.emit("harness", cmd.op, outcome="ok" if ok else "AssertionFailed",
                      line=cmd.line, expected=expected, actual=actual)
        if not ok:
            raise ScenarioAssertionError(cmd.line, cmd.text, expected, actual)

    def execute(self, cmd: Command) -> None:
        a = cmd.args
        op = cmd.op
        if op == "REQUEST":
            try:
                actual = self.scm.dispatch_request(a["target"], a["svc"]).decode("utf-8")
            except FvmError as exc:
                actual = exc.code
            return self._check(cmd, a["expect"], actual)
        if op == "ASSERT_STATUS":
            try:
                status = str(self.scm.query_service_status(a["svc"]))
            except FvmError as exc:
                status = exc.code
            # a bare "Failed" accepts any failure reason
            if a["state"] == "Failed" and status.startswith("Failed("):
                status = "Failed"
            return self._check(cmd, a["state"], status)
        if op == "ASSERT_PLACEMENT":
            proc = self.scm.process_of(a["svc"]) if self.scm.has_service(a["svc"]) else None
            actual = "none" if proc is None else str(proc.container)
            return self._check(cmd, str(a["target"]), actual)
        if op == "ASSERT_ACL":
            pattern = a["pattern"]
            acl = self.hio.acl(pattern) if pattern in self.hio.kinds else frozenset()
            return self._check(cmd, True, a["svc"] in acl)
        if op == "ASSERT_READ":
            try:
                data = self.store.read(a["target"], a["resource"])
                actual = "ABSENT" if data is None else data.decode("utf-8")
            except FvmError as exc:
                actual = exc.code
            return self._check(cmd, a["value"], actual)
        if op == "ASSERT_HIO_STABLE":
            inserted, same = self.replay_hio()
            return self._check(cmd, {"insertions": 0, "unchanged": True},
                               {"insertions": inserted, "unchanged": same})

        try:
            detail = self._mutate(cmd)
        except (FvmError, FileNotFoundError, ValueError) as exc:
            code = exc.code if isinstance(exc, FvmError) else type(exc).__name__
            self.log.emit("harness", op, outcome=code, line=cmd.line, error=str(exc))
        else:
            self.log.emit("harness", op, line=cmd.line, **detail)

    def _mutate(self, cmd: Command) -> dict:
        a = cmd.args
        op = cmd.op
        if op == "CONTAINER":
            self.store.create_container(a["cid"])
            return {"container": a["cid"]}
        if op == "SEED_HIO":
            self.seed_hio(a["file"])
            return {"file": a["file"], "entries": len(self.hio)}
        if op == "FREEZE_HIO":
            self.hio.set_flag(True)
            return {"digest": self.hio.digest()}
        if op == "HOST_SERVICE":
            rec = self.host_service(a)
            return {"service": rec.name}
        if op == "DUPLICATE":
            plan = self.engine.duplicate_service(a["svc"], a["cid"], rewrite=a["rewrite"])
            return {"service": a["svc"], "container": a["cid"],
                    "created": [p.new_name for p in plan.walk()]}
        if op == "START":
            pid = self.scm.start_service(a["svc"], agent=a["agent"])
            return {"service": a["svc"], "pid": pid,
                    "status": str(self.scm.query_service_status(a["svc"]))}
        if op == "WRITE":
            self.store.write(a["target"], a["resource"], a["value"].encode("utf-8"))
            return {"target": a["target"], "resource": str(a["resource"])}
        if op == "DELETE":
            self.store.delete(a["target"], a["resource"])
            return {"target": a["target"], "resource": str(a["resource"])}
        raise AssertionError(f"unhandled command {op}")

    def run(self, scenario: Scenario) -> EventLog:
        if scenario.base_dir is not None:
            self.base_dir = scenario.base_dir
        for cmd in scenario.commands:
            try:
                self.execute(cmd)
            except ScenarioAssertionError as exc:
                exc.log = self.log
                raise
        return self.log


def run_scenario(script, hio_seed=None) -> EventLog:
    """Run a scenario (object or path) on a fresh simulation."""
    scenario = script if isinstance(script, Scenario) else Scenario.from_file(script)
    hio = load_hio_file(hio_seed) if hio_seed is not None else None
    return Simulation(hio=hio, base_dir=scenario.base_dir).run(scenario)
