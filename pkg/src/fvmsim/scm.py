"""Service Control Manager: service database, processes and the startup protocol.

A service goes through six steps: it is created (1), started (2); its
process sends a service table (3), registers its name (4) and reports
ready (5); afterwards client requests are forwarded to it (6).

By default every spawned process runs an internal agent that performs
steps 3-5 right away.  Pass ``auto_agent=False`` (or ``agent=False`` to
``start_service``) to drive those steps by hand.
"""

from __future__ import annotations

import enum
import re
from dataclasses import dataclass, field, replace
from typing import Callable

from .binscan import (
    CallClass,
    MockBinary,
    ascii_fold,
    hardcoded_binary,
    names_equal,
    rewrite_runtime_arg,
    scan_binary,
)
from .errors import (
    AlreadyRegistered,
    DependencyFailed,
    FvmError,
    HioDenied,
    MalformedRecord,
    NameNotPending,
    NoSuchService,
    NotInTable,
    ScmUnreachable,
    ServiceExists,
    UnknownPid,
    WrongState,
)
from .eventlog import EventLog
from .hio import Decision, DecisionKind, HioTable
from .namespace import (
    HOST,
    ResourceKind,
    ResourceName,
    rename_resource,
    strip_suffix,
    suffix_name,
    suffix_token,
)

CORE_PROCESSES = ("smss.exe", "csrss.exe", "winlogon.exe", "services.exe", "lsass.exe")
CONTROL_PIPE = "\\Device\\NamedPipe\\net\\NtControlPipe"
REGISTER_API = "RegisterServiceCtrlHandlerEx"

_GROUP_RE = re.compile(r"(?:^|\s)-k\s+(\S+)")


class ServiceType(enum.Enum):
    EXE = "EXE"
    DLL = "DLL"


class StartType(enum.Enum):
    AUTOMATIC = "Automatic"
    MANUAL = "Manual"


class State(enum.Enum):
    CREATED = "Created"
    START_PENDING = "StartPending"
    TABLE_REGISTERED = "TableRegistered"
    NAME_REGISTERED = "NameRegistered"
    RUNNING = "Running"
    STOPPED = "Stopped"
    FAILED = "Failed"


@dataclass(frozen=True)
class ServiceStatus:
    state: State
    reason: str | None = None

    def __str__(self) -> str:
        if self.state is State.FAILED:
            return f"Failed({self.reason})"
        return self.state.value


def group_param(params: str) -> str | None:
    """The svchost group named by a ``-k <group>`` parameter."""
    m = _GROUP_RE.search(params)
    return m.group(1) if m else None


@dataclass(frozen=True)
class ServiceRecord:
    name: str
    svc_type: ServiceType
    image_path: str
    params: str = ""
    start_type: StartType = StartType.AUTOMATIC
    dependencies: tuple[str, ...] = ()
    group: str | None = None
    hardcoded_name: bool = False
    # response template for forwarded requests; {service}, {container}
    # and {request} are substituted per instance
    payload: str = "{service}"
    binary: MockBinary | None = None
    # IPC objects the service opens while starting, besides the control pipe
    ipc: tuple[ResourceName, ...] = ()
    core: bool = False

    @property
    def effective_group(self) -> str | None:
        if self.svc_type is not ServiceType.DLL:
            return None
        return group_param(self.params) or self.group

    def validate(self) -> "ServiceRecord":
        if not self.name or any(c.isspace() for c in self.name):
            raise MalformedRecord(f"bad service name {self.name!r}")
        if not self.image_path.startswith("/"):
            raise MalformedRecord(f"{self.name}: image path must be absolute")
        if self.svc_type is ServiceType.DLL:
            if not self.group:
                raise MalformedRecord(f"{self.name}: DLL service needs a svchost group")
            if not self.params:
                return replace(self, params=f"-k {self.group}", dependencies=tuple(self.dependencies))
        elif self.group is not None:
            raise MalformedRecord(f"{self.name}: EXE service cannot have a group")
        return replace(self, dependencies=tuple(self.dependencies))


@dataclass
class SimProcess:
    pid: int
    image_path: str
    params: str
    container: object  # int container id or HOST
    hosted_services: list[str] = field(default_factory=list)
    binary: MockBinary | None = None
    control_pipe: str | None = None
    rewrites: dict[str, tuple[str, str]] = field(default_factory=dict)

    @property
    def container_label(self) -> str:
        return "host" if self.container is HOST else f"vm{self.container}"


def _key(name: str) -> str:
    return ascii_fold(name)


class ServiceControlManager:
    def __init__(
        self,
        hio: HioTable | None = None,
        log: EventLog | None = None,
        placement: Callable[[str, str], object] | None = None,
        auto_agent: bool = True,
    ):
        if placement is None:
            from .duplication import placement_decision as placement
        self.placement = placement
        self.hio = hio
        self.log = log if log is not None else EventLog()
        self.auto_agent = auto_agent

        self.records: dict[str, ServiceRecord] = {}
        self._status: dict[str, ServiceStatus] = {}
        self.history: dict[str, list[str]] = {}
        self.processes: dict[int, SimProcess] = {}
        self._svchosts: dict[str, int] = {}
        self._assigned: dict[str, int] = {}
        self._tables: dict[int, list[str]] = {}
        self._registered: dict[str, tuple[int, str]] = {}
        self._reg_name: dict[str, str] = {}
        self._hio_armed: set[str] = set()
        self._rewrites: dict[str, tuple[str, str]] = {}
        self.ipc_accesses: list[tuple[int, str, ResourceName]] = []
        self._next_pid = 4
        self._next_pipe = 0

        for image in CORE_PROCESSES:
            self._spawn(f"/windows/system32/{image}", "", HOST)

    # -- helpers -------------------------------------------------------

    def _spawn(self, image: str, params: str, container) -> SimProcess:
        proc = SimProcess(self._next_pid, image, params, container)
        self._next_pid += 4
        self.processes[proc.pid] = proc
        self._tables[proc.pid] = []
        self.log.emit("SCM", "spawn", pid=proc.pid, image=image, params=params,
                      container=container)
        return proc

    def _proc(self, pid: int) -> SimProcess:
        try:
            return self.processes[pid]
        except KeyError:
            raise UnknownPid(pid) from None

    def record(self, name: str) -> ServiceRecord:
        try:
            return self.records[_key(name)]
        except KeyError:
            raise NoSuchService(name) from None

    def has_service(self, name: str) -> bool:
        return _key(name) in self.records

    def _set(self, key: str, state: State, reason: str | None = None) -> None:
        self._status[key] = ServiceStatus(state, reason)

    def _fail(self, key: str, reason: str) -> None:
        self._set(key, State.FAILED, reason)
        self.log.emit("SCM", "service_failed", outcome=reason, service=self.records[key].name)

    def process_of(self, name: str) -> SimProcess | None:
        pid = self._assigned.get(_key(name))
        return None if pid is None else self.processes[pid]

    def arm_hio(self, name: str) -> None:
        self._hio_armed.add(_key(name))

    def arm_rewrite(self, name: str, original: str, duplicated: str) -> None:
        self._rewrites[_key(name)] = (original, duplicated)

    def update_record(self, name: str, **changes) -> ServiceRecord:
        key = _key(self.record(name).name)
        if self._status[key].state is not State.CREATED:
            raise WrongState(f"{name} is {self._status[key]}")
        rec = replace(self.records[key], **changes).validate()
        self.records[key] = rec
        return rec

    # -- step 1 ----------------------------------------------------------

    def create_service(self, record: ServiceRecord) -> ServiceRecord:
        record = record.validate()
        key = _key(record.name)
        if key in self.records:
            self.log.emit("SCM", "CreateService", outcome="ServiceExists", service=record.name)
            raise ServiceExists(record.name)
        self.records[key] = record
        self._set(key, State.CREATED)
        self.history[key] = ["create"]
        self.log.emit("SCM", "CreateService", service=record.name, type=record.svc_type,
                      image=record.image_path, params=record.params,
                      start_type=record.start_type, deps=list(record.dependencies))
        return record

    # -- step 2 ----------------------------------------------------------

    def start_service(self, name: str, agent: bool | None = None) -> int:
        rec = self.record(name)
        status = self._status[_key(rec.name)]
        if status.state is not State.CREATED:
            raise WrongState(f"{rec.name} is {status}")
        return self._start(_key(rec.name), [], self.auto_agent if agent is None else agent)

    def _start(self, key: str, visiting: list[str], agent: bool) -> int:
        rec = self.records[key]
        visiting = visiting + [key]
        for dep in rec.dependencies:
            dkey = _key(dep)
            try:
                if dkey in visiting:
                    raise DependencyFailed(f"dependency cycle: {' -> '.join(visiting + [dkey])}")
                if dkey not in self.records:
                    raise DependencyFailed(f"{rec.name}: missing dependency {dep}")
                dstate = self._status[dkey].state
                if dstate is State.CREATED:
                    self._start(dkey, visiting, agent)
                    dstate = self._status[dkey].state
                if dstate is not State.RUNNING:
                    raise DependencyFailed(f"{rec.name}: dependency {dep} is {self._status[dkey]}")
            except FvmError as exc:
                if self._status[key].state is State.CREATED:
                    self._fail(key, "DependencyFailed")
                if isinstance(exc, DependencyFailed):
                    raise
                raise DependencyFailed(str(exc)) from exc

        try:
            container = self.placement(rec.image_path, rec.params)
        except FvmError as exc:
            self._fail(key, exc.code)
            raise

        if rec.svc_type is ServiceType.DLL:
            gkey = _key(rec.effective_group)
            pid = self._svchosts.get(gkey)
            if pid is None:
                proc = self._spawn(rec.image_path, f"-k {rec.effective_group}", container)
                self._svchosts[gkey] = proc.pid
            else:
                proc = self.processes[pid]
        else:
            proc = self._spawn(rec.image_path, rec.params, container)
            proc.binary = rec.binary
        if proc.control_pipe is None:
            proc.control_pipe = f"{CONTROL_PIPE}{self._next_pipe}"
            self._next_pipe += 1
        proc.hosted_services.append(rec.name)
        if key in self._rewrites:
            proc.rewrites[key] = self._rewrites[key]
        self._assigned[key] = proc.pid
        self._set(key, State.START_PENDING)
        self.history[key].append("start")
        self.log.emit("SCM", "StartService", service=rec.name, pid=proc.pid,
                      container=proc.container)
        if agent:
            self._run_agent(proc, key)
        return proc.pid

    # -- agent -----------------------------------------------------------

    def _run_agent(self, proc: SimProcess, key: str) -> None:
        rec = self.records[key]
        try:
            self._startup_ipc(proc, key)
            self.register_service_table(proc.pid, [rec.name])
            reg_name = self._registration_name(proc, key)
            self.register_service_name(proc.pid, reg_name)
            self.report_ready(proc.pid, reg_name)
        except FvmError as exc:
            self._fail(key, exc.code)

    def _startup_ipc(self, proc: SimProcess, key: str) -> None:
        rec = self.records[key]
        pipe = ResourceName(ResourceKind.NAMED_PIPE, proc.control_pipe)
        actor = f"pid:{proc.pid}"
        for r in (pipe, *rec.ipc):
            if proc.container is HOST:
                self.log.emit(actor, "ipc_access", service=rec.name, object=str(r),
                              decision="host")
                continue
            base = strip_suffix(rec.name)
            if key in self._hio_armed and self.hio is not None:
                before = self.hio.insertions
                decision = self.hio.decide(proc.container, base, r)
                self.ipc_accesses.append((proc.container, base, r))
                if self.hio.insertions != before:
                    self.log.emit("HIO", "acl_insert", pattern=decision.pattern, service=base)
            else:
                decision = Decision(DecisionKind.USE_RENAMED, rename_resource(proc.container, r))
            self.log.emit(actor, "ipc_access", service=rec.name, object=str(r),
                          decision=str(decision))
            if decision.kind is DecisionKind.DENIED:
                raise HioDenied(f"{rec.name}: {r}")
            if r == pipe and decision.kind is DecisionKind.USE_RENAMED:
                raise ScmUnreachable(f"{rec.name}: control pipe renamed to {decision.name}")

    def _registration_name(self, proc: SimProcess, key: str) -> str:
        """Name the service passes at step 4; hard-coded images use their own."""
        rec = self.records[key]
        if not rec.hardcoded_name:
            return rec.name
        original = strip_suffix(rec.name)
        binary = rec.binary or hardcoded_binary(original)
        found = scan_binary(binary, original)
        if not found:
            return rec.name
        service_calls = [o for o in found if o.klass is CallClass.SERVICE_API]
        name = (service_calls or found)[0].matched_string
        rule = proc.rewrites.get(key)
        if rule is not None:
            rewritten = rewrite_runtime_arg(REGISTER_API, [name], *rule)[0]
            self.log.emit(f"pid:{proc.pid}", "rewrite_arg", api=REGISTER_API,
                          original=name, rewritten=rewritten)
            name = rewritten
        return name

    # -- steps 3-5 ---------------------------------------------------------

    def register_service_table(self, pid: int, names: list[str]) -> None:
        self._proc(pid)
        keys = []
        for n in names:
            k = _key(n)
            if self._assigned.get(k) != pid or self._status[k].state is not State.START_PENDING:
                self.log.emit(f"pid:{pid}", "ServiceTable", outcome="NameNotPending", names=names)
                raise NameNotPending(n)
            keys.append(k)
        self._tables[pid].extend(names)
        for k in keys:
            self._set(k, State.TABLE_REGISTERED)
            self.history[k].append("table")
        self.log.emit(f"pid:{pid}", "ServiceTable", names=names)

    def _table_match(self, pid: int, name: str) -> str | None:
        # A duplicated image that still carries its original (hard-coded)
        # name is matched against the undecorated table entry.
        for entry in self._tables[pid]:
            if names_equal(entry, name) or names_equal(strip_suffix(entry), name):
                return _key(entry)
        return None

    def register_service_name(self, pid: int, name: str) -> None:
        self._proc(pid)
        skey = self._table_match(pid, name)
        error = None
        if skey is None:
            error = NotInTable(name)
        elif _key(name) in self._registered:
            error = AlreadyRegistered(name)
        elif self._status[skey].state is not State.TABLE_REGISTERED:
            error = WrongState(f"{name} is {self._status[skey]}")
        if error is not None:
            self.log.emit(f"pid:{pid}", "RegisterName", outcome=error.code, name=name)
            raise error
        self._registered[_key(name)] = (pid, skey)
        self._reg_name[skey] = name
        self._set(skey, State.NAME_REGISTERED)
        self.history[skey].append("name")
        self.log.emit(f"pid:{pid}", "RegisterName", name=name, service=self.records[skey].name)

    def report_ready(self, pid: int, name: str) -> None:
        self._proc(pid)
        entry = self._registered.get(_key(name))
        if entry is not None and entry[0] == pid:
            skey = entry[1]
        elif self._assigned.get(_key(name)) == pid and _key(name) in self._reg_name:
            skey = _key(name)
        else:
            skey = None
        if skey is None or self._status[skey].state is not State.NAME_REGISTERED:
            self.log.emit(f"pid:{pid}", "ReportReady", outcome="WrongState", name=name)
            raise WrongState(name)
        self._set(skey, State.RUNNING)
        self.history[skey].append("ready")
        self.log.emit(f"pid:{pid}", "ReportReady", service=self.records[skey].name)

    # -- step 6 ------------------------------------------------------------

    def dispatch_request(self, requester, name: str, payload: bytes = b"") -> bytes:
        target = name
        if requester is not HOST and suffix_token(name) is None:
            dup = suffix_name(name, requester)
            if self.has_service(dup):
                target = dup
        key = _key(target)
        status = self._status.get(key)
        if status is None or status.state is not State.RUNNING:
            self.log.emit("SCM", "ForwardRequest", outcome="NoSuchService",
                          requester=requester, service=name)
            raise NoSuchService(f"{name} (resolved to {target}) is not running")
        rec = self.records[key]
        proc = self.processes[self._assigned[key]]
        if isinstance(payload, bytes):
            payload = payload.decode("utf-8", errors="replace")
        response = (
            rec.payload.replace("{service}", rec.name)
            .replace("{container}", proc.container_label)
            .replace("{request}", payload)
        )
        self.log.emit("SCM", "ForwardRequest", requester=requester, service=name,
                      target=rec.name, pid=proc.pid, response=response)
        return response.encode("utf-8")

    def query_service_status(self, name: str) -> ServiceStatus:
        return self._status[_key(self.record(name).name)]

    def stop_service(self, name: str) -> None:
        key = _key(self.record(name).name)
        if self._status[key].state is not State.RUNNING:
            raise WrongState(f"{name} is {self._status[key]}")
        reg = self._reg_name.pop(key, None)
        if reg is not None:
            self._registered.pop(_key(reg), None)
        self._set(key, State.STOPPED)
        self.history[key].append("stop")
        self.log.emit("SCM", "StopService", service=self.records[key].name)

    def registered_names(self) -> dict[str, int]:
        return {name: pid for name, (pid, _) in self._registered.items()}
