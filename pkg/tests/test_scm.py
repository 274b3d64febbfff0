import pytest

from fvmsim.errors import (
    AlreadyRegistered,
    DependencyFailed,
    MalformedRecord,
    NameNotPending,
    NoSuchService,
    NotInTable,
    ServiceExists,
    UnknownPid,
    WrongState,
)
from fvmsim.hio import default_hio_table
from fvmsim.namespace import HOST
from fvmsim.scm import (
    CORE_PROCESSES,
    ServiceControlManager,
    ServiceRecord,
    ServiceType,
    State,
)

DLL, EXE = ServiceType.DLL, ServiceType.EXE
SVCHOST = "/windows/system32/svchost.exe"


def dll(name, group, **kw):
    return ServiceRecord(name, DLL, SVCHOST, group=group, **kw)


def exe(name, **kw):
    return ServiceRecord(name, EXE, f"/c/{name}.exe", **kw)


def manual_scm():
    return ServiceControlManager(auto_agent=False)


def state(scm, name):
    return scm.query_service_status(name).state


def test_core_processes_live_on_host():
    scm = ServiceControlManager()
    cores = list(scm.processes.values())
    assert [p.image_path.rsplit("/", 1)[1] for p in cores] == list(CORE_PROCESSES)
    assert all(p.container is HOST for p in cores)


def test_create_examples():
    scm = ServiceControlManager()
    scm.create_service(dll("RpcSS", "rpcss"))
    assert state(scm, "RpcSS") is State.CREATED
    assert scm.record("RpcSS").params == "-k rpcss"
    scm.create_service(exe("B"))
    with pytest.raises(ServiceExists):
        scm.create_service(exe("B"))
    with pytest.raises(ServiceExists):
        scm.create_service(exe("b"))
    with pytest.raises(MalformedRecord):
        scm.create_service(ServiceRecord("X", DLL, SVCHOST))
    with pytest.raises(MalformedRecord):
        scm.create_service(ServiceRecord("Y", EXE, "/y.exe", group="g"))


def test_start_exe_spawns_fresh_process():
    scm = manual_scm()
    scm.create_service(exe("B"))
    pid = scm.start_service("B")
    assert scm.processes[pid].hosted_services == ["B"]
    assert state(scm, "B") is State.START_PENDING
    assert pid not in {4, 8, 12, 16, 20}


def test_svchost_sharing():
    scm = ServiceControlManager()
    for name in ("Dhcp", "Dnscache"):
        scm.create_service(dll(name, "netsvcs"))
    scm.create_service(dll("Other", "rpcss"))
    a, b, c = (scm.start_service(n) for n in ("Dhcp", "Dnscache", "Other"))
    assert a == b != c
    assert scm.processes[a].hosted_services == ["Dhcp", "Dnscache"]
    assert scm.processes[a].params == "-k netsvcs"


def test_dependency_started_first():
    scm = ServiceControlManager()
    scm.create_service(exe("IISADMIN"))
    scm.create_service(dll("W3SVC", "iissvcs", dependencies=("IISADMIN",)))
    scm.start_service("W3SVC")
    assert state(scm, "IISADMIN") is State.RUNNING
    assert state(scm, "W3SVC") is State.RUNNING
    order = [e.detail["service"] for e in scm.log.select(action="StartService")]
    assert order == ["IISADMIN", "W3SVC"]


def test_dependency_cycle_and_missing():
    scm = ServiceControlManager()
    scm.create_service(exe("A", dependencies=("B",)))
    scm.create_service(exe("B", dependencies=("A",)))
    with pytest.raises(DependencyFailed):
        scm.start_service("A")
    assert str(scm.query_service_status("A")) == "Failed(DependencyFailed)"
    scm.create_service(exe("C", dependencies=("Nope",)))
    with pytest.raises(DependencyFailed):
        scm.start_service("C")


def test_start_unknown():
    with pytest.raises(NoSuchService):
        ServiceControlManager().start_service("Nope")


def test_manual_protocol_examples():
    scm = manual_scm()
    scm.create_service(dll("RpcSS", "rpcss"))
    pid = scm.start_service("RpcSS")
    scm.register_service_table(pid, [])
    assert state(scm, "RpcSS") is State.START_PENDING
    with pytest.raises(WrongState):
        scm.report_ready(pid, "RpcSS")
    scm.register_service_table(pid, ["RpcSS"])
    assert state(scm, "RpcSS") is State.TABLE_REGISTERED
    with pytest.raises(NotInTable):
        scm.register_service_name(pid, "Elsewhere")
    scm.register_service_name(pid, "RpcSS")
    assert state(scm, "RpcSS") is State.NAME_REGISTERED
    scm.report_ready(pid, "RpcSS")
    assert state(scm, "RpcSS") is State.RUNNING
    with pytest.raises(WrongState):
        scm.report_ready(pid, "RpcSS")
    assert scm.history["rpcss"] == ["create", "start", "table", "name", "ready"]


def test_second_registration_rejected():
    scm = manual_scm()
    scm.create_service(exe("One"))
    scm.create_service(exe("One-vm1"))
    p1, p2 = scm.start_service("One"), scm.start_service("One-vm1")
    scm.register_service_table(p1, ["One"])
    scm.register_service_table(p2, ["One-vm1"])
    scm.register_service_name(p1, "One")
    # the copy still announces the original name, as a hard-coded image would
    with pytest.raises(AlreadyRegistered):
        scm.register_service_name(p2, "One")
    assert scm.registered_names() == {"one": p1}
    scm.register_service_name(p2, "One-vm1")
    assert scm.registered_names() == {"one": p1, "one-vm1": p2}


def test_table_precondition():
    scm = manual_scm()
    scm.create_service(exe("A"))
    scm.create_service(exe("B"))
    pa = scm.start_service("A")
    with pytest.raises(NameNotPending):
        scm.register_service_table(pa, ["B"])
    with pytest.raises(UnknownPid):
        scm.register_service_table(999, ["A"])


def test_unarmed_container_service_loses_scm():
    scm = ServiceControlManager(hio=default_hio_table())
    scm.create_service(dll("W3SVC-vm1", "iissvcs-vm1"))
    scm.start_service("W3SVC-vm1")
    assert str(scm.query_service_status("W3SVC-vm1")) == "Failed(ScmUnreachable)"


def test_dispatch_examples():
    scm = ServiceControlManager(hio=default_hio_table())
    scm.create_service(dll("W3SVC", "iissvcs", payload="host page"))
    scm.start_service("W3SVC")
    scm.create_service(dll("W3SVC-vm1", "iissvcs-vm1", payload="vm1 page"))
    scm.arm_hio("W3SVC-vm1")
    scm.start_service("W3SVC-vm1")
    assert scm.dispatch_request(1, "W3SVC") == b"vm1 page"
    assert scm.dispatch_request(HOST, "W3SVC") == b"host page"
    assert scm.dispatch_request(2, "W3SVC") == b"host page"
    with pytest.raises(NoSuchService):
        scm.dispatch_request(HOST, "Nope")


def test_payload_template():
    scm = ServiceControlManager()
    scm.create_service(exe("Echo", payload="{service}@{container}:{request}"))
    scm.start_service("Echo")
    assert scm.dispatch_request(HOST, "echo", b"hi") == b"Echo@host:hi"


def test_query_status():
    scm = ServiceControlManager()
    scm.create_service(exe("B"))
    assert str(scm.query_service_status("B")) == "Created"
    scm.start_service("B")
    assert str(scm.query_service_status("B")) == "Running"
    with pytest.raises(NoSuchService):
        scm.query_service_status("Nope")


def test_stop_is_terminal():
    scm = ServiceControlManager()
    scm.create_service(exe("B"))
    scm.start_service("B")
    scm.stop_service("B")
    assert state(scm, "B") is State.STOPPED
    assert scm.registered_names() == {}
    with pytest.raises(WrongState):
        scm.start_service("B")
