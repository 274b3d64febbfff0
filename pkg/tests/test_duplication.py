import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fvmsim.duplication import DuplicationEngine, duplicated_name, placement_decision
from fvmsim.errors import (
    AlreadyDecorated,
    AlreadyDuplicated,
    ConflictingPlacement,
    CoreProcessNotDuplicable,
    ImageNotFound,
    NoSuchContainer,
    NoSuchService,
    NotDuplicatedRecord,
)
from fvmsim.hio import default_hio_table
from fvmsim.namespace import HOST, CowStore, ResourceKind, ResourceName, suffix_token
from fvmsim.scm import ServiceControlManager, ServiceRecord, ServiceType, StartType

SVCHOST = "/windows/system32/svchost.exe"


def env(containers=(1, 2, 3), host_files=None):
    store = CowStore({ResourceName(ResourceKind.FILE, k): v for k, v in (host_files or {}).items()})
    for cid in containers:
        store.create_container(cid)
    scm = ServiceControlManager(hio=default_hio_table())
    return scm, store, DuplicationEngine(scm, store)


def dll(name, group, **kw):
    return ServiceRecord(name, ServiceType.DLL, SVCHOST, group=group, **kw)


def test_duplicated_name():
    assert duplicated_name("RpcSS", 3) == "RpcSS-vm3"
    assert duplicated_name("A", 2) == "A-vm2"
    with pytest.raises(AlreadyDecorated):
        duplicated_name("RpcSS-vm3", 1)


def test_logical_duplicate_with_dependency():
    scm, _, eng = env()
    scm.create_service(dll("DcomLaunch", "dcomlaunch"))
    scm.create_service(dll("RpcSS", "rpcss", dependencies=("DcomLaunch",)))
    plan = eng.logical_duplicate("RpcSS", 2)
    rec = scm.record("RpcSS-vm2")
    assert rec.dependencies == ("DcomLaunch-vm2",)
    assert rec.start_type is StartType.MANUAL
    assert [c.new_name for c in plan.recursive_children] == ["DcomLaunch-vm2"]
    assert scm.record("RpcSS").start_type is StartType.AUTOMATIC
    with pytest.raises(AlreadyDuplicated):
        eng.logical_duplicate("RpcSS", 2)


def test_logical_duplicate_exe():
    scm, _, eng = env()
    scm.create_service(ServiceRecord("B", ServiceType.EXE, "/c/B.exe"))
    plan = eng.logical_duplicate("B", 1)
    assert plan.new_name == "B-vm1" and plan.recursive_children == ()
    assert scm.record("B-vm1").start_type is StartType.MANUAL
    assert scm.record("B-vm1").image_path == "/c/B.exe"


def test_existing_dependency_duplicate_is_reused():
    scm, _, eng = env()
    scm.create_service(dll("D", "g"))
    scm.create_service(dll("A", "g", dependencies=("D",)))
    scm.create_service(dll("B", "g", dependencies=("D",)))
    eng.logical_duplicate("A", 1)
    plan = eng.logical_duplicate("B", 1)
    assert plan.recursive_children == ()
    assert scm.record("B-vm1").dependencies == ("D-vm1",)


def test_encode_placement():
    scm, store, eng = env(host_files={"/c/B.exe": b"MZ-image"})
    scm.create_service(dll("A", "A"))
    scm.create_service(ServiceRecord("B", ServiceType.EXE, "/c/B.exe"))
    store.create_container(7)
    eng.logical_duplicate("A", 7)
    eng.logical_duplicate("B", 3)
    assert eng.encode_placement(scm.record("A-vm7"), 7) == (SVCHOST, "-k A-vm7")
    image, params = eng.encode_placement(scm.record("B-vm3"), 3)
    assert image == "/vm3/c/B.exe"
    assert store.read(3, ResourceName(ResourceKind.FILE, "/c/B.exe")) == b"MZ-image"
    assert store.read(HOST, ResourceName(ResourceKind.FILE, "/c/B.exe")) == b"MZ-image"
    with pytest.raises(NotDuplicatedRecord):
        eng.encode_placement(scm.record("A"), 7)


def test_missing_image():
    scm, _, eng = env()
    scm.create_service(ServiceRecord("B", ServiceType.EXE, "/c/B.exe"))
    with pytest.raises(ImageNotFound):
        eng.duplicate_service("B", 1)


@pytest.mark.parametrize(
    "image, params, expected",
    [
        (SVCHOST, "-k netsvcs-vm2", 2),
        ("/vm3/c/B.exe", "", 3),
        ("/c/B.exe", "-k netsvcs", HOST),
        ("/vm4/c/B.exe", "-k g-vm4", 4),
        ("/c/B.exe", "--port 80 inst-vm6", 6),
    ],
)
def test_placement_decision(image, params, expected):
    assert placement_decision(image, params) == expected


def test_conflicting_placement():
    with pytest.raises(ConflictingPlacement):
        placement_decision("/vm1/c/B.exe", "-k g-vm2")


def test_duplicate_service_preconditions():
    scm, _, eng = env()
    with pytest.raises(NoSuchService):
        eng.duplicate_service("Nope", 1)
    scm.create_service(dll("X", "g"))
    with pytest.raises(NoSuchContainer):
        eng.duplicate_service("X", 9)
    scm.create_service(ServiceRecord("Lsa", ServiceType.EXE, "/lsass.exe", core=True))
    with pytest.raises(CoreProcessNotDuplicable):
        eng.duplicate_service("Lsa", 1)


def test_core_dependency_refused_before_any_record_is_created():
    scm, _, eng = env()
    scm.create_service(ServiceRecord("Lsa", ServiceType.EXE, "/lsass.exe", core=True))
    scm.create_service(dll("X", "g", dependencies=("Lsa",)))
    with pytest.raises(CoreProcessNotDuplicable):
        eng.duplicate_service("X", 1)
    assert not scm.has_service("X-vm1")


def test_duplicate_and_start_lands_in_container():
    scm, _, eng = env()
    scm.create_service(dll("RpcSS", "rpcss"))
    scm.start_service("RpcSS")
    eng.duplicate_service("RpcSS", 1)
    pid = scm.start_service("RpcSS-vm1")
    assert str(scm.query_service_status("RpcSS-vm1")) == "Running"
    assert scm.processes[pid].container == 1


def test_three_w3svc_instances():
    scm, _, eng = env()
    scm.create_service(dll("W3SVC", "iissvcs"))
    for cid in (1, 2, 3):
        eng.duplicate_service("W3SVC", cid)
        scm.start_service(f"W3SVC-vm{cid}")
    pids = {scm.process_of(f"W3SVC-vm{cid}").pid for cid in (1, 2, 3)}
    assert len(pids) == 3
    assert all(str(scm.query_service_status(f"W3SVC-vm{c}")) == "Running" for c in (1, 2, 3))


@pytest.mark.parametrize("rewrite, second", [(False, "Failed(AlreadyRegistered)"), (True, "Running")])
def test_hardcoded_name_theorem(rewrite, second):
    scm, _, eng = env()
    scm.create_service(dll("RpcSS", "rpcss", hardcoded_name=True))
    for cid in (1, 2):
        eng.duplicate_service("RpcSS", cid, rewrite=rewrite)
    scm.start_service("RpcSS-vm1")
    scm.start_service("RpcSS-vm2")
    assert str(scm.query_service_status("RpcSS-vm1")) == "Running"
    assert str(scm.query_service_status("RpcSS-vm2")) == second


def random_dag(rng, n):
    names = [f"S{i}" for i in range(n)]
    deps = {}
    for i, name in enumerate(names):
        # only point at later nodes, so the graph stays acyclic
        later = names[i + 1:]
        deps[name] = tuple(rng.sample(later, rng.randint(0, min(3, len(later)))))
    return names, deps


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10**6), st.integers(1, 8), st.integers(1, 3))
def test_dependency_closure_and_start_type(seed, n, cid):
    rng = random.Random(seed)
    names, deps = random_dag(rng, n)
    scm, _, eng = env()
    for name in names:
        scm.create_service(dll(name, f"g{rng.randrange(3)}", dependencies=deps[name]))
    host_before = {k: r for k, r in scm.records.items()}
    root = rng.choice(names)
    plan = eng.duplicate_service(root, cid)

    todo, seen = [scm.record(plan.new_name)], set()
    while todo:
        rec = todo.pop()
        if rec.name in seen:
            continue
        seen.add(rec.name)
        assert suffix_token(rec.name) == cid
        assert rec.start_type is StartType.MANUAL
        assert placement_decision(rec.image_path, rec.params) == cid
        todo.extend(scm.record(d) for d in rec.dependencies)
    assert {n.new_name for n in plan.walk()} == seen
    assert all(scm.records[k] == r for k, r in host_before.items())
