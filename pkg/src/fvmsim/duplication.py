"""Service duplication: logical copy of SCM entries plus physical placement.

The container a service process belongs to is carried entirely in its
start-up data: a ``-k <group>-vm<id>`` parameter for svchost-hosted
services, or a ``/vm<id>/...`` image path for services with their own
executable.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, replace

from .binscan import ascii_fold
from .errors import (
    AlreadyDecorated,
    AlreadyDuplicated,
    ConflictingPlacement,
    CoreProcessNotDuplicable,
    ImageNotFound,
    NoSuchContainer,
    NotDuplicatedRecord,
    WrongState,
)
from .namespace import (
    HOST,
    CowStore,
    ResourceKind,
    ResourceName,
    check_container_id,
    prefix_token,
    rename_resource,
    suffix_name,
    suffix_token,
)
from .scm import ServiceControlManager, ServiceRecord, ServiceType, StartType, State, group_param

_GROUP_ARG_RE = re.compile(r"(^|\s)-k\s+(\S+)")


def duplicated_name(name: str, cid: int) -> str:
    return suffix_name(name, cid)


def placement_decision(image_path: str, params: str):
    """Container a process with this image and parameters belongs in."""
    group = group_param(params)
    if group is None:
        tokens = params.split()
        group = tokens[-1] if tokens else ""
    from_params = suffix_token(group)
    from_image = prefix_token(image_path)
    if from_params is not None and from_image is not None and from_params != from_image:
        raise ConflictingPlacement(
            f"params say vm{from_params}, image path says vm{from_image}"
        )
    if from_params is not None:
        return from_params
    if from_image is not None:
        return from_image
    return HOST


@dataclass(frozen=True)
class DuplicationPlan:
    source: str
    target_container: int
    new_name: str
    new_image_path: str
    new_params: str
    rewritten_dependencies: tuple[str, ...]
    recursive_children: tuple["DuplicationPlan", ...] = ()

    def walk(self):
        yield self
        for child in self.recursive_children:
            yield from child.walk()


class DuplicationEngine:
    def __init__(self, scm: ServiceControlManager, store: CowStore):
        self.scm = scm
        self.store = store
        self.log = scm.log

    def _closure(self, name: str, cid: int) -> list[str]:
        """Undecorated services that need a fresh duplicate, root first."""
        order, seen, todo = [], set(), [name]
        while todo:
            rec = self.scm.record(todo.pop(0))
            if ascii_fold(rec.name) in seen:
                continue
            seen.add(ascii_fold(rec.name))
            if rec.core:
                raise CoreProcessNotDuplicable(rec.name)
            if suffix_token(rec.name) is not None:
                raise AlreadyDecorated(rec.name)
            if order and self.scm.has_service(duplicated_name(rec.name, cid)):
                continue
            order.append(rec.name)
            todo.extend(rec.dependencies)
        return order

    def logical_duplicate(self, name: str, cid: int) -> DuplicationPlan:
        source = self.scm.record(name)
        if suffix_token(source.name) is not None:
            raise AlreadyDecorated(source.name)
        if self.scm.has_service(duplicated_name(source.name, cid)):
            raise AlreadyDuplicated(duplicated_name(source.name, cid))
        # validate the whole closure before touching the database
        todo = self._closure(source.name, cid)
        created: dict[str, ServiceRecord] = {}
        for svc in todo:
            rec = self.scm.record(svc)
            created[ascii_fold(svc)] = self.scm.create_service(
                replace(
                    rec,
                    name=duplicated_name(rec.name, cid),
                    dependencies=tuple(duplicated_name(d, cid) for d in rec.dependencies),
                    start_type=StartType.MANUAL,
                )
            )
        self.log.emit("dup-engine", "logical_duplicate", source=source.name, container=cid,
                      created=[created[ascii_fold(t)].name for t in todo])

        # each new record hangs under the first parent that reaches it
        claimed = {ascii_fold(source.name)}

        def plan_for(svc: str) -> DuplicationPlan:
            rec = self.scm.record(svc)
            new = created[ascii_fold(svc)]
            kids = []
            for dep in rec.dependencies:
                k = ascii_fold(dep)
                if k in created and k not in claimed:
                    claimed.add(k)
                    kids.append(dep)
            return DuplicationPlan(
                source=rec.name,
                target_container=cid,
                new_name=new.name,
                new_image_path=new.image_path,
                new_params=new.params,
                rewritten_dependencies=new.dependencies,
                recursive_children=tuple(plan_for(d) for d in kids),
            )

        return plan_for(source.name)

    def encode_placement(self, record: ServiceRecord, cid: int) -> tuple[str, str]:
        if suffix_token(record.name) != cid:
            raise NotDuplicatedRecord(f"{record.name} is not a vm{cid} duplicate")
        if record.svc_type is ServiceType.DLL:
            group = group_param(record.params) or record.group
            if suffix_token(group) is None:
                group = suffix_name(group, cid)
            if group_param(record.params) is None:
                params = f"{record.params} -k {group}".strip()
            else:
                params = _GROUP_ARG_RE.sub(lambda m: f"{m.group(1)}-k {group}", record.params, count=1)
            return record.image_path, params
        host_image = ResourceName(ResourceKind.FILE, record.image_path)
        if prefix_token(record.image_path) == cid:
            return record.image_path, record.params
        data = self.store.read(HOST, host_image)
        if data is None:
            raise ImageNotFound(record.image_path)
        scoped = rename_resource(cid, host_image)
        self.store.write(cid, scoped, data)
        self.log.emit("dup-engine", "copy_image", service=record.name,
                      source=record.image_path, target=scoped.name, size=len(data))
        return scoped.name, record.params

    def duplicate_service(self, name: str, cid: int, rewrite: bool = True) -> DuplicationPlan:
        check_container_id(cid)
        if not self.store.has_container(cid):
            raise NoSuchContainer(cid)
        source = self.scm.record(name)
        if source.core:
            raise CoreProcessNotDuplicable(source.name)
        state = self.scm.query_service_status(source.name).state
        if state not in (State.CREATED, State.RUNNING):
            raise WrongState(f"{source.name} is {self.scm.query_service_status(source.name)}")

        plan = self.logical_duplicate(source.name, cid)

        def place(node: DuplicationPlan) -> DuplicationPlan:
            rec = self.scm.record(node.new_name)
            image, params = self.encode_placement(rec, cid)
            self.scm.update_record(rec.name, image_path=image, params=params)
            self.scm.arm_hio(rec.name)
            if rec.hardcoded_name and rewrite:
                self.scm.arm_rewrite(rec.name, node.source, rec.name)
            self.log.emit("dup-engine", "place", service=rec.name, image=image, params=params,
                          hio_armed=True, rewrite=bool(rec.hardcoded_name and rewrite))
            return replace(
                node,
                new_image_path=image,
                new_params=params,
                recursive_children=tuple(place(c) for c in node.recursive_children),
            )

        return place(plan)
