"""Hard-coded service name detection on a small stack-machine ISA.

A mock binary is a string table plus a flat instruction stream::

    # comment
    STR 0 "RpcSS"
    PUSHINT 4
    PUSHSTR 0
    PUSHINT 0
    CALL OpenServiceW

Arguments are pushed right to left, so the last value pushed before a
``CALL`` is argument 0.  Each call consumes ``arity`` values, all of which
must have been pushed since the previous call; older values stay on the
stack untouched.
"""

from __future__ import annotations

import enum
import re
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Union

from .errors import (
    BadStringIndex,
    BinarySyntaxError,
    StackUnderflow,
    UnknownApi,
)

# Simplified simulator signatures.
API_ARITY: dict[str, int] = {
    # service management: (hSCManager|hService, ...)
    "OpenSCManagerW": 3,  # machine, database, access
    "OpenServiceW": 3,  # hSCManager, service_name, access
    "CreateService": 4,  # hSCManager, service_name, display_name, image_path
    "StartService": 3,  # hService, argc, argv
    "RegisterServiceCtrlHandlerEx": 3,  # service_name, handler, context
    "QueryServiceStatusEx": 2,  # hService, buffer
    "SetServiceStatus": 2,  # hStatus, status
    "GetServiceDisplayName": 3,  # hSCManager, service_name, buffer
    # string manipulation
    "RtlInitUnicodeString": 2,  # dest, source
    "RtlEqualUnicodeString": 3,  # s1, s2, case_insensitive
    # everything else
    "CloseServiceHandle": 1,
    "PrintDebug": 1,
    "OutputDebugStringW": 1,
    "lstrcmpiW": 2,
    "CreateMutexW": 3,
    "CreateEventW": 4,
    "CreateFileW": 3,
    "LoadLibraryW": 1,
    "RegOpenKeyExW": 3,
    "Sleep": 1,
}

SERVICE_APIS = frozenset(
    {
        "OpenServiceW",
        "CreateService",
        "StartService",
        "RegisterServiceCtrlHandlerEx",
        "QueryServiceStatusEx",
        "SetServiceStatus",
        "GetServiceDisplayName",
        "OpenSCManagerW",
    }
)
STRING_APIS = frozenset({"RtlInitUnicodeString", "RtlEqualUnicodeString"})


class CallClass(enum.Enum):
    SERVICE_API = "ServiceApi"
    STRING_API = "StringApi"
    OTHER = "Other"

    def __str__(self) -> str:
        return self.value


_ASCII_FOLD = str.maketrans("ABCDEFGHIJKLMNOPQRSTUVWXYZ", "abcdefghijklmnopqrstuvwxyz")


def ascii_fold(s: str) -> str:
    return s.translate(_ASCII_FOLD)


def names_equal(a: str, b: str) -> bool:
    """Case-insensitive (ASCII only) full-string comparison."""
    return ascii_fold(a) == ascii_fold(b)


@dataclass(frozen=True)
class PushStr:
    index: int


@dataclass(frozen=True)
class PushInt:
    value: int


@dataclass(frozen=True)
class Call:
    api: str


Instruction = Union[PushStr, PushInt, Call]


@dataclass(frozen=True)
class MockBinary:
    strings: Mapping[int, str]
    code: tuple[Instruction, ...]
    arity: Mapping[str, int] = field(default_factory=lambda: dict(API_ARITY))

    def to_source(self) -> str:
        lines = [f'STR {i} "{s}"' for i, s in sorted(self.strings.items())]
        for ins in self.code:
            if isinstance(ins, PushStr):
                lines.append(f"PUSHSTR {ins.index}")
            elif isinstance(ins, PushInt):
                lines.append(f"PUSHINT {ins.value}")
            else:
                lines.append(f"CALL {ins.api}")
        return "\n".join(lines) + "\n"


@dataclass(frozen=True)
class Occurrence:
    code_offset: int
    api: str
    arg_position: int
    matched_string: str
    klass: CallClass

    def to_tsv(self) -> str:
        return f"{self.code_offset}\t{self.api}\t{self.arg_position}\t{self.klass}\t{self.matched_string}"


_STR_RE = re.compile(r'^STR\s+(\d+)\s+"(.*)"$')
_INT_RE = re.compile(r"^[+-]?(0[xX][0-9a-fA-F]+|\d+)$")


def _strip_comment(line: str) -> str:
    # '#' inside the quoted text of a STR line is data, not a comment
    if line.lstrip().startswith("STR") and '"' in line:
        head, _, rest = line.partition('"')
        body, quote, tail = rest.rpartition('"')
        if quote:
            return head + '"' + body + '"' + tail.split("#", 1)[0]
    return line.split("#", 1)[0]


def parse_mock_binary(text: str, arity: Mapping[str, int] | None = None) -> MockBinary:
    arity = dict(API_ARITY if arity is None else arity)
    strings: dict[int, str] = {}
    code: list[Instruction] = []
    pushstr_lines: list[tuple[int, int]] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = _strip_comment(raw).strip()
        if not line:
            continue
        op, _, arg = line.partition(" ")
        arg = arg.strip()
        if op == "STR":
            m = _STR_RE.match(line)
            if not m:
                raise BinarySyntaxError(f"malformed STR statement: {raw!r}", lineno)
            index = int(m.group(1))
            if index in strings:
                raise BinarySyntaxError(f"duplicate string index {index}", lineno)
            strings[index] = m.group(2)
        elif op == "PUSHSTR":
            if not arg.isdigit():
                raise BinarySyntaxError(f"PUSHSTR needs a string index: {raw!r}", lineno)
            code.append(PushStr(int(arg)))
            pushstr_lines.append((int(arg), lineno))
        elif op == "PUSHINT":
            if not _INT_RE.match(arg):
                raise BinarySyntaxError(f"PUSHINT needs an integer: {raw!r}", lineno)
            code.append(PushInt(int(arg, 0)))
        elif op == "CALL":
            if not arg or " " in arg:
                raise BinarySyntaxError(f"CALL needs one api name: {raw!r}", lineno)
            if arg not in arity:
                raise UnknownApi(f"unknown api {arg!r}", lineno)
            code.append(Call(arg))
        else:
            raise BinarySyntaxError(f"unknown statement {op!r}", lineno)
    for index, lineno in pushstr_lines:
        if index not in strings:
            raise BadStringIndex(f"no string with index {index}", lineno)
    return MockBinary(strings, tuple(code), arity)


def classify_callsite(api: str, arity: Mapping[str, int] | None = None) -> CallClass:
    if api not in (API_ARITY if arity is None else arity):
        raise UnknownApi(f"unknown api {api!r}")
    if api in SERVICE_APIS:
        return CallClass.SERVICE_API
    if api in STRING_APIS:
        return CallClass.STRING_API
    return CallClass.OTHER


def scan_binary(binary: MockBinary, service_name: str) -> list[Occurrence]:
    """Find calls that take ``service_name`` (any ASCII casing) as an argument."""
    if not service_name:
        raise ValueError("service_name must be non-empty")
    target = ascii_fold(service_name)
    hits = {i for i, s in binary.strings.items() if ascii_fold(s) == target}

    # Only whether each pushed value is a hit matters, so track string indices.
    stack: list[int | None] = []
    since_call = 0
    found: list[Occurrence] = []
    for offset, ins in enumerate(binary.code):
        if isinstance(ins, Call):
            n = binary.arity[ins.api]
            if since_call < n:
                raise StackUnderflow(
                    f"offset {offset}: {ins.api} takes {n} args, {since_call} pushed"
                )
            args = stack[len(stack) - n:][::-1]
            del stack[len(stack) - n:]
            since_call = 0
            for pos, index in enumerate(args):
                if index is not None and index in hits:
                    found.append(
                        Occurrence(
                            offset,
                            ins.api,
                            pos,
                            binary.strings[index],
                            classify_callsite(ins.api, binary.arity),
                        )
                    )
        else:
            stack.append(ins.index if isinstance(ins, PushStr) else None)
            since_call += 1
    return found


def rewrite_runtime_arg(api: str, args: Iterable, original: str, duplicated: str) -> list:
    """Swap the original service name for the duplicated one in a call's arguments."""
    args = list(args)
    if classify_callsite(api) is CallClass.OTHER:
        return args
    return [
        duplicated if isinstance(a, str) and names_equal(a, original) else a
        for a in args
    ]


def hardcoded_binary(name: str, spelling: str | None = None) -> MockBinary:
    """A minimal service image that embeds ``name`` the way rpcss.dll does."""
    spelling = spelling or name.upper()
    return parse_mock_binary(
        f'STR 0 "{name}"\n'
        f'STR 1 "{spelling}"\n'
        "PUSHSTR 1\nPUSHINT 0\nCALL RtlInitUnicodeString\n"
        "PUSHINT 1\nPUSHSTR 1\nPUSHINT 0\nCALL RtlEqualUnicodeString\n"
        "PUSHINT 983551\nPUSHSTR 1\nPUSHINT 0\nCALL OpenServiceW\n"
        "PUSHINT 0\nPUSHINT 0\nPUSHSTR 1\nCALL RegisterServiceCtrlHandlerEx\n"
    )
