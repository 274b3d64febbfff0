"""Random mock-binary corpus with planted hard-coded service names.

The generator knows where it put every name, so the ground truth is a
by-product of construction and never comes from running the scanner.
Decoys (the name parked in the string table, pushed but never consumed,
or embedded in a longer string) make false positives observable.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path

from .binscan import (
    API_ARITY,
    Call,
    MockBinary,
    Occurrence,
    PushInt,
    PushStr,
    ascii_fold,
    classify_callsite,
)

_STEMS = ("RpcSS", "DcomLaunch", "W3SVC", "IISADMIN", "MySQL", "Spooler", "EventLog",
          "Netman", "Dhcp", "Dnscache", "LanmanServer", "Schedule", "SamSs", "Winmgmt")
_FILLER = ("ServiceMain", "Parameters", "ImagePath", "svchost.exe", "\\Device\\NamedPipe\\",
           "SYSTEM\\CurrentControlSet\\Services", "kernel32.dll", "%s: %d", "Global\\",
           "LocalSystem", "NT AUTHORITY", "DisplayName")
_APIS = sorted(API_ARITY)


@dataclass(frozen=True)
class CorpusEntry:
    name: str
    service: str
    source: str
    occurrences: tuple[Occurrence, ...]


def _casing(rng: random.Random, name: str) -> str:
    style = rng.randrange(4)
    if style == 0:
        return name
    if style == 1:
        return name.upper()
    if style == 2:
        return name.lower()
    return "".join(c.upper() if rng.random() < 0.5 else c.lower() for c in name)


def _program(rng: random.Random, index: int, planted: bool) -> CorpusEntry:
    service = f"{rng.choice(_STEMS)}{rng.randrange(100)}"
    folded = ascii_fold(service)

    strings: list[str] = []
    name_ids: list[int] = []
    for _ in range(rng.randint(1, 3)):
        name_ids.append(len(strings))
        strings.append(_casing(rng, service))
    filler_ids = []
    for word in rng.sample(_FILLER, rng.randint(2, 6)):
        filler_ids.append(len(strings))
        strings.append(word)
    for word in (f"{service}Helper", f"Global\\{service}", f"{service}-old"):
        if rng.random() < 0.5:
            filler_ids.append(len(strings))
            strings.append(_casing(rng, word))
    assert all(ascii_fold(strings[i]) != folded for i in filler_ids)

    # shuffle string indices so table order says nothing about use
    perm = list(range(len(strings)))
    rng.shuffle(perm)
    table = {perm[i]: s for i, s in enumerate(strings)}
    name_ids = [perm[i] for i in name_ids]
    filler_ids = [perm[i] for i in filler_ids]

    segments = rng.randint(2, 10)
    plant_at = set(rng.sample(range(segments), rng.randint(1, min(3, segments)))) if planted else set()

    code: list = []
    truth: list[Occurrence] = []
    for seg in range(segments):
        api = rng.choice(_APIS)
        arity = API_ARITY[api]
        args: list = []
        for _ in range(arity):
            if filler_ids and rng.random() < 0.4:
                args.append(PushStr(rng.choice(filler_ids)))
            else:
                args.append(PushInt(rng.randrange(0, 0x10000)))
        planted_pos = []
        if seg in plant_at:
            planted_pos = sorted(rng.sample(range(arity), rng.randint(1, arity)))
            for pos in planted_pos:
                args[pos] = PushStr(rng.choice(name_ids))
        # leftovers sit below this call's arguments and are never consumed
        for _ in range(rng.choice((0, 0, 0, 1, 2))):
            pool = name_ids + filler_ids
            code.append(PushStr(rng.choice(pool)) if rng.random() < 0.6 else PushInt(rng.randrange(16)))
        for ins in reversed(args):
            code.append(ins)
        offset = len(code)
        code.append(Call(api))
        klass = classify_callsite(api)
        for pos in planted_pos:
            truth.append(Occurrence(offset, api, pos, table[args[pos].index], klass))

    binary = MockBinary(table, tuple(code))
    name = f"prog{index:04d}"
    source = f"# {name}: service {service}\n" + binary.to_source()
    return CorpusEntry(name, service, source, tuple(truth))


def generate_corpus(seed: int, n: int, hardcoded_fraction: float) -> list[CorpusEntry]:
    if not 0 <= hardcoded_fraction <= 1:
        raise ValueError("hardcoded_fraction must be within [0, 1]")
    if n < 0:
        raise ValueError("n must be non-negative")
    rng = random.Random(seed)
    count = math.ceil(Fraction(str(float(hardcoded_fraction))) * n)
    planted = set(rng.sample(range(n), count))
    return [_program(rng, i, i in planted) for i in range(n)]


def write_corpus(entries: list[CorpusEntry], out_dir) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    manifest = []
    for e in entries:
        (out / f"{e.name}.mock").write_text(e.source, encoding="utf-8")
        (out / f"{e.name}.truth.tsv").write_text(
            "".join(o.to_tsv() + "\n" for o in e.occurrences), encoding="utf-8"
        )
        manifest.append(f"{e.name}.mock\t{e.service}\t{len(e.occurrences)}\n")
    path = out / "manifest.tsv"
    path.write_text("".join(manifest), encoding="utf-8")
    return path
