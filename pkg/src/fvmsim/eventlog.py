"""Ordered, JSON-Lines event log shared by every simulated component."""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field
from typing import Any


def _jsonable(value):
    if isinstance(value, enum.Enum):
        return _jsonable(value.value)
    if isinstance(value, bytes):
        return value.decode("utf-8", errors="backslashreplace")
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple, set, frozenset)):
        items = [_jsonable(v) for v in value]
        return sorted(items) if isinstance(value, (set, frozenset)) else items
    if value is None or isinstance(value, (str, int, float, bool)):
        return value
    return str(value)


@dataclass(frozen=True)
class Event:
    seq: int
    actor: str
    action: str
    detail: dict[str, Any]
    outcome: str

    def to_json(self) -> str:
        return json.dumps(
            {
                "seq": self.seq,
                "actor": self.actor,
                "action": self.action,
                "detail": self.detail,
                "outcome": self.outcome,
            },
            ensure_ascii=False,
        )


@dataclass
class EventLog:
    events: list[Event] = field(default_factory=list)

    def emit(self, actor: str, action: str, outcome: str = "ok", **detail) -> Event:
        event = Event(len(self.events) + 1, actor, action, _jsonable(detail), outcome)
        self.events.append(event)
        return event

    def __iter__(self):
        return iter(self.events)

    def __len__(self) -> int:
        return len(self.events)

    def select(self, action: str | None = None, actor: str | None = None) -> list[Event]:
        return [
            e
            for e in self.events
            if (action is None or e.action == action) and (actor is None or e.actor == actor)
        ]

    def to_jsonl(self) -> str:
        return "".join(e.to_json() + "\n" for e in self.events)

    def write(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.to_jsonl())
