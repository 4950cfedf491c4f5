from __future__ import annotations
import hashlib
import json
from dataclasses import dataclass
from typing import Any, Dict, Iterator, List, Optional

from forklab.host.clock import SimClock
from forklab.records import to_record


@dataclass(frozen=True, slots=True)
class Event:
    seq: int
    t: int
    kind: str
    data: Dict[str, Any]

    def to_record(self) -> Dict[str, Any]:
        return {"seq": self.seq, "t": self.t, "kind": self.kind, **self.data}

    def matches(self, kind: str, match: Dict[str, Any]) -> bool:
        if self.kind != kind:
            return False
        return all(self.data.get(k) == to_record(v) for k, v in match.items())


class EventLog:
    """Append-only record of everything a scenario does; the only source for verdicts."""

    def __init__(self, clock: Optional[SimClock] = None) -> None:
        self._clock = clock
        self._events: List[Event] = []

    def record(self, kind: str, **data: Any) -> Event:
        event = Event(
            seq=len(self._events),
            t=self._clock.now if self._clock else 0,
            kind=kind,
            data={k: to_record(v) for k, v in data.items()},
        )
        self._events.append(event)
        return event

    def find(self, kind: str, **match: Any) -> List[Event]:
        return [e for e in self._events if e.matches(kind, match)]

    def last(self, kind: str, **match: Any) -> Optional[Event]:
        for e in reversed(self._events):
            if e.matches(kind, match):
                return e
        return None

    def contains(self, kind: str, **match: Any) -> bool:
        return self.last(kind, **match) is not None

    def __iter__(self) -> Iterator[Event]:
        return iter(self._events)

    def __len__(self) -> int:
        return len(self._events)

    def to_records(self) -> List[Dict[str, Any]]:
        return [e.to_record() for e in self._events]

    def to_jsonl(self) -> bytes:
        lines = [json.dumps(r, separators=(",", ":"), ensure_ascii=True) for r in self.to_records()]
        return ("\n".join(lines) + "\n").encode("ascii") if lines else b""

    def digest(self) -> str:
        return hashlib.sha256(self.to_jsonl()).hexdigest()
