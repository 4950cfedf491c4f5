from forklab.host.clock import SimClock
from forklab.host.events import Event, EventLog
from forklab.host.script import (
    AttackKind,
    AttackOutcome,
    AttackScript,
    Cell,
    Evidence,
    EvidenceKind,
    parse_script,
)

__all__ = [
    "AttackKind",
    "AttackOutcome",
    "AttackScript",
    "Cell",
    "Event",
    "EventLog",
    "Evidence",
    "EvidenceKind",
    "SimClock",
    "parse_script",
]
