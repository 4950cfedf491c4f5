"""
Adversary scripts: host actions, conditions and attack outcomes.

Actions are plain frozen dataclasses so a script written in code and one
loaded from a scenario file are the same value.
"""
from __future__ import annotations
from dataclasses import dataclass, field, fields
from enum import Enum
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple, Type, Union

from forklab.errors import ScriptError
from forklab.records import to_record


class AttackKind(str, Enum):
    ROLLBACK = "rollback"
    CLONING = "cloning"
    NONE = "none"


def normalize_attack_kind(raw: Union[str, AttackKind, None]) -> AttackKind:
    if isinstance(raw, AttackKind):
        return raw
    cleaned = (raw or "none").strip().lower()
    try:
        return AttackKind(cleaned)
    except ValueError:
        raise ScriptError(f"unknown attack kind: {raw!r}") from None


class EvidenceKind(str, Enum):
    STALE_RESPONSE_ACCEPTED = "StaleResponseAccepted"
    DIVERGENT_RESPONSES = "DivergentResponses"
    PROPOSER_ADVANTAGE = "ProposerAdvantage"
    DECRYPTION_FAILED = "DecryptionFailed"
    VIEW_MISMATCH_DETECTED = "ViewMismatchDetected"
    REJECT_STALE = "RejectStale"
    REJECT_FORK_MISMATCH = "RejectForkMismatch"
    STATE_MISMATCH = "StateMismatch"
    COUNTER_MISMATCH = "CounterMismatch"
    STALE_ANCHOR = "StaleAnchor"
    WRONG_PREDECESSOR = "WrongPredecessor"
    ADDRESS_MISMATCH = "AddressMismatch"
    BROKEN_CHAIN = "BrokenChain"
    UNREGISTERED_EPHEMERAL_ID = "UnregisteredEphemeralID"
    MISSED_HEARTBEAT = "MissedHeartbeat"
    NO_ACK = "NoAck"
    NOT_APPLICABLE = "NotApplicable"


@dataclass(frozen=True, slots=True)
class Evidence:
    kind: EvidenceKind
    details: Mapping[str, Any] = field(default_factory=dict)
    events: Tuple[int, ...] = ()

    def to_record(self) -> Dict[str, Any]:
        return {"kind": self.kind.value, "details": to_record(dict(self.details)), "events": list(self.events)}


class Cell(str, Enum):
    SUCCEEDS = "Succeeds"
    FAILS = "Fails"
    NOT_APPLICABLE = "NotApplicable"


@dataclass(frozen=True, slots=True)
class AttackOutcome:
    attack_kind: AttackKind
    succeeded: bool
    evidence: Tuple[Evidence, ...] = ()
    applicable: bool = True

    def __post_init__(self) -> None:
        if self.succeeded and not self.evidence:
            raise ValueError("a successful attack needs evidence")
        if self.succeeded and not self.applicable:
            raise ValueError("an inapplicable attack cannot succeed")

    @property
    def cell(self) -> Cell:
        if not self.applicable:
            return Cell.NOT_APPLICABLE
        return Cell.SUCCEEDS if self.succeeded else Cell.FAILS

    @classmethod
    def not_applicable(cls, kind: AttackKind, reason: str) -> "AttackOutcome":
        return cls(kind, False, (Evidence(EvidenceKind.NOT_APPLICABLE, {"reason": reason}),), applicable=False)

    def evidence_summary(self) -> str:
        return ", ".join(sorted({e.kind.value for e in self.evidence}))

    def to_record(self) -> Dict[str, Any]:
        return {
            "attack_kind": self.attack_kind.value,
            "succeeded": self.succeeded,
            "applicable": self.applicable,
            "cell": self.cell.value,
            "evidence": [e.to_record() for e in self.evidence],
        }


# --- actions ---

@dataclass(frozen=True, slots=True)
class Condition:
    """Run the action only if the log already holds a matching event."""
    event: str
    match: Mapping[str, Any] = field(default_factory=dict)
    absent: bool = False


@dataclass(frozen=True, slots=True)
class Launch:
    alias: str
    platform: str
    program: str
    when: Optional[Condition] = None


@dataclass(frozen=True, slots=True)
class Restart:
    alias: str
    blob: str = "none"
    when: Optional[Condition] = None


@dataclass(frozen=True, slots=True)
class Clone:
    source: str
    alias: str
    from_blob: str = "none"
    when: Optional[Condition] = None


@dataclass(frozen=True, slots=True)
class Isolate:
    alias: str
    when: Optional[Condition] = None


@dataclass(frozen=True, slots=True)
class Unisolate:
    alias: str
    replay: bool = True
    when: Optional[Condition] = None


@dataclass(frozen=True, slots=True)
class Deliver:
    to: str
    message: str
    args: Mapping[str, Any] = field(default_factory=dict)
    into: Optional[str] = None
    when: Optional[Condition] = None


@dataclass(frozen=True, slots=True)
class Drop:
    output: str
    when: Optional[Condition] = None


@dataclass(frozen=True, slots=True)
class Modify:
    output: str
    mutation: str
    into: Optional[str] = None
    when: Optional[Condition] = None


@dataclass(frozen=True, slots=True)
class SelectOutput:
    candidates: Tuple[str, ...]
    predicate: str
    into: str
    fallback: Optional[str] = None
    when: Optional[Condition] = None


@dataclass(frozen=True, slots=True)
class SubmitTx:
    outputs: Tuple[str, ...]
    first_accepted: bool = False
    sort_by: Optional[str] = None
    into: Optional[str] = None
    when: Optional[Condition] = None


@dataclass(frozen=True, slots=True)
class AdvanceTime:
    dt: int
    when: Optional[Condition] = None


@dataclass(frozen=True, slots=True)
class Invoke:
    """A protocol verb run by an honest party (client, relayer, gatekeeper)."""
    op: str
    args: Mapping[str, Any] = field(default_factory=dict)
    into: Optional[str] = None
    when: Optional[Condition] = None


@dataclass(frozen=True, slots=True)
class Adopt:
    """Rebind `alias` to whichever instance produced `output`; the other one is dropped."""
    alias: str
    output: str
    when: Optional[Condition] = None


@dataclass(frozen=True, slots=True)
class Repeat:
    times: int
    actions: Tuple["HostAction", ...]
    when: Optional[Condition] = None


HostAction = Union[
    Launch, Restart, Clone, Isolate, Unisolate, Deliver, Drop, Modify,
    SelectOutput, SubmitTx, AdvanceTime, Invoke, Adopt, Repeat,
]

ACTIONS: Dict[str, Type[Any]] = {
    "launch": Launch,
    "restart": Restart,
    "clone": Clone,
    "isolate": Isolate,
    "unisolate": Unisolate,
    "deliver": Deliver,
    "drop": Drop,
    "modify": Modify,
    "select_output": SelectOutput,
    "submit_tx": SubmitTx,
    "advance_time": AdvanceTime,
    "invoke": Invoke,
    "adopt": Adopt,
    "repeat": Repeat,
}

_ACTION_NAMES = {cls: name for name, cls in ACTIONS.items()}


def action_name(action: HostAction) -> str:
    return _ACTION_NAMES[type(action)]


@dataclass(frozen=True, slots=True)
class AttackScript:
    actions: Tuple[HostAction, ...]
    attack_kind: AttackKind = AttackKind.NONE

    def __iter__(self):
        return iter(self.actions)

    def __len__(self) -> int:
        return len(self.actions)


def _parse_condition(raw: Any, path: str) -> Optional[Condition]:
    if raw is None:
        return None
    if not isinstance(raw, Mapping) or "event" not in raw:
        raise ScriptError(f"{path}.when: expected a mapping with an 'event' key")
    unknown = set(raw) - {"event", "match", "absent"}
    if unknown:
        raise ScriptError(f"{path}.when: unknown fields {sorted(unknown)}")
    return Condition(event=str(raw["event"]), match=dict(raw.get("match") or {}), absent=bool(raw.get("absent", False)))


def parse_action(raw: Any, path: str = "script[0]") -> HostAction:
    """
    Build one action from its scenario-file form, e.g.
    `{"clone": {"source": "W", "alias": "W2"}}`.
    """
    if not isinstance(raw, Mapping) or len(raw) != 1:
        raise ScriptError(f"{path}: each action is a single-key mapping")
    (name, body), = raw.items()
    cls = ACTIONS.get(str(name))
    if cls is None:
        raise ScriptError(f"{path}: unknown action {name!r}")
    body = dict(body or {})
    allowed = {f.name for f in fields(cls)}
    unknown = set(body) - allowed
    if unknown:
        raise ScriptError(f"{path}.{name}: unknown fields {sorted(unknown)}")
    body["when"] = _parse_condition(body.get("when"), f"{path}.{name}")
    if cls is Repeat:
        nested = body.get("actions") or []
        body["actions"] = tuple(parse_action(a, f"{path}.repeat.actions[{i}]") for i, a in enumerate(nested))
    for key in ("candidates", "outputs"):
        if key in body:
            value = body[key]
            body[key] = tuple(value) if isinstance(value, (list, tuple)) else (value,)
    try:
        return cls(**body)
    except TypeError as e:
        raise ScriptError(f"{path}.{name}: {e}") from None


def parse_script(raw: Sequence[Any], attack_kind: Union[str, AttackKind, None] = None) -> AttackScript:
    actions: List[HostAction] = [parse_action(a, f"script[{i}]") for i, a in enumerate(raw)]
    return AttackScript(tuple(actions), normalize_attack_kind(attack_kind))
