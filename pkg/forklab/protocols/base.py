from __future__ import annotations
import logging
from abc import ABC, abstractmethod
from typing import Any, Callable, ClassVar, Dict, List, Mapping, Optional, Sequence, Tuple

from forklab.enclave.program import EnclaveProgram, Rejected
from forklab.errors import ConfigError, ScriptError
from forklab.host.script import AttackKind, AttackOutcome, AttackScript, Evidence, EvidenceKind
from forklab.ledger.chain import Tx
from forklab.simulation import Simulation

logger = logging.getLogger(__name__)

VULNERABLE = "vulnerable"
PATCHED = "patched"


class ProtocolWorld(ABC):
    """
    One case-study protocol set up inside a simulation: its programs,
    honest parties, built-in attack scripts and attack verdicts.

    Script vocabulary is looked up by prefix: `msg_<name>` builds a
    message, `op_<name>` is an honest party's verb, `pred_<name>`,
    `mut_<name>` and `key_<name>` serve select/modify/sort actions.
    """

    name: ClassVar[str]
    title: ClassVar[str] = ""
    variants: ClassVar[Tuple[str, ...]] = (VULNERABLE,)
    consensus: ClassVar[str] = "final"
    defaults: ClassVar[Dict[str, Any]] = {}
    randomized: ClassVar[bool] = False

    def __init__(self, sim: Simulation, variant: str = VULNERABLE, params: Optional[Mapping[str, Any]] = None) -> None:
        if variant not in self.variants:
            raise ConfigError("variant", f"{self.name} has no {variant!r} variant (choose from {list(self.variants)})")
        params = dict(params or {})
        unknown = sorted(set(params) - set(self.defaults))
        if unknown:
            raise ConfigError(f"params.{unknown[0]}", f"unknown parameter for {self.name}")
        self.params: Dict[str, Any] = {**self.defaults, **params}
        self.variant = variant
        self.sim = sim
        self.host = sim.host
        self.ledger = sim.ledger
        self.log = sim.log
        self.crypto = sim.crypto
        self.runtime = sim.runtime
        self.rng = sim.rng

    @property
    def patched(self) -> bool:
        return self.variant == PATCHED

    # --- lifecycle ---

    @abstractmethod
    def setup(self) -> None:
        """Register programs, launch honest instances, prepare the ledger."""

    @abstractmethod
    def default_script(self, kind: AttackKind) -> AttackScript:
        ...

    @abstractmethod
    def judge(self, kind: AttackKind) -> AttackOutcome:
        """Decide the attack from the event log alone."""

    def register(self, program: EnclaveProgram) -> str:
        self.runtime.register_program(program)
        return program.name

    # --- script vocabulary ---

    def _lookup(self, prefix: str, name: str) -> Callable[..., Any]:
        fn = getattr(self, f"{prefix}_{name}", None)
        if fn is None or not callable(fn):
            raise ScriptError(f"{self.name} has no {prefix} named {name!r}")
        return fn

    def message(self, name: str, args: Mapping[str, Any]) -> Any:
        resolved = {k: self._resolve(v) for k, v in args.items()}
        return self._lookup("msg", name)(**resolved)

    def operation(self, name: str) -> Callable[..., Any]:
        return self._lookup("op", name)

    def predicate(self, name: str) -> Callable[[Any, List[Any]], bool]:
        return self._lookup("pred", name)

    def mutation(self, name: str) -> Callable[[Any], Any]:
        return self._lookup("mut", name)

    def sort_key(self, name: str) -> Callable[[Any], Any]:
        return self._lookup("key", name)

    def transactions(self, value: Any, sender: str) -> List[Tx]:
        if isinstance(value, Tx):
            return [value]
        if isinstance(value, (list, tuple)) and all(isinstance(v, Tx) for v in value):
            return list(value)
        to_txs = getattr(self, "to_txs", None)
        if to_txs is None:
            raise ScriptError(f"{self.name} cannot turn {type(value).__name__} into transactions")
        return to_txs(value, sender)

    def _resolve(self, value: Any) -> Any:
        """Arguments written as `$name` refer to captured outputs."""
        if isinstance(value, str) and value.startswith("$"):
            return self.host.value(value[1:])
        return value

    @classmethod
    def vocabulary(cls) -> Dict[str, List[str]]:
        out: Dict[str, List[str]] = {}
        for prefix in ("msg", "op", "pred", "mut", "key"):
            out[prefix] = sorted(n[len(prefix) + 1:] for n in dir(cls) if n.startswith(prefix + "_"))
        return out

    # --- verdict helpers ---

    def record_round(self, adversary_won: bool, baseline_won: bool, **data: Any) -> None:
        self.log.record("round.result", adversary_won=bool(adversary_won), baseline_won=bool(baseline_won), **data)

    def round_counts(self) -> Tuple[int, int, int]:
        """(rounds, adversary wins, baseline wins) from the log."""
        rounds = self.log.find("round.result")
        return (
            len(rounds),
            sum(1 for e in rounds if e.data["adversary_won"]),
            sum(1 for e in rounds if e.data["baseline_won"]),
        )

    def judge_rounds(self, kind: AttackKind, extra: Sequence[Evidence] = ()) -> AttackOutcome:
        """Selection advantage: the adversary won more rounds than its original instance alone would have."""
        rounds = self.log.find("round.result")
        n, won, base = self.round_counts()
        if n == 0:
            return AttackOutcome(kind, False, tuple(extra))
        advantage = [e.seq for e in rounds if e.data["adversary_won"] and not e.data["baseline_won"]]
        evidence = Evidence(
            EvidenceKind.PROPOSER_ADVANTAGE,
            {"p_measured": won / n, "p_baseline": base / n, "rounds": n},
            tuple(advantage[:16]),
        )
        return AttackOutcome(kind, won > base, (evidence, *extra))

    def rejection_evidence(self, mapping: Mapping[str, EvidenceKind], *, source: str = "ledger.reject") -> List[Evidence]:
        """Group logged rejections (`reason` for the ledger, `code` for enclaves) into evidence."""
        key = "reason" if source == "ledger.reject" else "code"
        grouped: Dict[EvidenceKind, List[int]] = {}
        for e in self.log.find(source):
            kind = mapping.get(str(e.data.get(key)))
            if kind is not None:
                grouped.setdefault(kind, []).append(e.seq)
        return [Evidence(k, {"count": len(seqs)}, tuple(seqs[:16])) for k, seqs in grouped.items()]

    @staticmethod
    def is_rejected(value: Any) -> bool:
        return isinstance(value, Rejected)
