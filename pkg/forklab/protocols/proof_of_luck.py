"""
Proof of luck: every platform draws one luck value per round, and the
platform's monotonic counter makes sure only one instance gets to use it.
"""
from __future__ import annotations
import logging
from dataclasses import dataclass
from typing import Any, Dict, List, Optional, Set, Tuple, Union

from forklab.enclave import codec
from forklab.enclave.program import EnclaveProgram, ProgramFault, Rejected
from forklab.enclave.runtime import AttestationReport, EnclaveContext, EnclaveRuntime
from forklab.errors import ValidationFailed
from forklab.host.adversary import Host
from forklab.host.script import (
    AdvanceTime,
    AttackKind,
    AttackOutcome,
    AttackScript,
    Clone,
    Deliver,
    Evidence,
    EvidenceKind,
    Invoke,
    Repeat,
    Restart,
    SubmitTx,
)
from forklab.ledger.chain import Block, Ledger, Tx, TxValidator
from forklab.protocols.base import VULNERABLE, ProtocolWorld

logger = logging.getLogger(__name__)

PROOF_KIND = "pol.proof"
POL = "pol-enclave"


@dataclass(frozen=True, slots=True)
class StartRound:
    round_no: int
    head_hash: bytes
    head_height: int


@dataclass(frozen=True, slots=True)
class FinishRound:
    pass


@dataclass(frozen=True, slots=True)
class Started:
    round_no: int
    counter: int


@dataclass(frozen=True, slots=True)
class PoLProof:
    luck: float
    round_no: int
    block_hash: bytes
    platform: str
    report: AttestationReport

    def body(self) -> bytes:
        return proof_body(self.luck, self.round_no, self.block_hash, self.platform)

    def to_record(self) -> Dict[str, Any]:
        return {"luck": round(self.luck, 12), "round": self.round_no, "platform": self.platform,
                "block_hash": self.block_hash.hex()[:16]}


def proof_body(luck: float, round_no: int, block_hash: bytes, platform: str) -> bytes:
    return codec.pack_fields("pol-proof", luck, round_no, block_hash, platform)


def _idle() -> Dict[str, Any]:
    return {"round": None, "expected": None, "luck": None, "head": None}


def pol_program() -> EnclaveProgram:
    """
    Start increments the platform counter and remembers the value it got.
    Finish emits a proof only if nobody incremented the counter since.
    """

    def step(ctx: EnclaveContext, state: Dict[str, Any], msg: Any) -> Tuple[Dict[str, Any], Any]:
        if isinstance(msg, StartRound):
            counter = ctx.increment_counter()
            new = {"round": msg.round_no, "expected": counter, "luck": ctx.uniform(), "head": msg.head_hash}
            return new, Started(msg.round_no, counter)
        if isinstance(msg, FinishRound):
            if state["round"] is None:
                raise ProgramFault("NoRound", "finish without start")
            current = ctx.read_counter()
            if current != state["expected"]:
                raise ProgramFault("CounterMismatch", f"expected {state['expected']}, counter is {current}")
            body = proof_body(state["luck"], state["round"], state["head"], ctx.platform_id)
            proof = PoLProof(state["luck"], state["round"], state["head"], ctx.platform_id, ctx.attest(ctx.crypto.hash(body)))
            return _idle(), proof
        raise ProgramFault("UnknownMessage", type(msg).__name__)

    return EnclaveProgram(
        name=POL,
        init=_idle,
        step=step,
        deterministic=False,
        uses_randomness=True,
        persistent_fields=("round", "expected", "luck", "head"),
        checkpoint=True,
    )


def pol_generate(host: Host, alias: str, head: Block, round_no: int) -> Union[PoLProof, Rejected]:
    """One honest round on `alias`: start bound to `head`, then finish."""
    started = host.deliver(alias, StartRound(round_no, head.hash, head.height))
    if isinstance(started, Rejected):
        return started
    return host.deliver(alias, FinishRound())


class PoLValidator(TxValidator):
    """One proof per platform per round, bound to the current head."""

    def __init__(self, runtime: EnclaveRuntime) -> None:
        self.runtime = runtime
        self._seen: Set[Tuple[str, bytes]] = set()

    def validate(self, tx: Tx, ledger: Ledger) -> None:
        proof = tx.payload.get("proof")
        if not isinstance(proof, PoLProof):
            raise ValidationFailed("Malformed", "no proof")
        if proof.block_hash != ledger.head.hash:
            raise ValidationFailed("StaleAnchor", f"proof bound to {proof.block_hash.hex()[:12]}")
        report = proof.report
        if (
            not self.runtime.verify_attestation(report)
            or self.runtime.program_name(report.measurement) != POL
            or report.report_data[:32] != self.runtime.crypto.hash(proof.body())
        ):
            raise ValidationFailed("AttestationFailed", "proof not produced by the luck enclave")
        if (proof.platform, proof.block_hash) in self._seen:
            raise ValidationFailed("DuplicateProof", f"{proof.platform} already proved this round")

    def on_accept(self, tx: Tx, ledger: Ledger) -> None:
        proof = tx.payload["proof"]
        self._seen.add((proof.platform, proof.block_hash))


class ProofOfLuckWorld(ProtocolWorld):
    """The adversary owns platform P1 and may start any number of luck enclaves on it."""

    name = "ProofOfLuck"
    title = "Proof of luck (counter-guarded)"
    variants = (VULNERABLE,)
    defaults = {"clones": 2, "rounds": 8, "counter_enabled": True}

    def setup(self) -> None:
        self.runtime.add_platform("P1", counter_enabled=bool(self.params["counter_enabled"]))
        self.register(pol_program())
        self.ledger.register_tx_validator(PROOF_KIND, PoLValidator(self.runtime))
        self.host.launch("L0", "P1", POL)
        self.host.advance_time(self.ledger.mode.block_interval_ms)

    # --- vocabulary ---

    def msg_start(self, lag: int = 0) -> StartRound:
        chain = self.ledger.canonical_chain()
        head = chain[max(0, len(chain) - 1 - int(lag))]
        return StartRound(head.height, head.hash, head.height)

    def msg_finish(self) -> FinishRound:
        return FinishRound()

    def to_txs(self, value: Any, sender: str) -> List[Tx]:
        if isinstance(value, PoLProof):
            return [Tx(PROOF_KIND, "operator", {"proof": value})]
        return []

    def op_close_round(self, outputs: Optional[List[str]] = None) -> int:
        names = outputs or [n for n in self.host.outputs if n.startswith("o")]
        proofs = [n for n in names if n in self.host.outputs and isinstance(self.host.value(n), PoLProof)]
        self.log.record("pol.round", height=self.ledger.height, proofs=len(proofs), instances=len(names))
        for n in names:
            self.host.outputs.pop(n, None)
        return len(proofs)

    # --- scripts ---

    def default_script(self, kind: AttackKind) -> AttackScript:
        interval = self.ledger.mode.block_interval_ms
        if kind == AttackKind.ROLLBACK:
            actions = (
                Deliver("L0", "start", into="started"),
                Deliver("L0", "finish", into="honest"),
                SubmitTx(("honest",)),
                AdvanceTime(interval),
                Deliver("L0", "start", into="restarted"),
                Restart("L0", "first"),
                Deliver("L0", "finish", into="replayed"),
                SubmitTx(("replayed",)),
                Deliver("L0", "start", {"lag": 1}, into="stale_start"),
                Deliver("L0", "finish", into="stale"),
                SubmitTx(("stale",)),
            )
            return AttackScript(actions, kind)
        clones = int(self.params["clones"]) if kind == AttackKind.CLONING else 1
        names = [f"L{i}" for i in range(clones)]
        setup = tuple(Clone("L0", n, "none") for n in names[1:])
        outputs = tuple(f"o{i}" for i in range(clones))
        body = (
            *(Deliver(n, "start") for n in names),
            *(Deliver(n, "finish", into=o) for n, o in zip(names, outputs)),
            SubmitTx(outputs),
            Invoke("close_round", {"outputs": list(outputs)}),
            AdvanceTime(interval),
        )
        return AttackScript((*setup, Repeat(int(self.params["rounds"]), body)), kind)

    def judge(self, kind: AttackKind) -> AttackOutcome:
        evidence = self.rejection_evidence({"CounterMismatch": EvidenceKind.COUNTER_MISMATCH}, source="enclave.reject")
        evidence += self.rejection_evidence({"StaleAnchor": EvidenceKind.STALE_ANCHOR})
        if kind == AttackKind.ROLLBACK:
            replayed = [
                e for e in self.log.find("host.submit", accepted=True) if e.data.get("output") in ("replayed", "stale")
            ]
            if replayed:
                ev = Evidence(EvidenceKind.STALE_RESPONSE_ACCEPTED, {"count": len(replayed)},
                              tuple(e.seq for e in replayed[:16]))
                return AttackOutcome(kind, True, (ev, *evidence))
            return AttackOutcome(kind, False, tuple(evidence))
        rounds = self.log.find("pol.round")
        extra = [e for e in rounds if e.data["proofs"] > 1]
        if extra:
            ev = Evidence(EvidenceKind.PROPOSER_ADVANTAGE, {"rounds_with_extra_proofs": len(extra)},
                          tuple(e.seq for e in extra[:16]))
            return AttackOutcome(kind, True, (ev, *evidence))
        return AttackOutcome(kind, False, tuple(evidence))


def proofs_per_round(world: ProofOfLuckWorld) -> List[int]:
    return [e.data["proofs"] for e in world.log.find("pol.round")]
