"""
Proof of useful work: a stateless miner enclave that occasionally turns
finished work into a block proposal.
"""
from __future__ import annotations
import logging
from dataclasses import dataclass
from enum import Enum
from typing import Any, Dict, List, Optional, Tuple, Union

from forklab import rng as rngs
from forklab.enclave import codec
from forklab.enclave.crypto import CryptoProvider
from forklab.enclave.program import EnclaveProgram, ProgramFault
from forklab.enclave.runtime import AttestationReport, EnclaveContext, EnclaveRuntime
from forklab.errors import ValidationFailed
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
    SelectOutput,
    SubmitTx,
)
from forklab.ledger.chain import Block, Ledger, Tx, TxValidator
from forklab.mitigations.ephemeral import (
    EphemeralIdPolicy,
    EphemeralIdRegistry,
    REGISTER_KIND,
    Registration,
    ephemeral_register,
    make_registration,
)
from forklab.mitigations.stateless import stateless_wrap
from forklab.protocols.base import PATCHED, VULNERABLE, ProtocolWorld

logger = logging.getLogger(__name__)

PROOF_KIND = "pouw.proof"
MINER = "pouw-miner"


class Direction(str, Enum):
    SUCCEED_IF_BELOW = "SucceedIfBelow"
    SUCCEED_IF_ABOVE = "SucceedIfAbove"


def threshold(diff: float, n: int) -> float:
    """t = 1 - (1 - diff)^n"""
    if n < 0:
        raise ValueError("instruction count must be non-negative")
    return 1.0 - (1.0 - diff) ** n


@dataclass(frozen=True, slots=True)
class PoUwConfig:
    diff: float
    direction: Direction = Direction.SUCCEED_IF_BELOW

    def __post_init__(self) -> None:
        if not 0.0 < self.diff < 1.0:
            raise ValueError("diff must lie in (0, 1)")

    def threshold(self, n: int) -> float:
        return threshold(self.diff, n)

    def succeeds(self, r: float, n: int) -> bool:
        t = self.threshold(n)
        if self.direction == Direction.SUCCEED_IF_BELOW:
            return r <= t
        return r > t


@dataclass(frozen=True, slots=True)
class Task:
    task_id: str
    instructions: int


@dataclass(frozen=True, slots=True)
class Attempt:
    task: Task
    head_hash: bytes
    head_height: int


@dataclass(frozen=True, slots=True)
class RegisterMiner:
    role: str
    supersedes: bool = False


@dataclass(frozen=True, slots=True)
class PoUwProof:
    out: bytes
    r: float
    block_hash: bytes
    task_id: str
    instructions: int
    report: AttestationReport
    signer: Optional[bytes] = None
    signature: bytes = b""

    def body(self) -> bytes:
        return proof_body(self.out, self.r, self.block_hash, self.task_id, self.instructions)

    def to_record(self) -> Dict[str, Any]:
        return {"r": round(self.r, 12), "block_hash": self.block_hash.hex()[:16], "task": self.task_id,
                "signer": self.signer.hex()[:16] if self.signer else None}


@dataclass(frozen=True, slots=True)
class NoLuck:
    r: float
    block_hash: bytes


def proof_body(out: bytes, r: float, block_hash: bytes, task_id: str, n: int) -> bytes:
    return codec.pack_fields("pouw-proof", out, r, block_hash, task_id, n)


def pouw_attempt(ctx: EnclaveContext, config: PoUwConfig, task: Task, head_hash: bytes) -> Union[PoUwProof, NoLuck]:
    """Run the task, draw r, and propose only if r clears the task's threshold."""
    r = ctx.uniform()
    if not config.succeeds(r, task.instructions):
        return NoLuck(r, head_hash)
    out = ctx.crypto.hash(codec.pack_fields(task.task_id, task.instructions))
    body = proof_body(out, r, head_hash, task.task_id, task.instructions)
    report = ctx.attest(ctx.crypto.hash(body))
    signer = signature = None
    if ctx.ephemeral is not None:
        signer = ctx.ephemeral.signing.public
        signature = ctx.crypto.sign(ctx.ephemeral.signing.secret, body)
    return PoUwProof(out, r, head_hash, task.task_id, task.instructions, report, signer, signature or b"")


def miner_program(config: PoUwConfig, ephemeral: bool = False) -> EnclaveProgram:
    def init() -> Dict[str, Any]:
        return {}

    def step(ctx: EnclaveContext, state: Dict[str, Any], msg: Any) -> Tuple[Dict[str, Any], Any]:
        if isinstance(msg, Attempt):
            return state, pouw_attempt(ctx, config, msg.task, msg.head_hash)
        if isinstance(msg, RegisterMiner):
            return state, make_registration(ctx, msg.role, msg.supersedes)
        raise ProgramFault("UnknownMessage", type(msg).__name__)

    program = EnclaveProgram(
        name=MINER,
        init=init,
        step=step,
        params={"diff": config.diff, "direction": config.direction.value},
        deterministic=False,
        uses_randomness=True,
        ephemeral_keys=ephemeral,
    )
    return stateless_wrap(program)


class PoUwValidator(TxValidator):
    """Nodes accept a proof only for the current head, from the miner program, once per block."""

    def __init__(
        self,
        config: PoUwConfig,
        crypto: CryptoProvider,
        runtime: EnclaveRuntime,
        registry: Optional[EphemeralIdRegistry] = None,
    ) -> None:
        self.config = config
        self.crypto = crypto
        self.runtime = runtime
        self.registry = registry
        self._claimed: set[bytes] = set()

    def validate(self, tx: Tx, ledger: Ledger) -> None:
        proof = tx.payload.get("proof")
        if not isinstance(proof, PoUwProof):
            raise ValidationFailed("Malformed", "no proof")
        if proof.block_hash != ledger.head.hash:
            raise ValidationFailed("StaleAnchor", f"proof bound to {proof.block_hash.hex()[:12]}")
        if not self.config.succeeds(proof.r, proof.instructions):
            raise ValidationFailed("NoLuck", f"r={proof.r:.4f}")
        body = proof.body()
        report = proof.report
        if (
            not self.runtime.verify_attestation(report)
            or self.runtime.program_name(report.measurement) != MINER
            or report.report_data[:32] != self.crypto.hash(body)
        ):
            raise ValidationFailed("AttestationFailed", "proof not produced by the miner program")
        if self.registry is not None:
            if proof.signer is None or not self.registry.is_registered(proof.signer):
                raise ValidationFailed("UnregisteredEphemeralID", "proof signer is not a registered miner")
            if not self.crypto.verify(proof.signer, body, proof.signature):
                raise ValidationFailed("BadSignature", "proof signature")
        if proof.block_hash in self._claimed:
            raise ValidationFailed("AlreadyProposed", "a proof for this head is pending")

    def on_accept(self, tx: Tx, ledger: Ledger) -> None:
        self._claimed.add(tx.payload["proof"].block_hash)


class PoUwWorld(ProtocolWorld):
    """Adversary runs `clones` miners on one platform and submits whichever proof it likes."""

    name = "PoUW"
    title = "Proof of useful work (REM-style miner)"
    variants = (VULNERABLE, PATCHED)
    randomized = True
    defaults = {
        "diff": 0.2,
        "instructions": 1,
        "direction": Direction.SUCCEED_IF_BELOW.value,
        "clones": 2,
        "rounds": 64,
    }

    def setup(self) -> None:
        self.config = PoUwConfig(float(self.params["diff"]), Direction(self.params["direction"]))
        self.task = Task("task-0", int(self.params["instructions"]))
        self.runtime.add_platform("P1")
        self.register(miner_program(self.config, ephemeral=self.patched))
        self.registry: Optional[EphemeralIdRegistry] = None
        if self.patched:
            self.registry = EphemeralIdRegistry(self.crypto, self.runtime.verify_attestation)
            self.ledger.register_tx_validator(REGISTER_KIND, self.registry)
        self.ledger.register_tx_validator(
            PROOF_KIND, PoUwValidator(self.config, self.crypto, self.runtime, self.registry)
        )
        self.host.launch("M0", "P1", MINER)
        if self.patched:
            reg = self.host.deliver("M0", RegisterMiner("miner:P1"))
            ephemeral_register(EphemeralIdPolicy(), self.ledger, reg, sender="operator")
        self.host.advance_time(self.ledger.mode.block_interval_ms)

    # --- vocabulary ---

    def msg_attempt(self, lag: int = 0) -> Attempt:
        chain = self.ledger.canonical_chain()
        head = chain[max(0, len(chain) - 1 - int(lag))]
        return Attempt(self.task, head.hash, head.height)

    def msg_register(self, role: str = "miner:P1", supersedes: bool = False) -> RegisterMiner:
        return RegisterMiner(role, supersedes)

    def pred_has_proof(self, candidate: Any, candidates: List[Any]) -> bool:
        return isinstance(candidate, PoUwProof)

    def to_txs(self, value: Any, sender: str) -> List[Tx]:
        if isinstance(value, PoUwProof):
            return [Tx(PROOF_KIND, "operator", {"proof": value})]
        if isinstance(value, Registration):
            return [Tx(REGISTER_KIND, "operator", {"registration": value})]
        return []

    def op_close_round(self, baseline: str = "o0", accepted: str = "accepted") -> bool:
        won = accepted in self.host.outputs
        base = baseline in self.host.outputs and isinstance(self.host.value(baseline), PoUwProof)
        self.host.outputs.pop(accepted, None)
        self.record_round(won, base)
        return won

    # --- scripts ---

    def default_script(self, kind: AttackKind) -> AttackScript:
        interval = self.ledger.mode.block_interval_ms
        rounds = int(self.params["rounds"])
        if kind == AttackKind.ROLLBACK:
            body = (
                Deliver("M0", "attempt", into="fresh"),
                SubmitTx(("fresh",)),
                AdvanceTime(interval),
                Restart("M0", "latest"),
                Deliver("M0", "attempt", {"lag": 1}, into="stale"),
                SubmitTx(("stale",)),
            )
            return AttackScript((Repeat(rounds, body),), kind)
        clones = int(self.params["clones"]) if kind == AttackKind.CLONING else 1
        names = [f"M{i}" for i in range(clones)]
        setup = tuple(Clone("M0", n, "none") for n in names[1:])
        body = (
            *(Deliver(n, "attempt", into=f"o{i}") for i, n in enumerate(names)),
            SelectOutput(tuple(f"o{i}" for i in range(clones)), "has_proof", into="chosen", fallback="o0"),
            SubmitTx(("chosen", "o0"), first_accepted=True, into="accepted"),
            Invoke("close_round", {"baseline": "o0"}),
            AdvanceTime(interval),
        )
        return AttackScript((*setup, Repeat(rounds, body)), kind)

    def judge(self, kind: AttackKind) -> AttackOutcome:
        rejections = self.rejection_evidence({
            "StaleAnchor": EvidenceKind.STALE_ANCHOR,
            "UnregisteredEphemeralID": EvidenceKind.UNREGISTERED_EPHEMERAL_ID,
        })
        if kind == AttackKind.ROLLBACK:
            stale_accepted = [
                e for e in self.log.find("host.submit", accepted=True) if e.data.get("output") == "stale"
            ]
            if stale_accepted:
                ev = Evidence(EvidenceKind.STALE_RESPONSE_ACCEPTED, {"count": len(stale_accepted)},
                              tuple(e.seq for e in stale_accepted[:16]))
                return AttackOutcome(kind, True, (ev, *rejections))
            return AttackOutcome(kind, False, tuple(rejections))
        return self.judge_rounds(kind, rejections)


def pouw_clone_trial(config: PoUwConfig, task: Task, c: int, trials: int, seed: int = 0) -> float:
    """Frequency of rounds in which at least one of `c` miners produced an accepted proof."""
    from forklab.host.runner import ScriptRunner
    from forklab.simulation import Simulation

    if c < 1 or trials < 1:
        raise ValueError("need c >= 1 and trials >= 1")
    wins = done = 0
    for world_seed in rngs.sub_seeds(seed, (trials + 99) // 100):
        rounds = min(100, trials - done)
        sim = Simulation.create(world_seed)
        world = PoUwWorld(sim, VULNERABLE, {
            "diff": config.diff, "direction": config.direction.value,
            "instructions": task.instructions, "clones": c, "rounds": rounds,
        })
        world.setup()
        ScriptRunner(sim.host, world).run(world.default_script(AttackKind.CLONING if c > 1 else AttackKind.NONE))
        _, won, _ = world.round_counts()
        wins += won
        done += rounds
    return wins / done
