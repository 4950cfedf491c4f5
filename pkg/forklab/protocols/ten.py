"""
Ten rollups: enrolled aggregator enclaves each draw a nonce per L1 block,
and the rollup with the lowest nonce is settled on L1.
"""
from __future__ import annotations
import logging
from dataclasses import dataclass
from typing import Any, Dict, List, Optional, Sequence, Set, Tuple

from forklab.enclave import codec
from forklab.enclave.crypto import CryptoProvider
from forklab.enclave.program import EnclaveProgram, ProgramFault
from forklab.enclave.runtime import EnclaveContext
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
from forklab.mitigations.ephemeral import (
    REGISTER_KIND,
    EphemeralIdPolicy,
    EphemeralIdRegistry,
    ephemeral_register,
    make_registration,
)
from forklab.protocols.base import PATCHED, VULNERABLE, ProtocolWorld
from forklab.protocols.network import Genesis, SharedNetworkSecret, enroll, handle_enrollment, network_secret

logger = logging.getLogger(__name__)

AGGREGATOR = "ten-enclave"
ROLLUP_KIND = "ten.rollup"
SETTLED_KIND = "ten.settled"
ADVERSARY = "agg-A"
AGGREGATOR_KEY_LABEL = "ten-aggregator"


@dataclass(frozen=True, slots=True)
class RollupHeader:
    l1_ref: bytes
    cross_chain_messages: Tuple[str, ...]
    payload_hash: bytes
    payload_hash_signature: bytes
    batch_seq_num: int
    aggregator_nonce: int
    aggregator_l2_address: str
    aggregator_ephemeral_id: Optional[bytes] = None

    def signed_bytes(self) -> bytes:
        return header_signing_bytes(
            self.l1_ref, self.cross_chain_messages, self.payload_hash, self.batch_seq_num,
            self.aggregator_nonce, self.aggregator_l2_address, self.aggregator_ephemeral_id,
        )

    def to_bytes(self) -> bytes:
        fields: List[Any] = [
            self.l1_ref, list(self.cross_chain_messages), self.payload_hash, self.payload_hash_signature,
            self.batch_seq_num, self.aggregator_nonce, self.aggregator_l2_address,
        ]
        if self.aggregator_ephemeral_id is not None:
            fields.append(self.aggregator_ephemeral_id)
        return codec.pack_fields(*fields)


@dataclass(frozen=True, slots=True)
class TenRollup:
    header: RollupHeader
    body: Tuple[str, ...] = ()

    @property
    def nonce(self) -> int:
        return self.header.aggregator_nonce

    @property
    def address(self) -> str:
        return self.header.aggregator_l2_address

    def to_record(self) -> Dict[str, Any]:
        return {"address": self.address, "nonce": str(self.nonce), "l1_ref": self.header.l1_ref.hex()[:16],
                "seq": self.header.batch_seq_num}


def header_signing_bytes(
    l1_ref: bytes,
    cross_chain_messages: Sequence[str],
    payload_hash: bytes,
    batch_seq_num: int,
    nonce: int,
    address: str,
    ephemeral_id: Optional[bytes],
) -> bytes:
    return codec.pack_fields("ten-rollup", l1_ref, list(cross_chain_messages), payload_hash, batch_seq_num,
                             nonce, address, ephemeral_id)


# --- enclave ---

@dataclass(frozen=True, slots=True)
class L1Sync:
    block: Block


@dataclass(frozen=True, slots=True)
class Propose:
    address: str
    txs: Tuple[str, ...] = ()


@dataclass(frozen=True, slots=True)
class RegisterAggregator:
    role: str


def aggregator_init() -> Dict[str, Any]:
    return {"l1_head": None, "l1_height": -1, "seq": 0, "proposed_at": -1}


def ten_propose_step(ctx: EnclaveContext, state: Dict[str, Any], msg: Propose) -> Tuple[Dict[str, Any], TenRollup]:
    """One rollup per synced L1 block, bound to that block."""
    secret = network_secret(state)
    if secret is None:
        raise ProgramFault("NotMember", "aggregator holds no network secret")
    if state["l1_head"] is None:
        raise ProgramFault("NoL1", "no L1 block synced yet")
    if state["proposed_at"] == state["l1_height"]:
        raise ProgramFault("ThrottleExceeded", f"already proposed at L1 height {state['l1_height']}")
    nonce = ctx.u64()
    seq = state["seq"] + 1
    payload_hash = ctx.crypto.hash(codec.pack_fields(list(msg.txs)))
    ephemeral_id = ctx.ephemeral.signing.public if ctx.ephemeral is not None else None
    signed = header_signing_bytes(state["l1_head"], (), payload_hash, seq, nonce, msg.address, ephemeral_id)
    if ctx.ephemeral is not None:
        signature = ctx.crypto.sign(ctx.ephemeral.signing.secret, signed)
    else:
        signature = ctx.crypto.sign(secret.signing_keypair(ctx.crypto, AGGREGATOR_KEY_LABEL).secret, signed)
    header = RollupHeader(state["l1_head"], (), payload_hash, signature, seq, nonce, msg.address, ephemeral_id)
    return {**state, "seq": seq, "proposed_at": state["l1_height"]}, TenRollup(header, tuple(msg.txs))


def aggregator_program(ephemeral: bool = False) -> EnclaveProgram:
    def step(ctx: EnclaveContext, state: Dict[str, Any], msg: Any) -> Tuple[Dict[str, Any], Any]:
        handled = handle_enrollment(ctx, state, msg)
        if handled is not None:
            return handled
        if isinstance(msg, L1Sync):
            if msg.block.height <= state["l1_height"]:
                return state, state["l1_height"]
            return {**state, "l1_head": msg.block.hash, "l1_height": msg.block.height}, msg.block.height
        if isinstance(msg, Propose):
            return ten_propose_step(ctx, state, msg)
        if isinstance(msg, RegisterAggregator):
            return state, make_registration(ctx, msg.role)
        raise ProgramFault("UnknownMessage", type(msg).__name__)

    return EnclaveProgram(
        name=AGGREGATOR,
        init=aggregator_init,
        step=step,
        deterministic=False,
        uses_randomness=True,
        ephemeral_keys=ephemeral,
        persistent_fields=("l1_head", "l1_height", "seq", "proposed_at", "network_seed"),
        checkpoint=True,
    )


def aggregator_role(address: str) -> str:
    return f"ten:{address}"


class RollupValidator(TxValidator):
    """L1 management contract: fresh anchor, valid signature, one rollup per address per block."""

    def __init__(
        self,
        crypto: CryptoProvider,
        aggregator_pk: bytes,
        registry: Optional[EphemeralIdRegistry] = None,
    ) -> None:
        self.crypto = crypto
        self.aggregator_pk = aggregator_pk
        self.registry = registry
        self._tokens: Set[Tuple[str, bytes]] = set()
        self._candidates: Dict[bytes, List[TenRollup]] = {}

    def validate(self, tx: Tx, ledger: Ledger) -> None:
        rollup = tx.payload.get("rollup")
        if not isinstance(rollup, TenRollup):
            raise ValidationFailed("Malformed", "no rollup")
        header = rollup.header
        if header.l1_ref != ledger.head.hash:
            raise ValidationFailed("StaleAnchor", f"rollup bound to {header.l1_ref.hex()[:12]}")
        if self.registry is not None:
            eid = header.aggregator_ephemeral_id
            if eid is None or not self.registry.is_registered(eid, aggregator_role(header.aggregator_l2_address)):
                raise ValidationFailed("UnregisteredEphemeralID", f"{header.aggregator_l2_address} key not registered")
            signer = eid
        else:
            signer = self.aggregator_pk
        if not self.crypto.verify(signer, header.signed_bytes(), header.payload_hash_signature):
            raise ValidationFailed("BadSignature", "rollup header")
        if (header.aggregator_l2_address, header.l1_ref) in self._tokens:
            raise ValidationFailed("ThrottleExceeded", f"{header.aggregator_l2_address} already proposed here")

    def on_accept(self, tx: Tx, ledger: Ledger) -> None:
        rollup: TenRollup = tx.payload["rollup"]
        self._tokens.add((rollup.address, rollup.header.l1_ref))
        self._candidates.setdefault(rollup.header.l1_ref, []).append(rollup)

    def candidates(self, l1_ref: bytes) -> List[TenRollup]:
        return list(self._candidates.get(l1_ref, []))


def ten_propose(host: Host, alias: str, address: str, txs: Sequence[str] = ()) -> Any:
    return host.deliver(alias, Propose(address, tuple(txs)))


def settle_key(rollup: TenRollup) -> Tuple[int, str]:
    return rollup.nonce, rollup.address


def ten_settle(rollups: Sequence[TenRollup]) -> Optional[TenRollup]:
    """Lowest nonce wins; equal nonces go to the lowest address."""
    return min(rollups, key=settle_key, default=None)


class TenWorld(ProtocolWorld):
    """
    m honest aggregators and the adversary's aggregator agg-A race for the
    lowest nonce on every L1 block. The sequencer S0 holds the master seed.
    """

    name = "TenPobi"
    title = "Ten proof of block inclusion"
    variants = (VULNERABLE, PATCHED)
    randomized = True
    defaults = {"honest": 8, "clones": 2, "rounds": 128, "enrollment_fee": 1}

    def setup(self) -> None:
        self.register(aggregator_program(ephemeral=self.patched))
        seed = self.rng.bytes(32)
        network = SharedNetworkSecret(seed)
        self.registry: Optional[EphemeralIdRegistry] = None
        if self.patched:
            self.registry = EphemeralIdRegistry(self.crypto, self.runtime.verify_attestation)
            self.ledger.register_tx_validator(REGISTER_KIND, self.registry)
        self.validator = RollupValidator(
            self.crypto, network.signing_keypair(self.crypto, AGGREGATOR_KEY_LABEL).public, self.registry
        )
        self.ledger.register_tx_validator(ROLLUP_KIND, self.validator)
        self.runtime.add_platform("P0")
        self.host.launch("S0", "P0", AGGREGATOR)
        self.host.deliver("S0", Genesis(seed))
        self.honest = [f"agg-{i}" for i in range(1, int(self.params["honest"]) + 1)]
        fee = int(self.params["enrollment_fee"])
        for i, alias in enumerate([*self.honest, ADVERSARY], start=1):
            platform = "PA" if alias == ADVERSARY else f"P{i}"
            self.runtime.add_platform(platform)
            self.host.launch(alias, platform, AGGREGATOR)
            enroll(self.host, alias, "S0", fee=fee)
            self.host.attach_relay(alias, L1Sync)
            if self.patched:
                reg = self.host.deliver(alias, RegisterAggregator(aggregator_role(alias)))
                ephemeral_register(EphemeralIdPolicy(), self.ledger, reg, sender=alias)
        self.host.advance_time(self.ledger.mode.block_interval_ms)

    # --- honest parties ---

    def op_honest_round(self) -> int:
        """Every honest aggregator proposes once for the current head."""
        accepted = 0
        for alias in self.honest:
            rollup = ten_propose(self.host, alias, alias)
            if isinstance(rollup, TenRollup) and self.host.submit_tx(Tx(ROLLUP_KIND, alias, {"rollup": rollup})):
                accepted += 1
        return accepted

    def op_settle(self, baseline: str = "o0") -> Optional[str]:
        head = self.ledger.head.hash
        candidates = self.validator.candidates(head)
        winner = ten_settle(candidates)
        honest_best = ten_settle([r for r in candidates if r.address != ADVERSARY])
        base_value = self.host.value(baseline) if baseline in self.host.outputs else None
        base = (
            isinstance(base_value, TenRollup)
            and base_value.header.l1_ref == head
            and (honest_best is None or settle_key(base_value) < settle_key(honest_best))
        )
        if winner is not None:
            self.host.submit_tx(Tx(SETTLED_KIND, "sequencer", {"rollup": winner}))
        self.log.record("ten.settle", winner=winner.address if winner else None,
                        nonce=str(winner.nonce) if winner else None, candidates=len(candidates))
        self.record_round(winner is not None and winner.address == ADVERSARY, base)
        return winner.address if winner else None

    # --- vocabulary ---

    def msg_propose(self) -> Propose:
        return Propose(ADVERSARY)

    def key_nonce(self, value: Any) -> Tuple[int, str]:
        if isinstance(value, TenRollup):
            return settle_key(value)
        return 2**64, ""

    def to_txs(self, value: Any, sender: str) -> List[Tx]:
        if isinstance(value, TenRollup):
            return [Tx(ROLLUP_KIND, value.address, {"rollup": value})]
        return []

    # --- scripts ---

    def default_script(self, kind: AttackKind) -> AttackScript:
        interval = self.ledger.mode.block_interval_ms
        if kind == AttackKind.ROLLBACK:
            checkpoint = self.host.pick_blob(self.host.instance(ADVERSARY), "own")
            ref = f"seq:{checkpoint.seq_hint}" if checkpoint is not None else "first"
            actions = (
                Invoke("honest_round"),
                Deliver(ADVERSARY, "propose", into="fresh"),
                SubmitTx(("fresh",)),
                Restart(ADVERSARY, "previous"),
                Deliver(ADVERSARY, "propose", into="replayed"),
                SubmitTx(("replayed",)),
                AdvanceTime(interval),
                Restart(ADVERSARY, ref),
                Deliver(ADVERSARY, "propose", into="stale"),
                SubmitTx(("stale",)),
            )
            return AttackScript(actions, kind)
        clones = int(self.params["clones"]) if kind == AttackKind.CLONING else 1
        names = [ADVERSARY, *(f"{ADVERSARY}{i}" for i in range(1, clones))]
        outputs = tuple(f"o{i}" for i in range(clones))
        setup = tuple(Clone(ADVERSARY, n, "own") for n in names[1:])
        body = (
            Invoke("honest_round"),
            *(Deliver(n, "propose", into=o) for n, o in zip(names, outputs)),
            SubmitTx(outputs, first_accepted=True, sort_by="nonce", into="accepted"),
            Invoke("settle"),
            AdvanceTime(interval),
        )
        return AttackScript((*setup, Repeat(int(self.params["rounds"]), body)), kind)

    def judge(self, kind: AttackKind) -> AttackOutcome:
        evidence = self.rejection_evidence({
            "StaleAnchor": EvidenceKind.STALE_ANCHOR,
            "UnregisteredEphemeralID": EvidenceKind.UNREGISTERED_EPHEMERAL_ID,
        })
        if kind == AttackKind.ROLLBACK:
            replayed = [
                e for e in self.log.find("host.submit", accepted=True) if e.data.get("output") in ("replayed", "stale")
            ]
            if replayed:
                ev = Evidence(EvidenceKind.STALE_RESPONSE_ACCEPTED, {"count": len(replayed)},
                              tuple(e.seq for e in replayed))
                return AttackOutcome(kind, True, (ev, *evidence))
            return AttackOutcome(kind, False, tuple(evidence))
        return self.judge_rounds(kind, evidence)

    def enrollment_fees(self) -> int:
        return sum(int(e.data.get("fee") or 0) for e in self.log.find("network.enroll"))

