"""
FastKitten-style lottery contract run inside an enclave for a fixed set
of clients. Every round the clients sign the state digest they last
saw, so a restarted enclave with an older state cannot proceed.
"""
from __future__ import annotations
import logging
from dataclasses import dataclass
from typing import Any, Callable, Dict, List, Mapping, Optional, Sequence, Tuple

from forklab.enclave import codec
from forklab.enclave.crypto import CryptoProvider, KeyPair
from forklab.enclave.program import EnclaveProgram, ProgramFault, Rejected
from forklab.enclave.runtime import EnclaveContext
from forklab.errors import BadSignature, StateMismatch
from forklab.host.script import (
    Adopt,
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
)
from forklab.mitigations.ephemeral import (
    REGISTER_KIND,
    EphemeralIdPolicy,
    EphemeralIdRegistry,
    ephemeral_register,
    make_registration,
)
from forklab.mitigations.fixed_clients import (
    FixedClientPolicy,
    SignedInput,
    fixed_client_round,
    sign_input,
    state_digest,
)
from forklab.protocols.base import PATCHED, VULNERABLE, ProtocolWorld

logger = logging.getLogger(__name__)

LOTTERY = "fastkitten-lottery"
LOTTERY_ROLE = "fastkitten:E"


@dataclass(frozen=True, slots=True)
class RegisterLottery:
    role: str = LOTTERY_ROLE


@dataclass(frozen=True, slots=True)
class RoundInputs:
    inputs: Tuple[SignedInput, ...]


@dataclass(frozen=True, slots=True)
class Announcement:
    round_no: int
    digest: bytes
    winner: str
    signer: Optional[bytes] = None
    signature: bytes = b""

    def signed_bytes(self) -> bytes:
        return announcement_bytes(self.round_no, self.digest, self.winner)

    def to_record(self) -> Dict[str, Any]:
        return {"round": self.round_no, "winner": self.winner, "digest": self.digest.hex()[:16],
                "signer": self.signer.hex()[:16] if self.signer else None}


def announcement_bytes(round_no: int, digest: bytes, winner: str) -> bytes:
    return codec.pack_fields("lottery-announcement", round_no, digest, winner)


def lottery_init(client_ids: Sequence[str]) -> Dict[str, Any]:
    return {"round": 0, "wins": {cid: 0 for cid in client_ids}}


def fastkitten_lottery_round(
    policy: FixedClientPolicy,
    crypto: CryptoProvider,
    state: Dict[str, Any],
    inputs: Sequence[SignedInput],
    draw: Callable[[int], int],
) -> Tuple[Dict[str, Any], Announcement]:
    """
    One lottery round. `draw(k)` returns a uniform index below k.

    Raises StateMismatch or BadSignature unless every client vouched for
    the current state.
    """
    def advance(current: Dict[str, Any], payloads: Dict[str, Any]) -> Tuple[Dict[str, Any], str]:
        winner = policy.client_ids[draw(len(policy.client_ids))]
        wins = dict(current["wins"])
        wins[winner] += 1
        return {"round": current["round"] + 1, "wins": wins}, winner

    new_state, out = fixed_client_round(policy, crypto, state, inputs, advance, state["round"])
    return new_state, Announcement(out.round_no, out.digest, out.output)


def lottery_program(clients: Mapping[str, bytes], ephemeral: bool = False) -> EnclaveProgram:
    policy = FixedClientPolicy(clients)

    def init() -> Dict[str, Any]:
        return lottery_init(policy.client_ids)

    def step(ctx: EnclaveContext, state: Dict[str, Any], msg: Any) -> Tuple[Dict[str, Any], Any]:
        if isinstance(msg, RegisterLottery):
            return state, make_registration(ctx, msg.role)
        if isinstance(msg, RoundInputs):
            try:
                new_state, ann = fastkitten_lottery_round(policy, ctx.crypto, state, msg.inputs, ctx.integers)
            except StateMismatch as e:
                raise ProgramFault("StateMismatch", f"clients {e.offending} signed another state") from None
            except BadSignature as e:
                raise ProgramFault("BadSignature", str(e)) from None
            if ctx.ephemeral is not None:
                signing = ctx.ephemeral.signing
                ann = Announcement(ann.round_no, ann.digest, ann.winner, signing.public,
                                   ctx.crypto.sign(signing.secret, ann.signed_bytes()))
            return new_state, ann
        raise ProgramFault("UnknownMessage", type(msg).__name__)

    return EnclaveProgram(
        name=LOTTERY,
        init=init,
        step=step,
        params={"clients": dict(policy.clients)},
        deterministic=False,
        uses_randomness=True,
        ephemeral_keys=ephemeral,
        persistent_fields=("round", "wins"),
        checkpoint=True,
    )


class FastKittenWorld(ProtocolWorld):
    """k clients play a lottery hosted by the adversary, who favours one of them."""

    name = "FastKittenLottery"
    title = "FastKitten lottery contract"
    variants = (VULNERABLE, PATCHED)
    randomized = True
    defaults = {"clients": 4, "clones": 2, "rounds": 64, "favored": "client-1", "rollback_rounds": 3}

    def setup(self) -> None:
        k = int(self.params["clients"])
        self.keys: Dict[str, KeyPair] = {f"client-{i}": self.crypto.signing_keypair(self.rng) for i in range(k)}
        self.favored = str(self.params["favored"])
        self.runtime.add_platform("P1")
        self.register(lottery_program({cid: kp.public for cid, kp in self.keys.items()}, ephemeral=self.patched))
        self.registry: Optional[EphemeralIdRegistry] = None
        self.host.launch("E", "P1", LOTTERY)
        if self.patched:
            self.registry = EphemeralIdRegistry(self.crypto, self.runtime.verify_attestation)
            self.ledger.register_tx_validator(REGISTER_KIND, self.registry)
            ephemeral_register(EphemeralIdPolicy(), self.ledger, self.host.deliver("E", RegisterLottery()), sender="operator")
            self.host.advance_time(self.ledger.mode.block_interval_ms)
        self.client_round = 0
        self.client_digest = state_digest(lottery_init(list(self.keys)))

    # --- honest clients ---

    def op_collect_inputs(self) -> Tuple[SignedInput, ...]:
        return tuple(
            sign_input(self.crypto, kp.secret, cid, self.client_round, self.client_digest, int(self.rng.integers(0, 2**31)))
            for cid, kp in self.keys.items()
        )

    def _check(self, value: Any) -> Optional[str]:
        if isinstance(value, Rejected):
            return value.code
        if not isinstance(value, Announcement):
            return "Malformed"
        if value.round_no != self.client_round + 1:
            return "WrongRound"
        if self.registry is not None:
            entry = self.registry.active(LOTTERY_ROLE)
            if entry is None or value.signer != entry.signing_pk:
                return "UnregisteredEphemeralID"
            if not self.crypto.verify(value.signer, value.signed_bytes(), value.signature):
                return "BadSignature"
        return None

    def op_accept(self, candidates: List[str], into: str = "accepted") -> Optional[str]:
        """Clients take the first valid announcement among `candidates`."""
        for name in candidates:
            if name not in self.host.outputs:
                continue
            captured = self.host.output(name)
            problem = self._check(captured.value)
            if problem is not None:
                self.log.record("client.reject", output=name, code=problem)
                continue
            ann: Announcement = captured.value
            self.client_round = ann.round_no
            self.client_digest = ann.digest
            self.host.capture(into, ann, producer=captured.producer, handle=captured.handle)
            self.log.record("client.accept", output=name, round=ann.round_no, winner=ann.winner)
            return ann.winner
        return None

    def op_close_round(self, baseline: str = "o0", accepted: str = "accepted") -> bool:
        won = accepted in self.host.outputs and self.host.value(accepted).winner == self.favored
        base_value = self.host.value(baseline) if baseline in self.host.outputs else None
        base = isinstance(base_value, Announcement) and base_value.winner == self.favored
        self.host.outputs.pop(accepted, None)
        self.record_round(won, base)
        return won

    # --- vocabulary ---

    def msg_round(self, inputs: Sequence[SignedInput]) -> RoundInputs:
        return RoundInputs(tuple(inputs))

    def pred_favors_client(self, candidate: Any, candidates: List[Any]) -> bool:
        return isinstance(candidate, Announcement) and candidate.winner == self.favored

    # --- scripts ---

    def _round(self, into: str = "o0") -> Tuple[Any, ...]:
        return (
            Invoke("collect_inputs", into="inputs"),
            Deliver("E", "round", {"inputs": "$inputs"}, into=into),
        )

    def default_script(self, kind: AttackKind) -> AttackScript:
        rounds = int(self.params["rounds"])
        if kind == AttackKind.ROLLBACK:
            honest = (*self._round(), Invoke("accept", {"candidates": ["o0"]}))
            actions = (
                Repeat(max(2, int(self.params["rollback_rounds"])), honest),
                Restart("E", "first"),
                *self._round("replayed"),
                Invoke("accept", {"candidates": ["replayed"]}),
            )
            return AttackScript(actions, kind)
        if kind == AttackKind.NONE:
            body = (*self._round(), Invoke("accept", {"candidates": ["o0"]}), Invoke("close_round"))
            return AttackScript((Repeat(rounds, body),), kind)
        clones = int(self.params["clones"])
        names = ["E", *(f"E{i}" for i in range(1, clones))]
        outputs = tuple(f"o{i}" for i in range(clones))
        body = (
            *(Clone("E", n, "own") for n in names[1:]),
            Invoke("collect_inputs", into="inputs"),
            *(Deliver(n, "round", {"inputs": "$inputs"}, into=o) for n, o in zip(names, outputs)),
            SelectOutput(outputs, "favors_client", into="chosen", fallback="o0"),
            Invoke("accept", {"candidates": ["chosen", "o0"]}),
            Adopt("E", "accepted"),
            Invoke("close_round"),
        )
        return AttackScript((Repeat(rounds, body),), kind)

    def judge(self, kind: AttackKind) -> AttackOutcome:
        evidence = self.rejection_evidence({"StateMismatch": EvidenceKind.STATE_MISMATCH}, source="enclave.reject")
        unregistered = self.log.find("client.reject", code="UnregisteredEphemeralID")
        if unregistered:
            evidence.append(Evidence(EvidenceKind.UNREGISTERED_EPHEMERAL_ID, {"count": len(unregistered)},
                                     tuple(e.seq for e in unregistered[:16])))
        if kind == AttackKind.ROLLBACK:
            replayed = self.log.find("client.accept", output="replayed")
            if replayed:
                ev = Evidence(EvidenceKind.STALE_RESPONSE_ACCEPTED, {"count": len(replayed)},
                              tuple(e.seq for e in replayed))
                return AttackOutcome(kind, True, (ev, *evidence))
            return AttackOutcome(kind, False, tuple(evidence))
        return self.judge_rounds(kind, evidence)

    def win_counts(self) -> Dict[str, int]:
        counts = {cid: 0 for cid in self.keys}
        for e in self.log.find("client.accept"):
            counts[e.data["winner"]] += 1
        return counts
