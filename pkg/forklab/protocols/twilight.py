"""
Twilight payment channel endpoints. Payments are encrypted to the
recipient's registered ephemeral key, so only the registered instance
can claim them.
"""
from __future__ import annotations
import logging
from dataclasses import dataclass
from typing import Any, Dict, Sequence, Tuple, Union

from forklab.enclave import codec
from forklab.enclave.program import EnclaveProgram, ProgramFault, Rejected
from forklab.enclave.runtime import EnclaveContext
from forklab.errors import DecryptionError, ScriptError
from forklab.host.adversary import Host
from forklab.host.script import (
    AttackKind,
    AttackOutcome,
    AttackScript,
    Clone,
    Deliver,
    Evidence,
    EvidenceKind,
)
from forklab.mitigations.ephemeral import (
    REGISTER_KIND,
    EphemeralIdPolicy,
    EphemeralIdRegistry,
    Envelope,
    ephemeral_register,
    make_registration,
    open_envelope,
    seal_to,
)
from forklab.mitigations.stateless import stateless_wrap
from forklab.protocols.base import VULNERABLE, ProtocolWorld

logger = logging.getLogger(__name__)

ENDPOINT = "twilight-endpoint"
SENDER_ROLE = "twilight:S"
RECIPIENT_ROLE = "twilight:M"
_PAY_INFO = b"twilight-pay"


@dataclass(frozen=True, slots=True)
class RegisterEndpoint:
    role: str


@dataclass(frozen=True, slots=True)
class Pay:
    recipient_pk: bytes
    amount: int


@dataclass(frozen=True, slots=True)
class Payment:
    envelope: Envelope

    def to_record(self) -> Dict[str, Any]:
        return {"envelope": self.envelope.to_record()}


@dataclass(frozen=True, slots=True)
class Claim:
    payment: Payment


def endpoint_program() -> EnclaveProgram:
    def init() -> Dict[str, Any]:
        return {}

    def step(ctx: EnclaveContext, state: Dict[str, Any], msg: Any) -> Tuple[Dict[str, Any], Any]:
        if isinstance(msg, RegisterEndpoint):
            return state, make_registration(ctx, msg.role)
        if isinstance(msg, Pay):
            if msg.amount <= 0:
                raise ProgramFault("BadAmount", str(msg.amount))
            plaintext = codec.pack_fields("twilight-payment", msg.amount)
            return state, Payment(seal_to(ctx.crypto, ctx.rng, msg.recipient_pk, plaintext, info=_PAY_INFO))
        if isinstance(msg, Claim):
            try:
                plaintext = open_envelope(ctx.crypto, ctx.ephemeral.agreement.secret, msg.payment.envelope, info=_PAY_INFO)
            except DecryptionError:
                raise ProgramFault("DecryptFail", "payment is not addressed to this instance") from None
            _, amount = codec.unpack_fields(plaintext, 2)
            return state, int(amount)
        raise ProgramFault("UnknownMessage", type(msg).__name__)

    return stateless_wrap(EnclaveProgram(
        name=ENDPOINT,
        init=init,
        step=step,
        deterministic=False,
        uses_randomness=True,
        ephemeral_keys=True,
    ))


def twilight_pay(host: Host, sender: str, recipient_pk: bytes, amount: int) -> Union[Payment, Rejected]:
    return host.deliver(sender, Pay(recipient_pk, amount))


def twilight_claim(host: Host, alias: str, payment: Payment) -> Union[int, Rejected]:
    return host.deliver(alias, Claim(payment))


def claimers(host: Host, payment: Payment, aliases: Sequence[str]) -> int:
    """How many of `aliases` manage to claim `payment`."""
    return sum(1 for a in aliases if not isinstance(twilight_claim(host, a, payment), Rejected))


class TwilightWorld(ProtocolWorld):
    """Sender S pays the adversary-hosted recipient M over a registered channel."""

    name = "Twilight"
    title = "Twilight payment channel"
    variants = (VULNERABLE,)
    defaults = {"clones": 2, "amount": 5}

    def setup(self) -> None:
        self.runtime.add_platform("P1")
        self.runtime.add_platform("P2")
        self.register(endpoint_program())
        self.registry = EphemeralIdRegistry(self.crypto, self.runtime.verify_attestation)
        self.ledger.register_tx_validator(REGISTER_KIND, self.registry)
        self.host.launch("S", "P1", ENDPOINT)
        self.host.launch("M", "P2", ENDPOINT)
        policy = EphemeralIdPolicy()
        for alias, role in (("S", SENDER_ROLE), ("M", RECIPIENT_ROLE)):
            reg = self.host.deliver(alias, RegisterEndpoint(role))
            ephemeral_register(policy, self.ledger, reg, sender=alias)
        self.host.advance_time(self.ledger.mode.block_interval_ms)
        self.log.record("twilight.channel", roles=sorted(self.registry.roles()))

    def recipient_pk(self) -> bytes:
        entry = self.registry.active(RECIPIENT_ROLE)
        if entry is None:
            raise ScriptError("recipient endpoint is not registered")
        return entry.agreement_pk

    # --- vocabulary ---

    def msg_pay(self, amount: int = 0) -> Pay:
        return Pay(self.recipient_pk(), int(amount or self.params["amount"]))

    def msg_claim(self, payment: Payment) -> Claim:
        return Claim(payment)

    # --- scripts ---

    def default_script(self, kind: AttackKind) -> AttackScript:
        clones = int(self.params["clones"]) if kind == AttackKind.CLONING else 1
        names = ["M", *(f"M{i}" for i in range(1, clones))]
        actions = (
            *(Clone("M", n, "none") for n in names[1:]),
            Deliver("S", "pay", into="payment"),
            *(Deliver(n, "claim", {"payment": "$payment"}, into=f"claim{i}") for i, n in enumerate(names)),
        )
        return AttackScript(actions, kind)

    def judge(self, kind: AttackKind) -> AttackOutcome:
        if kind == AttackKind.ROLLBACK:
            return AttackOutcome.not_applicable(kind, "endpoints are stateless; nothing is sealed")
        evidence = self.rejection_evidence({"DecryptFail": EvidenceKind.DECRYPTION_FAILED}, source="enclave.reject")
        claims = self.log.find("enclave.output", message="Claim")
        if len(claims) > 1:
            ev = Evidence(EvidenceKind.DIVERGENT_RESPONSES, {"claims": len(claims)}, tuple(e.seq for e in claims))
            return AttackOutcome(kind, True, (ev, *evidence))
        return AttackOutcome(kind, False, tuple(evidence))
