"""
Network-wide secret shared among attested enclaves, and the enrollment
handshake that hands it to a new member.
"""
from __future__ import annotations
import logging
from dataclasses import dataclass
from typing import TYPE_CHECKING, Any, Dict, Optional, Tuple

from forklab.enclave import codec
from forklab.enclave.crypto import CryptoProvider, KeyPair
from forklab.enclave.program import ProgramFault, Rejected
from forklab.enclave.runtime import AttestationReport
from forklab.errors import AttestationFailed, DecryptionError
from forklab.mitigations.ephemeral import Envelope, open_envelope, seal_to

if TYPE_CHECKING:
    from forklab.enclave.runtime import EnclaveContext
    from forklab.host.adversary import Host

logger = logging.getLogger(__name__)

SEED_FIELD = "network_seed"
_ENROLL_INFO = b"forklab-enroll"


@dataclass(frozen=True, slots=True)
class SharedNetworkSecret:
    master_seed: bytes

    def __repr__(self) -> str:
        return "SharedNetworkSecret(<hidden>)"

    def contract_secret(self, crypto: CryptoProvider, contract_id: str) -> bytes:
        return crypto.kdf(self.master_seed, info=b"contract:" + contract_id.encode())

    def contract_keypair(self, crypto: CryptoProvider, contract_id: str) -> KeyPair:
        return crypto.agreement_keypair_from_secret(self.contract_secret(crypto, contract_id))

    def signing_keypair(self, crypto: CryptoProvider, label: str) -> KeyPair:
        return crypto.signing_keypair_from_secret(crypto.kdf(self.master_seed, info=b"sign:" + label.encode()))


def published_contract_key(crypto: CryptoProvider, secret: SharedNetworkSecret, contract_id: str) -> bytes:
    """The public half that the network publishes for `contract_id`."""
    return secret.contract_keypair(crypto, contract_id).public


# --- enrollment messages ---

@dataclass(frozen=True, slots=True)
class Genesis:
    seed: bytes

    def to_record(self) -> Dict[str, Any]:
        return {"seed": "<hidden>"}


@dataclass(frozen=True, slots=True)
class BeginEnrollment:
    pass


@dataclass(frozen=True, slots=True)
class EnrollmentRequest:
    report: AttestationReport
    enrollment_pk: bytes

    def to_record(self) -> Dict[str, Any]:
        return {"measurement": self.report.measurement.hex, "enrollment_pk": self.enrollment_pk.hex()[:16]}


@dataclass(frozen=True, slots=True)
class ServeEnrollment:
    request: EnrollmentRequest


@dataclass(frozen=True, slots=True)
class SeedDelivery:
    envelope: Envelope


@dataclass(frozen=True, slots=True)
class CompleteEnrollment:
    delivery: SeedDelivery


ENROLLMENT_MESSAGES = (Genesis, BeginEnrollment, ServeEnrollment, CompleteEnrollment)


def network_secret(state: Dict[str, Any]) -> Optional[SharedNetworkSecret]:
    seed = state.get(SEED_FIELD)
    return SharedNetworkSecret(seed) if seed else None


def handle_enrollment(ctx: "EnclaveContext", state: Dict[str, Any], msg: Any) -> Optional[Tuple[Dict[str, Any], Any]]:
    """
    Shared step handler for the enrollment handshake. Returns None when
    `msg` is not an enrollment message.
    """
    if isinstance(msg, Genesis):
        return {**state, SEED_FIELD: msg.seed}, True
    if isinstance(msg, BeginEnrollment):
        keys = ctx.agreement_keypair()
        binding = ctx.crypto.hash(codec.pack_fields("enroll", keys.public))
        request = EnrollmentRequest(ctx.attest(binding), keys.public)
        return {**state, "enroll_sk": keys.secret}, request
    if isinstance(msg, ServeEnrollment):
        secret = network_secret(state)
        if secret is None:
            raise ProgramFault("NotMember", "no network seed to share")
        report = msg.request.report
        binding = ctx.crypto.hash(codec.pack_fields("enroll", msg.request.enrollment_pk))
        if not ctx.verify_attestation(report) or report.measurement != ctx.measurement:
            raise ProgramFault("AttestationFailed", "candidate does not run the network program")
        if report.report_data[:32] != binding:
            raise ProgramFault("AttestationFailed", "enrollment key not bound to the report")
        envelope = seal_to(ctx.crypto, ctx.rng, msg.request.enrollment_pk, secret.master_seed, info=_ENROLL_INFO)
        return state, SeedDelivery(envelope)
    if isinstance(msg, CompleteEnrollment):
        sk = state.get("enroll_sk")
        if not sk:
            raise ProgramFault("NoEnrollment", "enrollment was not started")
        try:
            seed = open_envelope(ctx.crypto, sk, msg.delivery.envelope, info=_ENROLL_INFO)
        except DecryptionError:
            raise ProgramFault("DecryptFail", "seed delivery") from None
        rest = {k: v for k, v in state.items() if k != "enroll_sk"}
        return {**rest, SEED_FIELD: seed}, True
    return None


def enroll(host: "Host", candidate: str, member: str, *, fee: int = 0) -> None:
    """
    Run the attestation-gated handshake between two aliases.

    Raises AttestationFailed when the member refuses the candidate.
    """
    request = host.deliver(candidate, BeginEnrollment())
    if isinstance(request, Rejected):
        raise AttestationFailed(f"{candidate} could not start enrollment: {request.code}")
    delivery = host.deliver(member, ServeEnrollment(request))
    if isinstance(delivery, Rejected):
        host.log.record("network.enroll_refused", candidate=candidate, member=member, code=delivery.code)
        raise AttestationFailed(f"{member} refused {candidate}: {delivery.detail}")
    done = host.deliver(candidate, CompleteEnrollment(delivery))
    if isinstance(done, Rejected):
        raise AttestationFailed(f"{candidate} could not open the seed: {done.code}")
    host.log.record("network.enroll", candidate=candidate, member=member, fee=fee)
