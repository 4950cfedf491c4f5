"""
Ephemeral identities and the ledger-side registry that tracks them.

A key generated at launch and never sealed makes every instance
distinguishable. The registry keeps exactly one active key per role.
"""
from __future__ import annotations
import logging
from dataclasses import dataclass
from typing import TYPE_CHECKING, Any, Callable, Dict, Literal, Optional, Set

import numpy as np

from forklab.enclave import codec
from forklab.enclave.crypto import CryptoProvider
from forklab.enclave.runtime import AttestationReport
from forklab.errors import PolicyViolation, ValidationFailed
from forklab.ledger.chain import Block, Ledger, Tx, TxValidator

if TYPE_CHECKING:
    from forklab.enclave.runtime import EnclaveContext

logger = logging.getLogger(__name__)

REGISTER_KIND = "ephemeral.register"
RegistryLocation = Literal["ledger", "none"]


@dataclass(frozen=True, slots=True)
class Registration:
    role: str
    signing_pk: bytes
    agreement_pk: bytes
    report: AttestationReport
    supersedes: bool
    proof: bytes

    def signed_bytes(self) -> bytes:
        return signed_registration_bytes(self.role, self.signing_pk, self.agreement_pk, self.supersedes)

    def to_record(self) -> Dict[str, Any]:
        return {
            "role": self.role,
            "signing_pk": self.signing_pk.hex(),
            "agreement_pk": self.agreement_pk.hex(),
            "measurement": self.report.measurement.hex,
            "supersedes": self.supersedes,
        }


def signed_registration_bytes(role: str, signing_pk: bytes, agreement_pk: bytes, supersedes: bool) -> bytes:
    return codec.pack_fields("ephemeral-register", role, signing_pk, agreement_pk, supersedes)


def key_binding(crypto: CryptoProvider, signing_pk: bytes, agreement_pk: bytes) -> bytes:
    """32-byte digest placed in report_data so the attestation vouches for the keys."""
    return crypto.hash(codec.pack_fields(signing_pk, agreement_pk))


def make_registration(ctx: "EnclaveContext", role: str, supersedes: bool = False) -> Registration:
    """Build a registration inside the enclave that owns the ephemeral keys."""
    ident = ctx.ephemeral
    if ident is None:
        raise PolicyViolation("program was launched without ephemeral keys")
    binding = key_binding(ctx.crypto, ident.signing.public, ident.agreement.public)
    report = ctx.attest(binding)
    body = signed_registration_bytes(role, ident.signing.public, ident.agreement.public, supersedes)
    return Registration(
        role=role,
        signing_pk=ident.signing.public,
        agreement_pk=ident.agreement.public,
        report=report,
        supersedes=supersedes,
        proof=ctx.crypto.sign(ident.signing.secret, body),
    )


@dataclass(frozen=True, slots=True)
class RegistryEntry:
    role: str
    signing_pk: bytes
    agreement_pk: bytes
    measurement: bytes
    platform: str
    height: int = -1


Authorizer = Callable[[RegistryEntry, Registration], bool]


def platform_of(report: AttestationReport) -> str:
    return str(dict(report.platform_attributes).get("platform", ""))


def same_binding(previous: RegistryEntry, candidate: Registration) -> bool:
    """Default supersede rule: the replacement runs the same program on the same platform."""
    return previous.measurement == candidate.report.measurement.digest and previous.platform == platform_of(
        candidate.report
    )


@dataclass(frozen=True, slots=True)
class EphemeralIdPolicy:
    registry_location: RegistryLocation = "ledger"
    authorize: Authorizer = same_binding


class EphemeralIdRegistry(TxValidator):
    """
    Ledger contract: role -> active ephemeral key.

    A second registration for a taken role is refused unless it is
    marked as superseding and passes the authorization rule.
    """

    def __init__(
        self,
        crypto: CryptoProvider,
        verify_report: Callable[[AttestationReport], bool],
        authorize: Authorizer = same_binding,
    ) -> None:
        self._crypto = crypto
        self._verify_report = verify_report
        self._authorize = authorize
        self._active: Dict[str, RegistryEntry] = {}
        self._pending: Dict[str, RegistryEntry] = {}
        self._retired: Set[bytes] = set()

    @staticmethod
    def _registration(tx: Tx) -> Registration:
        reg = tx.payload.get("registration")
        if not isinstance(reg, Registration):
            raise ValidationFailed("Malformed", "payload carries no registration")
        return reg

    def validate(self, tx: Tx, ledger: Ledger) -> None:
        reg = self._registration(tx)
        if not self._verify_report(reg.report):
            raise ValidationFailed("AttestationFailed", f"role {reg.role}")
        if reg.report.report_data[:32] != key_binding(self._crypto, reg.signing_pk, reg.agreement_pk):
            raise ValidationFailed("UnboundKey", "report_data does not bind the keys")
        if not self._crypto.verify(reg.signing_pk, reg.signed_bytes(), reg.proof):
            raise ValidationFailed("BadSignature", "registration proof")
        current = self._pending.get(reg.role) or self._active.get(reg.role)
        if current is not None:
            if not reg.supersedes:
                raise ValidationFailed("RoleTaken", f"role {reg.role} already has a key")
            if not self._authorize(current, reg):
                raise ValidationFailed("Unauthorized", f"supersede of {reg.role} refused")

    def on_accept(self, tx: Tx, ledger: Ledger) -> None:
        reg = self._registration(tx)
        self._pending[reg.role] = RegistryEntry(
            role=reg.role,
            signing_pk=reg.signing_pk,
            agreement_pk=reg.agreement_pk,
            measurement=reg.report.measurement.digest,
            platform=platform_of(reg.report),
        )

    def on_include(self, tx: Tx, block: Block, ledger: Ledger) -> None:
        reg = self._registration(tx)
        entry = self._pending.pop(reg.role, None)
        if entry is None or entry.signing_pk != reg.signing_pk:
            return
        previous = self._active.get(reg.role)
        if previous is not None:
            self._retired.add(previous.signing_pk)
        self._active[reg.role] = RegistryEntry(
            entry.role, entry.signing_pk, entry.agreement_pk, entry.measurement, entry.platform, block.height
        )
        logger.debug("role %s -> %s at height %d", reg.role, reg.signing_pk.hex()[:12], block.height)

    def active(self, role: str) -> Optional[RegistryEntry]:
        return self._active.get(role)

    def roles(self) -> Dict[str, RegistryEntry]:
        return dict(self._active)

    def is_registered(self, signing_pk: bytes, role: Optional[str] = None) -> bool:
        if role is not None:
            entry = self._active.get(role)
            return entry is not None and entry.signing_pk == signing_pk
        return any(e.signing_pk == signing_pk for e in self._active.values())

    def is_retired(self, signing_pk: bytes) -> bool:
        return signing_pk in self._retired


def ephemeral_register(policy: EphemeralIdPolicy, ledger: Ledger, registration: Registration, sender: str = "host") -> Tx:
    """
    Submit a registration. With `registry_location="none"` the tx is built
    but not sent; the caller keeps the key to itself.
    """
    tx = Tx(kind=REGISTER_KIND, sender=sender, payload={"registration": registration})
    if policy.registry_location == "ledger":
        ledger.submit_tx(tx)
    return tx


# --- encryption to an ephemeral key ---

@dataclass(frozen=True, slots=True)
class Envelope:
    sender_pk: bytes
    nonce: bytes
    ciphertext: bytes

    def to_record(self) -> Dict[str, Any]:
        return {"sender_pk": self.sender_pk.hex()[:16], "size": len(self.ciphertext)}


def _envelope_key(crypto: CryptoProvider, shared: bytes, info: bytes) -> bytes:
    return crypto.kdf(shared, info=info)


def seal_to(
    crypto: CryptoProvider,
    rng: np.random.Generator,
    recipient_pk: bytes,
    plaintext: bytes,
    info: bytes = b"forklab-envelope",
) -> Envelope:
    sender = crypto.agreement_keypair(rng)
    key = _envelope_key(crypto, crypto.agree(sender.secret, recipient_pk), info)
    nonce = crypto.nonce(rng)
    return Envelope(sender.public, nonce, crypto.encrypt(key, plaintext, nonce=nonce, aad=sender.public))


def open_envelope(crypto: CryptoProvider, recipient_secret: bytes, envelope: Envelope, info: bytes = b"forklab-envelope") -> bytes:
    """Raises DecryptionError unless `recipient_secret` matches the key the envelope was sealed to."""
    key = _envelope_key(crypto, crypto.agree(recipient_secret, envelope.sender_pk), info)
    return crypto.decrypt(key, envelope.ciphertext, nonce=envelope.nonce, aad=envelope.sender_pk)
