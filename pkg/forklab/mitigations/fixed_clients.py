from __future__ import annotations
import logging
from dataclasses import dataclass
from types import MappingProxyType
from typing import Any, Callable, Dict, Mapping, Sequence, Tuple

from forklab.enclave import codec
from forklab.enclave.crypto import CryptoProvider
from forklab.errors import BadSignature, StateMismatch

logger = logging.getLogger(__name__)


def state_digest(state: Any) -> bytes:
    return codec.digest(state)


def input_signing_bytes(round_no: int, digest: bytes, payload: Any) -> bytes:
    return codec.pack_fields("fixed-client-input", round_no, digest, payload)


@dataclass(frozen=True, slots=True)
class SignedInput:
    client_id: str
    round_no: int
    digest: bytes
    payload: Any
    signature: bytes

    def to_record(self) -> Dict[str, Any]:
        return {"client": self.client_id, "round": self.round_no, "digest": self.digest.hex()[:16]}


@dataclass(frozen=True, slots=True)
class RoundOutput:
    round_no: int
    digest: bytes
    output: Any

    def to_record(self) -> Dict[str, Any]:
        from forklab.records import to_record
        return {"round": self.round_no, "digest": self.digest.hex()[:16], "output": to_record(self.output)}


class FixedClientPolicy:
    """Client set and verification keys fixed at setup; membership cannot change afterwards."""

    __slots__ = ("_clients",)

    def __init__(self, clients: Mapping[str, bytes]) -> None:
        if not clients:
            raise ValueError("a fixed client set needs at least one client")
        object.__setattr__(self, "_clients", MappingProxyType(dict(sorted(clients.items()))))

    def __setattr__(self, name: str, value: Any) -> None:
        raise AttributeError("FixedClientPolicy is immutable")

    @property
    def clients(self) -> Mapping[str, bytes]:
        return self._clients

    @property
    def client_ids(self) -> Tuple[str, ...]:
        return tuple(self._clients)


def sign_input(
    crypto: CryptoProvider, secret: bytes, client_id: str, round_no: int, digest: bytes, payload: Any
) -> SignedInput:
    signature = crypto.sign(secret, input_signing_bytes(round_no, digest, payload))
    return SignedInput(client_id, round_no, digest, payload, signature)


def check_round(
    policy: FixedClientPolicy, crypto: CryptoProvider, local_digest: bytes, inputs: Sequence[SignedInput]
) -> None:
    """Raise BadSignature or StateMismatch unless every client signed the local digest."""
    by_client = {i.client_id: i for i in inputs}
    unknown = set(by_client) - set(policy.client_ids)
    if unknown:
        raise BadSignature(f"inputs from non-members {sorted(unknown)}")
    for client_id, signed in by_client.items():
        message = input_signing_bytes(signed.round_no, signed.digest, signed.payload)
        if not crypto.verify(policy.clients[client_id], message, signed.signature):
            raise BadSignature(f"signature of {client_id} does not verify")
    offending = [cid for cid in policy.client_ids if cid not in by_client or by_client[cid].digest != local_digest]
    if offending:
        raise StateMismatch(offending)


def fixed_client_round(
    policy: FixedClientPolicy,
    crypto: CryptoProvider,
    state: Any,
    inputs: Sequence[SignedInput],
    advance: Callable[[Any, Dict[str, Any]], Tuple[Any, Any]],
    round_no: int,
) -> Tuple[Any, RoundOutput]:
    """
    Execute round `round_no` only if every client vouched for the current
    state digest. `advance(state, payloads)` is the contract's own step.
    """
    check_round(policy, crypto, state_digest(state), inputs)
    payloads = {i.client_id: i.payload for i in sorted(inputs, key=lambda i: i.client_id)}
    new_state, output = advance(state, payloads)
    return new_state, RoundOutput(round_no + 1, state_digest(new_state), output)
