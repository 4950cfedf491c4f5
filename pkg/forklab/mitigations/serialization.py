"""
Serialization through the ledger: replay recovery, timestamped responses
and state commits.
"""
from __future__ import annotations
import logging
from dataclasses import dataclass
from enum import Enum
from typing import Any, Callable, Collection, Dict, List, Optional, Sequence, Tuple, Union

from forklab.enclave import codec
from forklab.enclave.crypto import CryptoProvider
from forklab.errors import BadSignature, NoAck, NotInRange, ValidationFailed
from forklab.ledger.chain import Block, Ledger, Receipt, Tx, TxValidator, check_chain
from forklab.ledger.views import ChainView

logger = logging.getLogger(__name__)

DEFAULT_FRESHNESS_WINDOW = 1
ACK_PERIODS = 2
COMMIT_KIND = "state.commit"


# --- policy variants ---

@dataclass(frozen=True, slots=True)
class PlainHeight:
    pass


@dataclass(frozen=True, slots=True)
class HeightAndHash:
    pass


@dataclass(frozen=True, slots=True)
class Range:
    m: int
    M: int


@dataclass(frozen=True, slots=True)
class HeartbeatAck:
    period_ms: int


TimestampVariant = Union[PlainHeight, HeightAndHash, Range, HeartbeatAck]


@dataclass(frozen=True, slots=True)
class ReplayRecovery:
    validate_chain: bool = True


@dataclass(frozen=True, slots=True)
class Timestamping:
    variant: TimestampVariant = HeightAndHash()
    freshness_window: int = DEFAULT_FRESHNESS_WINDOW


@dataclass(frozen=True, slots=True)
class StateOnLedger:
    anchor_window: int = 0


SerializationPolicy = Union[ReplayRecovery, Timestamping, StateOnLedger]


class Verdict(str, Enum):
    ACCEPT = "Accept"
    REJECT_STALE = "RejectStale"
    REJECT_FORK_MISMATCH = "RejectForkMismatch"


# --- option 1: replay ---

@dataclass(frozen=True, slots=True)
class Recovered:
    state: Any
    height: int
    head_hash: bytes
    applied: int


def replay_recover(
    policy: ReplayRecovery,
    view: Union[ChainView, Sequence[Block]],
    init_state: Any,
    apply: Callable[[Any, Tx], Any],
    kinds: Collection[str],
) -> Recovered:
    """Fold `apply` over every relevant tx of the view, genesis to head."""
    blocks = list(view.blocks if isinstance(view, ChainView) else view)
    if policy.validate_chain:
        check_chain(blocks)
    state = init_state
    applied = 0
    for block in blocks:
        for tx in block.txs:
            if tx.kind in kinds:
                state = apply(state, tx)
                applied += 1
    head = blocks[-1]
    return Recovered(state=state, height=head.height, head_hash=head.hash, applied=applied)


# --- option 2: timestamping ---

@dataclass(frozen=True, slots=True)
class TimestampedResponse:
    payload: Any
    height: int
    block_hash: Optional[bytes]
    signature: bytes

    def signed_bytes(self) -> bytes:
        return response_signing_bytes(self.payload, self.height, self.block_hash)

    def to_bytes(self) -> bytes:
        return codec.pack_fields(self.payload, self.height, self.block_hash, self.signature)

    def to_record(self) -> Dict[str, Any]:
        from forklab.records import to_record
        return {
            "payload": to_record(self.payload),
            "height": self.height,
            "block_hash": self.block_hash.hex() if self.block_hash else None,
        }


def response_signing_bytes(payload: Any, height: int, block_hash: Optional[bytes]) -> bytes:
    return codec.pack_fields("timestamped-response", payload, height, block_hash)


def serve_in_range(height: int, m: int, M: int) -> None:
    if not (m <= height <= M):
        raise NotInRange(f"height {height} outside [{m}, {M}]")


def require_ack(last_ack_ms: Optional[int], now_ms: int, period_ms: int) -> None:
    if last_ack_ms is None or now_ms - last_ack_ms > ACK_PERIODS * period_ms:
        raise NoAck(f"no heartbeat acknowledged since {last_ack_ms} (now {now_ms})")


def timestamp_response(
    policy: Timestamping,
    crypto: CryptoProvider,
    signing_secret: bytes,
    payload: Any,
    height: int,
    block_hash: bytes,
    *,
    requested_range: Optional[Tuple[int, int]] = None,
    last_ack_ms: Optional[int] = None,
    now_ms: int = 0,
) -> TimestampedResponse:
    """Sign `payload` together with the last processed block. May refuse to serve."""
    variant = policy.variant
    if isinstance(variant, Range):
        m, M = requested_range if requested_range is not None else (variant.m, variant.M)
        serve_in_range(height, m, M)
    elif isinstance(variant, HeartbeatAck):
        require_ack(last_ack_ms, now_ms, variant.period_ms)
    stamped_hash = None if isinstance(variant, PlainHeight) else block_hash
    signature = crypto.sign(signing_secret, response_signing_bytes(payload, height, stamped_hash))
    return TimestampedResponse(payload, height, stamped_hash, signature)


def client_verify(
    response: TimestampedResponse,
    view: ChainView,
    policy: Timestamping,
    *,
    crypto: Optional[CryptoProvider] = None,
    public_key: Optional[bytes] = None,
) -> Verdict:
    """Client-side freshness check against the client's own chain view."""
    if public_key is not None and crypto is not None:
        if not crypto.verify(public_key, response.signed_bytes(), response.signature):
            raise BadSignature("timestamped response signature does not verify")
    if response.block_hash is None:
        if not isinstance(policy.variant, PlainHeight):
            return Verdict.REJECT_FORK_MISMATCH
    elif not view.contains(response.height, response.block_hash):
        return Verdict.REJECT_FORK_MISMATCH
    if response.height < view.height - policy.freshness_window:
        return Verdict.REJECT_STALE
    return Verdict.ACCEPT


# --- option 3: state on ledger ---

@dataclass(frozen=True, slots=True)
class StateCommit:
    contract: str
    prev_digest: bytes
    new_digest: bytes
    anchor_hash: bytes

    def to_bytes(self) -> bytes:
        return codec.pack_fields(self.contract, self.prev_digest, self.new_digest, self.anchor_hash)

    def to_record(self) -> Dict[str, Any]:
        return {
            "contract": self.contract,
            "prev": self.prev_digest.hex()[:16],
            "new": self.new_digest.hex()[:16],
            "anchor": self.anchor_hash.hex()[:16],
        }


class StateCommitValidator(TxValidator):
    """Accepts a commit only if it extends the contract's committed head from a fresh anchor."""

    def __init__(self, policy: StateOnLedger = StateOnLedger()) -> None:
        self.policy = policy
        self._heads: Dict[str, bytes] = {}
        self._history: Dict[str, List[StateCommit]] = {}

    def register_genesis(self, contract: str, digest: bytes) -> None:
        self._heads[contract] = digest
        self._history[contract] = []

    def head(self, contract: str) -> Optional[bytes]:
        return self._heads.get(contract)

    def history(self, contract: str) -> List[StateCommit]:
        return list(self._history.get(contract, []))

    @staticmethod
    def _commit(tx: Tx) -> StateCommit:
        commit = tx.payload.get("commit")
        if not isinstance(commit, StateCommit):
            raise ValidationFailed("Malformed", "payload carries no state commit")
        return commit

    def validate(self, tx: Tx, ledger: Ledger) -> None:
        commit = self._commit(tx)
        head = self._heads.get(commit.contract)
        if head is None:
            raise ValidationFailed("UnknownContract", commit.contract)
        if commit.prev_digest != head:
            raise ValidationFailed("WrongPredecessor", f"{commit.contract} head is {head.hex()[:12]}")
        recent = ledger.canonical_chain()[-(self.policy.anchor_window + 1):]
        if commit.anchor_hash not in {b.hash for b in recent}:
            raise ValidationFailed("StaleAnchor", f"anchor {commit.anchor_hash.hex()[:12]} is not the head")

    def on_accept(self, tx: Tx, ledger: Ledger) -> None:
        commit = self._commit(tx)
        self._heads[commit.contract] = commit.new_digest
        self._history.setdefault(commit.contract, []).append(commit)


def state_commit(
    policy: StateOnLedger,
    ledger: Ledger,
    contract: str,
    prev_digest: bytes,
    new_digest: bytes,
    anchor_hash: bytes,
    sender: str = "host",
) -> Receipt:
    """Submit one transition; ValidationFailed carries StaleAnchor or WrongPredecessor."""
    commit = StateCommit(contract, prev_digest, new_digest, anchor_hash)
    return ledger.submit_tx(Tx(kind=COMMIT_KIND, sender=sender, payload={"commit": commit}))
