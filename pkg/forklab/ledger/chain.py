from __future__ import annotations
import hashlib
import logging
from dataclasses import dataclass, field, replace
from typing import Any, Callable, Dict, Generator, List, Optional, Sequence, Tuple, Union

import numpy as np

from forklab import rng as rngs
from forklab.enclave import codec
from forklab.errors import BrokenChain, DuplicateKind, ValidationFailed
from forklab.host.clock import SimClock
from forklab.host.events import EventLog
from forklab.records import to_record

logger = logging.getLogger(__name__)

NODES: Tuple[str, ...] = ("node-0", "node-1", "node-2", "node-3")


@dataclass(frozen=True, slots=True)
class FinalMode:
    block_interval_ms: int = 1000

    @property
    def name(self) -> str:
        return "final"


@dataclass(frozen=True, slots=True)
class EventualMode:
    block_interval_ms: int = 12000
    fork_probability: float = 0.05
    confirmation_depth: int = 6

    @property
    def name(self) -> str:
        return "eventual"


ConsensusMode = Union[FinalMode, EventualMode]

PRESETS: Dict[str, ConsensusMode] = {
    "final": FinalMode(1000),
    "ethereum": EventualMode(12000, 0.05, 6),
    "bitcoin": EventualMode(600000, 0.01, 6),
    "phala": FinalMode(2250),
}


@dataclass(frozen=True, slots=True)
class Tx:
    kind: str
    sender: str
    payload: Dict[str, Any] = field(default_factory=dict)
    seq: int = -1
    tx_id: bytes = b""

    def to_record(self) -> Dict[str, Any]:
        return {"kind": self.kind, "sender": self.sender, "seq": self.seq, "tx_id": self.tx_id.hex()[:16],
                "payload": to_record(self.payload)}


@dataclass(frozen=True, slots=True)
class Receipt:
    tx_id: bytes
    kind: str
    seq: int
    submitted_at: int


def block_hash(parent_hash: Optional[bytes], height: int, txs: Sequence[Tx], proposer: str) -> bytes:
    return hashlib.sha256(
        codec.pack_fields(parent_hash, height, [t.tx_id for t in txs], proposer)
    ).digest()


@dataclass(frozen=True, slots=True)
class Block:
    height: int
    hash: bytes
    parent_hash: Optional[bytes]
    txs: Tuple[Tx, ...]
    proposer: str
    timestamp: int

    def is_intact(self) -> bool:
        return self.hash == block_hash(self.parent_hash, self.height, self.txs, self.proposer)

    def txs_of(self, kind: str) -> List[Tx]:
        return [t for t in self.txs if t.kind == kind]

    def to_record(self) -> Dict[str, Any]:
        return {
            "height": self.height,
            "hash": self.hash.hex(),
            "parent": self.parent_hash.hex() if self.parent_hash else None,
            "txs": [t.tx_id.hex()[:16] for t in self.txs],
            "proposer": self.proposer,
            "timestamp": self.timestamp,
        }


def check_chain(blocks: Sequence[Block]) -> None:
    """Raise BrokenChain unless `blocks` is a hash-linked run starting at genesis."""
    if not blocks:
        raise BrokenChain("empty chain")
    if blocks[0].height != 0 or blocks[0].parent_hash is not None:
        raise BrokenChain("chain does not start at genesis")
    for prev, cur in zip(blocks, blocks[1:]):
        if cur.parent_hash != prev.hash or cur.height != prev.height + 1:
            raise BrokenChain(f"discontinuity at height {cur.height}")
    for b in blocks:
        if not b.is_intact():
            raise BrokenChain(f"block at height {b.height} does not match its hash")


def is_valid_chain(blocks: Sequence[Block]) -> bool:
    try:
        check_chain(blocks)
        return True
    except BrokenChain:
        return False


class TxValidator:
    """Ledger-side contract for one tx kind."""

    def validate(self, tx: Tx, ledger: "Ledger") -> None:
        """Raise ValidationFailed to refuse the tx at submission."""

    def on_accept(self, tx: Tx, ledger: "Ledger") -> None:
        """Called once the tx entered the pending pool."""

    def on_include(self, tx: Tx, block: Block, ledger: "Ledger") -> None:
        """Called when the tx is included in a produced block."""


BlockListener = Callable[[Block], None]


class Ledger:
    """
    Simulated L1. Blocks appear on a schedule driven by the shared clock;
    consensus itself is not executed.
    """

    def __init__(
        self,
        mode: ConsensusMode,
        *,
        clock: Optional[SimClock] = None,
        log: Optional[EventLog] = None,
        rng: Optional[np.random.Generator] = None,
    ) -> None:
        self.mode = mode
        self.clock = clock or SimClock()
        self.log = log
        self._rng = rng if rng is not None else rngs.stream(0, rngs.LEDGER_STREAM)
        self._blocks: Dict[bytes, Block] = {}
        self._by_height: Dict[int, List[Block]] = {}
        self._pending: List[Tx] = []
        self._validators: Dict[str, TxValidator] = {}
        self._listeners: List[BlockListener] = []
        self._produced: List[Block] = []
        self._next_seq = 0
        self.genesis = self._store(Block(
            height=0,
            hash=block_hash(None, 0, (), "genesis"),
            parent_hash=None,
            txs=(),
            proposer="genesis",
            timestamp=self.clock.now,
        ))
        self._head = self.genesis
        self.clock.process(self._producer())

    # --- production ---

    def _producer(self) -> Generator[Any, Any, None]:
        while True:
            yield self.clock.env.timeout(self.mode.block_interval_ms)
            self._produce()

    def _produce(self) -> None:
        parent = self._head
        txs = tuple(self._pending)
        self._pending.clear()
        height = parent.height + 1
        main = self.append_block(parent.hash, txs, proposer=NODES[height % len(NODES)])
        if isinstance(self.mode, EventualMode) and self._rng.random() < self.mode.fork_probability:
            self.append_block(parent.hash, txs, proposer=NODES[(height + 1) % len(NODES)])
        for tx in main.txs:
            validator = self._validators.get(tx.kind)
            if validator is not None:
                validator.on_include(tx, main, self)
        head = self._head
        for listener in list(self._listeners):
            listener(head)

    def _store(self, block: Block) -> Block:
        self._blocks[block.hash] = block
        self._by_height.setdefault(block.height, []).append(block)
        return block

    def append_block(self, parent_hash: bytes, txs: Sequence[Tx], *, proposer: str) -> Block:
        parent = self._blocks.get(parent_hash)
        if parent is None:
            raise BrokenChain("unknown parent")
        height = parent.height + 1
        if isinstance(self.mode, FinalMode) and self._by_height.get(height):
            raise ValidationFailed("ForkForbidden", f"final mode already has a block at height {height}")
        txs = tuple(txs)
        block = self._store(Block(
            height=height,
            hash=block_hash(parent.hash, height, txs, proposer),
            parent_hash=parent.hash,
            txs=txs,
            proposer=proposer,
            timestamp=self.clock.now,
        ))
        if (block.height, _neg(block.hash)) > (self._head.height, _neg(self._head.hash)):
            self._head = block
        self._produced.append(block)
        if self.log is not None:
            self.log.record("ledger.block", **block.to_record())
        return block

    def fork_at_head(self, txs_a: Sequence[Tx], txs_b: Sequence[Tx]) -> Tuple[Block, Block]:
        """Two competing children of the current head (eventual mode only)."""
        parent = self._head
        a = self.append_block(parent.hash, [self._stamp(t) for t in txs_a], proposer=NODES[0])
        b = self.append_block(parent.hash, [self._stamp(t) for t in txs_b], proposer=NODES[1])
        return a, b

    def advance(self, dt: int) -> List[Block]:
        if dt < 0:
            raise ValueError("dt must be non-negative")
        start = len(self._produced)
        self.clock.advance(dt)
        return self._produced[start:]

    # --- transactions ---

    def register_tx_validator(self, kind: str, validator: TxValidator) -> None:
        if kind in self._validators:
            raise DuplicateKind(f"validator already registered for {kind}")
        self._validators[kind] = validator

    def validator(self, kind: str) -> Optional[TxValidator]:
        return self._validators.get(kind)

    def _stamp(self, tx: Tx) -> Tx:
        if tx.tx_id:
            return tx
        seq = self._next_seq
        self._next_seq += 1
        tx_id = hashlib.sha256(codec.pack_fields(tx.kind, tx.sender, to_record(tx.payload), seq)).digest()
        return replace(tx, seq=seq, tx_id=tx_id)

    def submit_tx(self, tx: Tx) -> Receipt:
        validator = self._validators.get(tx.kind)
        if validator is not None:
            try:
                validator.validate(tx, self)
            except ValidationFailed as e:
                if self.log is not None:
                    self.log.record("ledger.reject", tx_kind=tx.kind, sender=tx.sender, reason=e.reason, detail=e.detail)
                raise
        stamped = self._stamp(tx)
        self._pending.append(stamped)
        if validator is not None:
            validator.on_accept(stamped, self)
        if self.log is not None:
            self.log.record("ledger.submit", tx_kind=stamped.kind, sender=stamped.sender, tx_id=stamped.tx_id.hex()[:16])
        return Receipt(tx_id=stamped.tx_id, kind=stamped.kind, seq=stamped.seq, submitted_at=self.clock.now)

    @property
    def pending(self) -> Tuple[Tx, ...]:
        return tuple(self._pending)

    def on_block(self, listener: BlockListener) -> None:
        self._listeners.append(listener)

    # --- chain queries ---

    @property
    def head(self) -> Block:
        return self._head

    @property
    def height(self) -> int:
        return self._head.height

    def block(self, block_hash_: bytes) -> Optional[Block]:
        return self._blocks.get(block_hash_)

    def blocks_at(self, height: int) -> List[Block]:
        return list(self._by_height.get(height, []))

    def all_blocks(self) -> List[Block]:
        return list(self._blocks.values())

    def chain_to(self, tip_hash: bytes) -> List[Block]:
        chain: List[Block] = []
        cur = self._blocks.get(tip_hash)
        while cur is not None:
            chain.append(cur)
            cur = self._blocks.get(cur.parent_hash) if cur.parent_hash else None
        chain.reverse()
        return chain

    def canonical_chain(self) -> List[Block]:
        return self.chain_to(self._head.hash)

    def is_canonical(self, height: int, hash_: bytes) -> bool:
        chain = self.canonical_chain()
        return 0 <= height < len(chain) and chain[height].hash == hash_

    def best_descendant(self, block_hash_: bytes) -> Block:
        """Best tip (height, then lowest hash) among blocks descending from `block_hash_`."""
        root = self._blocks[block_hash_]
        best = root
        for b in self._blocks.values():
            if b.height <= root.height:
                continue
            ancestry = self.chain_to(b.hash)
            if ancestry[root.height].hash != root.hash:
                continue
            if (b.height, _neg(b.hash)) > (best.height, _neg(best.hash)):
                best = b
        return best

    def confirmed_head(self) -> Block:
        depth = self.mode.confirmation_depth if isinstance(self.mode, EventualMode) else 0
        chain = self.canonical_chain()
        return chain[max(0, len(chain) - 1 - depth)]

    def export_records(self) -> List[Dict[str, Any]]:
        return [b.to_record() for b in sorted(self._blocks.values(), key=lambda b: (b.height, b.hash))]


def _neg(digest_: bytes) -> Tuple[int, ...]:
    # Lower hash wins ties; negate bytewise so tuple comparison prefers it.
    return tuple(-x for x in digest_)
