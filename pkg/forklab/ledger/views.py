from __future__ import annotations
from dataclasses import dataclass
from enum import Enum
from typing import Any, Dict, List, Optional, Sequence, Tuple

from forklab.errors import NoConnections
from forklab.ledger.chain import Block, Ledger, Tx, is_valid_chain


class ServeMode(str, Enum):
    HONEST = "honest"
    STALE = "stale"
    BRANCH = "branch"
    SILENT = "silent"


@dataclass(frozen=True, slots=True)
class NodeConnection:
    """One blockchain node an enclave talks to, and how it serves."""
    node_id: str
    honest: bool = True
    mode: ServeMode = ServeMode.HONEST
    lag: int = 0
    branch: Optional[bytes] = None

    @classmethod
    def honest_node(cls, node_id: str) -> "NodeConnection":
        return cls(node_id)

    @classmethod
    def stale(cls, node_id: str, k: int) -> "NodeConnection":
        return cls(node_id, honest=False, mode=ServeMode.STALE, lag=k)

    @classmethod
    def on_branch(cls, node_id: str, tip: bytes) -> "NodeConnection":
        return cls(node_id, honest=False, mode=ServeMode.BRANCH, branch=tip)

    @classmethod
    def silent(cls, node_id: str) -> "NodeConnection":
        return cls(node_id, honest=False, mode=ServeMode.SILENT)

    def serve(self, ledger: Ledger) -> Optional[List[Block]]:
        if self.honest or self.mode == ServeMode.HONEST:
            return ledger.canonical_chain()
        if self.mode == ServeMode.SILENT:
            return None
        if self.mode == ServeMode.STALE:
            chain = ledger.canonical_chain()
            return chain[: max(1, len(chain) - self.lag)]
        if self.branch is None:
            return None
        return ledger.chain_to(ledger.best_descendant(self.branch).hash)

    def to_record(self) -> Dict[str, Any]:
        return {
            "node": self.node_id,
            "honest": self.honest,
            "mode": self.mode.value,
            "lag": self.lag,
            "branch": self.branch.hex() if self.branch else None,
        }


@dataclass(frozen=True, slots=True)
class ChainView:
    served_to: str
    blocks: Tuple[Block, ...]
    via: Tuple[str, ...] = ()

    @property
    def head(self) -> Block:
        return self.blocks[-1]

    @property
    def height(self) -> int:
        return self.head.height

    def block_at(self, height: int) -> Optional[Block]:
        if 0 <= height < len(self.blocks) and self.blocks[height].height == height:
            return self.blocks[height]
        for b in self.blocks:
            if b.height == height:
                return b
        return None

    def contains(self, height: int, block_hash: Optional[bytes]) -> bool:
        block = self.block_at(height)
        return block is not None and block.hash == block_hash

    def txs(self, kind: Optional[str] = None) -> List[Tx]:
        return [t for b in self.blocks for t in b.txs if kind is None or t.kind == kind]

    def to_record(self) -> Dict[str, Any]:
        return {
            "served_to": self.served_to,
            "height": self.height,
            "head": self.head.hash.hex(),
            "via": list(self.via),
        }


def _rank(chain: Sequence[Block]) -> Tuple[int, Tuple[int, ...]]:
    head = chain[-1]
    return head.height, tuple(-x for x in head.hash)


def read_view(ledger: Ledger, connections: Sequence[NodeConnection], served_to: str = "") -> ChainView:
    """
    Adopt the highest valid chain any connection serves (ties: lowest head hash).
    If every connection is silent the view is genesis only.
    """
    if not connections:
        raise NoConnections(f"{served_to or 'instance'} has no node connections")
    best: Optional[List[Block]] = None
    for conn in connections:
        served = conn.serve(ledger)
        if not served or not is_valid_chain(served):
            continue
        if best is None or _rank(served) > _rank(best):
            best = served
    blocks = tuple(best) if best is not None else (ledger.genesis,)
    return ChainView(served_to=served_to, blocks=blocks, via=tuple(c.node_id for c in connections))


def honest_connections(count: int = 4) -> List[NodeConnection]:
    return [NodeConnection.honest_node(f"node-{i}") for i in range(count)]
