from forklab.ledger.chain import (
    PRESETS,
    Block,
    ConsensusMode,
    EventualMode,
    FinalMode,
    Ledger,
    Receipt,
    Tx,
    TxValidator,
    block_hash,
    check_chain,
    is_valid_chain,
)
from forklab.ledger.views import ChainView, NodeConnection, ServeMode, honest_connections, read_view

__all__ = [
    "PRESETS",
    "Block",
    "ChainView",
    "ConsensusMode",
    "EventualMode",
    "FinalMode",
    "Ledger",
    "NodeConnection",
    "Receipt",
    "ServeMode",
    "Tx",
    "TxValidator",
    "block_hash",
    "check_chain",
    "honest_connections",
    "is_valid_chain",
    "read_view",
]
