from __future__ import annotations
from typing import Dict, Type

from forklab.protocols.base import PATCHED, VULNERABLE, ProtocolWorld
from forklab.protocols.bite import BiteWorld
from forklab.protocols.ccf import CcfWorld
from forklab.protocols.fastkitten import FastKittenWorld
from forklab.protocols.phala import PhalaWorld
from forklab.protocols.pouw import PoUwWorld
from forklab.protocols.proof_of_luck import ProofOfLuckWorld
from forklab.protocols.secret import SecretWorld
from forklab.protocols.ten import TenWorld
from forklab.protocols.twilight import TwilightWorld

# Matrix row order.
PROTOCOLS: Dict[str, Type[ProtocolWorld]] = {
    cls.name: cls
    for cls in (
        PoUwWorld,
        ProofOfLuckWorld,
        TwilightWorld,
        FastKittenWorld,
        CcfWorld,
        PhalaWorld,
        SecretWorld,
        TenWorld,
        BiteWorld,
    )
}

__all__ = ["PATCHED", "PROTOCOLS", "VULNERABLE", "ProtocolWorld"]
