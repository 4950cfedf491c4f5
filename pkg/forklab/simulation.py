from __future__ import annotations
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from forklab import rng as rngs
from forklab.enclave.crypto import CryptoProvider, make_provider
from forklab.enclave.runtime import EnclaveRuntime
from forklab.host.adversary import Host
from forklab.host.clock import SimClock
from forklab.host.events import EventLog
from forklab.ledger.chain import PRESETS, ConsensusMode, Ledger


@dataclass(slots=True)
class Simulation:
    """Everything one scenario owns. Nothing here is shared between scenarios."""
    seed: int
    crypto: CryptoProvider
    clock: SimClock
    log: EventLog
    runtime: EnclaveRuntime
    ledger: Ledger
    host: Host
    rng: np.random.Generator = field(repr=False)

    @classmethod
    def create(
        cls,
        seed: int,
        consensus: Optional[ConsensusMode] = None,
        crypto: Optional[CryptoProvider] = None,
    ) -> "Simulation":
        crypto = crypto or make_provider()
        clock = SimClock()
        log = EventLog(clock)
        runtime = EnclaveRuntime(seed, crypto)
        runtime.time_source = lambda: clock.now
        ledger = Ledger(
            consensus or PRESETS["final"],
            clock=clock,
            log=log,
            rng=rngs.stream(seed, rngs.LEDGER_STREAM),
        )
        host = Host(runtime, ledger, log)
        return cls(
            seed=seed,
            crypto=crypto,
            clock=clock,
            log=log,
            runtime=runtime,
            ledger=ledger,
            host=host,
            rng=rngs.stream(seed, rngs.CLIENT_STREAM),
        )
