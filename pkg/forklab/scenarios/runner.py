from __future__ import annotations
import logging
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Tuple

from forklab.enclave.crypto import CryptoProvider, make_provider
from forklab.errors import ConfigError, CounterUnsupported, PolicyViolation, ScriptError
from forklab.host.events import EventLog
from forklab.host.runner import ScriptRunner
from forklab.host.script import AttackOutcome, Cell
from forklab.protocols import ProtocolWorld
from forklab.scenarios.config import ScenarioConfig, expected_cell
from forklab.simulation import Simulation

logger = logging.getLogger(__name__)


@dataclass(slots=True)
class ScenarioResult:
    """What one scenario run leaves behind: its verdict and its full event log."""
    config: ScenarioConfig
    outcome: AttackOutcome
    log: EventLog = field(repr=False)

    @property
    def cell(self) -> Cell:
        return self.outcome.cell

    def expectation_met(self) -> Optional[bool]:
        if self.config.expect is None:
            return None
        return self.cell == expected_cell(self.config.expect)

    def to_record(self) -> Dict[str, Any]:
        return {
            "scenario": self.config.name,
            "protocol": self.config.protocol,
            "variant": self.config.variant,
            "attack": self.config.attack,
            "seed": self.config.seed,
            "outcome": self.outcome.to_record(),
            "log_digest": self.log.digest(),
        }

    def to_rows(self) -> List[Dict[str, Any]]:
        return [{
            "scenario": self.config.name,
            "protocol": self.config.protocol,
            "variant": self.config.variant,
            "attack": self.config.attack,
            "seed": self.config.seed,
            "cell": self.cell.value,
            "evidence": self.outcome.evidence_summary(),
        }]


def build_world(config: ScenarioConfig, crypto: Optional[CryptoProvider] = None) -> Tuple[Simulation, ProtocolWorld]:
    """Fresh simulation plus the protocol world set up inside it, connectivity applied."""
    sim = Simulation.create(config.seed, config.consensus_mode(), crypto or make_provider())
    sim.log.record(
        "scenario.start",
        name=config.name,
        protocol=config.protocol,
        variant=config.variant,
        attack=config.attack,
        seed=config.seed,
        consensus=sim.ledger.mode.name,
        block_interval_ms=sim.ledger.mode.block_interval_ms,
    )
    world = config.world_class(sim, config.variant, config.world_params())
    try:
        world.setup()
    except CounterUnsupported as e:
        raise ConfigError("params.counter_enabled", str(e)) from None
    except PolicyViolation as e:
        raise ConfigError("mitigations", str(e)) from None
    # aliases may name clones the script has not created yet
    for alias, specs in config.connectivity.items():
        sim.host.connect(alias, [s.to_connection() for s in specs])
    return sim, world


def run_scenario(config: ScenarioConfig, *, crypto: Optional[CryptoProvider] = None) -> ScenarioResult:
    """
    Run one scenario start to finish.

    Deterministic for a fixed config: the same config twice gives the
    same outcome and a byte-identical event log.
    """
    sim, world = build_world(config, crypto)
    kind = config.attack_kind
    script = config.attack_script()
    if script is None:
        script = world.default_script(kind)
    try:
        ScriptRunner(sim.host, world).run(script)
    except CounterUnsupported as e:
        raise ConfigError("params.counter_enabled", str(e)) from None
    except ScriptError as e:
        if config.script is None:
            raise
        raise ConfigError("script", str(e)) from None
    outcome = world.judge(kind)
    sim.log.record("scenario.verdict", **outcome.to_record())
    logger.info("%s: %s (%s)", config.name, outcome.cell.value, outcome.evidence_summary() or "no evidence")
    return ScenarioResult(config, outcome, sim.log)
