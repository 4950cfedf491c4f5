"""
Scenario files: one YAML document per scenario, validated with pydantic.

A scenario fully determines a run: protocol, variant, attack, consensus,
seed, connectivity and (optionally) a script that replaces the built-in
attack for that protocol.
"""
from __future__ import annotations
import logging
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Union

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from forklab.errors import ConfigError, IoError, ScriptError
from forklab.host.script import AttackKind, AttackScript, Cell, parse_script
from forklab.ledger.chain import PRESETS, ConsensusMode, EventualMode, FinalMode
from forklab.ledger.views import NodeConnection
from forklab.protocols import PROTOCOLS, VULNERABLE, ProtocolWorld

logger = logging.getLogger(__name__)

Variant = Literal["vulnerable", "patched"]
Expectation = Literal["succeeds", "fails", "not-applicable"]
ServeSpelling = Literal["honest", "stale", "silent"]

_EXPECT_CELLS: Dict[str, Cell] = {
    "succeeds": Cell.SUCCEEDS,
    "fails": Cell.FAILS,
    "not-applicable": Cell.NOT_APPLICABLE,
}


def normalize_expectation(raw: Optional[str]) -> Optional[Expectation]:
    """
    Accept the spellings people actually type for an expected verdict.

    Returns None for an empty value; raises ConfigError for anything else
    it does not recognise.
    """
    cleaned = (raw or "").strip().lower().replace("_", "-")
    if not cleaned:
        return None
    if cleaned in {"succeeds", "success", "succeeded", "yes"}:
        return "succeeds"
    if cleaned in {"fails", "fail", "failed", "no"}:
        return "fails"
    if cleaned in {"not-applicable", "notapplicable", "n/a", "na"}:
        return "not-applicable"
    raise ConfigError("expect", f"unknown expectation {raw!r}")


def expected_cell(expect: Expectation) -> Cell:
    return _EXPECT_CELLS[expect]


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class ConsensusSpec(_Strict):
    preset: str = "final"
    block_interval_ms: Optional[int] = Field(default=None, gt=0)
    fork_probability: Optional[float] = Field(default=None, ge=0.0, le=1.0)
    confirmation_depth: Optional[int] = Field(default=None, ge=0)

    @field_validator("preset")
    @classmethod
    def _known_preset(cls, v: str) -> str:
        v = v.strip().lower()
        if v not in PRESETS:
            raise ValueError(f"unknown preset {v!r} (choose from {sorted(PRESETS)})")
        return v

    def to_mode(self) -> ConsensusMode:
        base = PRESETS[self.preset]
        interval = self.block_interval_ms or base.block_interval_ms
        if isinstance(base, FinalMode):
            if self.fork_probability not in (None, 0.0):
                raise ConfigError("consensus.fork_probability", "final consensus never forks")
            return FinalMode(interval)
        return EventualMode(
            interval,
            base.fork_probability if self.fork_probability is None else self.fork_probability,
            base.confirmation_depth if self.confirmation_depth is None else self.confirmation_depth,
        )


class ConnectionSpec(_Strict):
    node: str
    serve: ServeSpelling = "honest"
    lag: int = Field(default=0, ge=0)

    def to_connection(self) -> NodeConnection:
        if self.serve == "stale":
            return NodeConnection.stale(self.node, self.lag)
        if self.serve == "silent":
            return NodeConnection.silent(self.node)
        return NodeConnection.honest_node(self.node)


class ScenarioConfig(_Strict):
    """
    One scenario file.

    `params` are the protocol's own parameters; `mitigations` holds
    overrides for the countermeasure knobs (timestamp mode, freshness
    window, ...) and is merged into them. `in_matrix: false` keeps an
    extra scenario out of the matrix.
    """
    name: str
    protocol: str
    variant: Variant = VULNERABLE
    attack: Literal["rollback", "cloning", "none"] = "none"
    seed: int = Field(default=0, ge=0, lt=2**64)
    trials: int = Field(default=0, ge=0)
    consensus: Optional[ConsensusSpec] = None
    params: Dict[str, Any] = Field(default_factory=dict)
    mitigations: Dict[str, Any] = Field(default_factory=dict)
    connectivity: Dict[str, List[ConnectionSpec]] = Field(default_factory=dict)
    script: Optional[List[Dict[str, Any]]] = None
    expect: Optional[Expectation] = None
    in_matrix: bool = True
    description: str = ""

    @field_validator("expect", mode="before")
    @classmethod
    def _expect_spelling(cls, v: Any) -> Any:
        if v is None or isinstance(v, str):
            return normalize_expectation(v)
        return v

    @field_validator("protocol")
    @classmethod
    def _known_protocol(cls, v: str) -> str:
        if v not in PROTOCOLS:
            raise ValueError(f"unknown protocol {v!r} (choose from {list(PROTOCOLS)})")
        return v

    @model_validator(mode="after")
    def _fits_protocol(self) -> "ScenarioConfig":
        world = PROTOCOLS[self.protocol]
        if self.variant not in world.variants:
            raise ValueError(f"variant: {self.protocol} has no {self.variant!r} variant")
        for section in ("params", "mitigations"):
            for key in getattr(self, section):
                if key not in world.defaults:
                    raise ValueError(f"{section}.{key}: unknown parameter for {self.protocol}")
        clash = sorted(set(self.params) & set(self.mitigations))
        if clash:
            raise ValueError(f"mitigations.{clash[0]}: also set under params")
        return self

    # --- derived ---

    @property
    def world_class(self) -> type[ProtocolWorld]:
        return PROTOCOLS[self.protocol]

    @property
    def attack_kind(self) -> AttackKind:
        return AttackKind(self.attack)

    def world_params(self) -> Dict[str, Any]:
        return {**self.params, **self.mitigations}

    def consensus_mode(self) -> ConsensusMode:
        if self.consensus is None:
            return PRESETS[self.world_class.consensus]
        return self.consensus.to_mode()

    def attack_script(self) -> Optional[AttackScript]:
        """The file's script, or None to use the protocol's built-in one."""
        if self.script is None:
            return None
        try:
            return parse_script(self.script, self.attack_kind)
        except ScriptError as e:
            raise ConfigError("script", str(e)) from None

    def with_seed(self, seed: Optional[int]) -> "ScenarioConfig":
        if seed is None:
            return self
        return self.model_copy(update={"seed": int(seed) % 2**64})

    def row_key(self) -> tuple[str, str]:
        return self.protocol, self.variant


def _config_error(err: ValidationError) -> ConfigError:
    first = err.errors()[0]
    path = ".".join(str(p) for p in first.get("loc", ()))
    message = str(first.get("msg", "invalid value")).removeprefix("Value error, ")
    if not path and ": " in message:
        # model-level checks name their own field
        path, message = message.split(": ", 1)
    return ConfigError(path, message)


def parse_scenario(raw: Any) -> ScenarioConfig:
    if not isinstance(raw, dict):
        raise ConfigError("", "a scenario file holds a single mapping")
    try:
        return ScenarioConfig.model_validate(raw)
    except ValidationError as e:
        raise _config_error(e) from None


def load_scenario(path: Union[str, Path]) -> ScenarioConfig:
    path = Path(path)
    try:
        raw = yaml.safe_load(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError("", f"no scenario file at {path}") from None
    except OSError as e:
        raise IoError(str(path), e) from None
    except yaml.YAMLError as e:
        raise ConfigError("", f"{path.name}: not valid YAML ({e})") from None
    config = parse_scenario(raw)
    logger.debug("loaded scenario %s from %s", config.name, path)
    return config


def dump_scenario(config: ScenarioConfig) -> str:
    data = config.model_dump(mode="json", exclude_defaults=True)
    data = {"name": config.name, "protocol": config.protocol, **data}
    return yaml.safe_dump(data, sort_keys=False)


def load_corpus(directory: Union[str, Path]) -> List[ScenarioConfig]:
    """Every *.yaml / *.yml under `directory`, in path order."""
    root = Path(directory)
    if not root.is_dir():
        raise ConfigError("corpus", f"{root} is not a directory")
    files = sorted(p for p in root.rglob("*") if p.suffix in {".yaml", ".yml"})
    configs: List[ScenarioConfig] = []
    for f in files:
        try:
            configs.append(load_scenario(f))
        except ConfigError as e:
            raise ConfigError(e.path, f"{f.name}: {e.message}") from None
    return configs
