from __future__ import annotations
import logging
from dataclasses import dataclass, replace
from typing import Any, Tuple

from forklab.enclave import codec
from forklab.enclave.program import EnclaveProgram
from forklab.errors import PolicyViolation

logger = logging.getLogger(__name__)

POLICY_TAG = "stateless"


@dataclass(frozen=True, slots=True)
class StatelessPolicy:
    """Only immutable configuration survives a step; nothing mutable is ever sealed."""
    allow_sealed_config: bool = True


class _NoSealContext:
    """Step context that refuses to seal anything but the unchanged configuration."""

    def __init__(self, ctx: Any, program: str, config: Any, allow_config: bool) -> None:
        self._ctx = ctx
        self._program = program
        self._config = config
        self._allow_config = allow_config

    def __getattr__(self, attr: str) -> Any:
        return getattr(self._ctx, attr)

    def seal(self, payload: bytes) -> Any:
        if self._allow_config and payload == codec.encode(self._config):
            return self._ctx.seal(payload)
        raise PolicyViolation(f"{self._program} tried to seal state during a step")


def stateless_wrap(program: EnclaveProgram, policy: StatelessPolicy = StatelessPolicy()) -> EnclaveProgram:
    """
    Wrap a program so every step sees the same configuration state.

    Raises PolicyViolation if the program declares mutable persistent
    fields or asks to checkpoint its state, and at run time if the step
    tries to seal anything other than its configuration.
    """
    if program.persistent_fields:
        raise PolicyViolation(
            f"{program.name} persists mutable fields {list(program.persistent_fields)}"
        )
    if program.checkpoint:
        raise PolicyViolation(f"{program.name} checkpoints mutable state")

    inner = program.step

    def step(ctx: Any, state: Any, message: Any) -> Tuple[Any, Any]:
        guarded = _NoSealContext(ctx, program.name, state, policy.allow_sealed_config)
        _, output = inner(guarded, state, message)
        return state, output

    logger.debug("wrapped %s as stateless", program.name)
    return replace(program, step=step, policy=POLICY_TAG)


def is_stateless(program: EnclaveProgram) -> bool:
    return program.policy == POLICY_TAG
