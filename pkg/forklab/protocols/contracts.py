"""Small enclave programs shared by protocols and tests."""
from __future__ import annotations
from dataclasses import dataclass
from typing import Any, Dict, List, Tuple

from forklab.enclave.program import EnclaveProgram, ProgramFault


@dataclass(frozen=True, slots=True)
class Invocation:
    method: str
    arg: Any = None


def apply_counter(value: int, method: str, arg: Any = None) -> int:
    if method == "increment":
        return value + 1
    if method == "add":
        return value + int(arg)
    if method == "get":
        return value
    raise ProgramFault("UnknownMethod", method)


def counter_contract(name: str = "counter-contract", start: int = 1) -> EnclaveProgram:
    """Persistent counter; every change is checkpointed to a sealed blob."""

    def init() -> Dict[str, Any]:
        return {"value": start}

    def step(ctx: Any, state: Dict[str, Any], msg: Invocation) -> Tuple[Dict[str, Any], Any]:
        value = apply_counter(state["value"], msg.method, msg.arg)
        return {"value": value}, value

    return EnclaveProgram(
        name=name,
        init=init,
        step=step,
        params={"start": start},
        persistent_fields=("value",),
        checkpoint=True,
    )


def flip_contract(name: str = "flip-contract") -> EnclaveProgram:
    def init() -> Dict[str, Any]:
        return {"flag": False}

    def step(ctx: Any, state: Dict[str, Any], msg: Invocation) -> Tuple[Dict[str, Any], Any]:
        if msg.method == "toggle":
            flag = not state["flag"]
            return {"flag": flag}, flag
        if msg.method == "get":
            return state, state["flag"]
        raise ProgramFault("UnknownMethod", msg.method)

    return EnclaveProgram(name=name, init=init, step=step, persistent_fields=("flag",), checkpoint=True)


def mixer_program(name: str = "mixer") -> EnclaveProgram:
    """Outputs a random permutation of its input batch; keeps nothing between calls."""

    def init() -> Dict[str, Any]:
        return {}

    def step(ctx: Any, state: Dict[str, Any], msg: Invocation) -> Tuple[Dict[str, Any], List[Any]]:
        items = list(msg.arg or [])
        order = ctx.rng.permutation(len(items))
        return state, [items[int(i)] for i in order]

    return EnclaveProgram(name=name, init=init, step=step, deterministic=False, uses_randomness=True)
