from __future__ import annotations
from fractions import Fraction
from typing import Any, Callable, Iterable, List, Tuple, TypeVar

S = TypeVar("S")
I = TypeVar("I")


def any_of_clones(p: float, c: int) -> float:
    """P(at least one of c independent instances succeeds), each with probability p."""
    if c < 1 or not 0.0 <= p <= 1.0:
        raise ValueError("need c >= 1 and 0 <= p <= 1")
    return 1.0 - (1.0 - p) ** c


def lottery_favored_win(c: int, k: int) -> Fraction:
    """A favoured client among k wins at least one of c uniform draws."""
    if c < 1 or k < 1:
        raise ValueError("need c >= 1 and k >= 1")
    return 1 - Fraction(k - 1, k) ** c


def lowest_nonce_share(c: int, m: int) -> Fraction:
    """c adversary draws against m honest draws of i.i.d. continuous nonces: P(min is adversarial)."""
    if c < 0 or m < 0 or c + m == 0:
        raise ValueError("need at least one participant")
    return Fraction(c, c + m)


def heartbeat_senders_per_block(n_workers: int, target: int = 20) -> int:
    return min(target, n_workers)


def heartbeat_gap_ms(n_workers: int, block_interval_ms: int, target: int = 20) -> float:
    return n_workers / min(target, n_workers) * block_interval_ms


def fold(step: Callable[[S, I], S], s0: S, inputs: Iterable[I]) -> S:
    s = s0
    for i in inputs:
        s = step(s, i)
    return s


def counter_step(state: dict, invocation: Tuple[str, Any]) -> dict:
    """Reference transition of the counter contract: increment, add n, get."""
    method, arg = invocation
    if method == "increment":
        return {"value": state["value"] + 1}
    if method == "add":
        return {"value": state["value"] + int(arg)}
    if method == "get":
        return dict(state)
    raise ValueError(f"unknown method {method!r}")


def rollback_states(s0: dict, i1: Tuple[str, Any], i2: Tuple[str, Any]) -> Tuple[dict, dict]:
    """(honest f(f(s0, i1), i2), rolled back f(s0, i2))."""
    return fold(counter_step, s0, [i1, i2]), fold(counter_step, s0, [i2])


def cloning_states(s0: dict, i1: Tuple[str, Any], i2: Tuple[str, Any]) -> List[dict]:
    return [counter_step(s0, i1), counter_step(s0, i2)]
