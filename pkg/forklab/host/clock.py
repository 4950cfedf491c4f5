from __future__ import annotations
from typing import Any, Callable, Generator

import simpy


class SimClock:
    """
    Logical millisecond clock over a simpy environment.

    Events due at the same instant run in insertion order; `advance`
    includes events scheduled exactly at the target time.
    """

    def __init__(self) -> None:
        self.env = simpy.Environment(initial_time=0)

    @property
    def now(self) -> int:
        return int(round(self.env.now))

    def schedule(self, delay: int, callback: Callable[[], Any]) -> None:
        if delay < 0:
            raise ValueError("delay must be non-negative")

        def _fire() -> Generator[Any, Any, None]:
            yield self.env.timeout(delay)
            callback()

        self.env.process(_fire())

    def process(self, generator: Generator[Any, Any, Any]) -> simpy.Process:
        return self.env.process(generator)

    def advance(self, dt: int) -> int:
        if dt < 0:
            raise ValueError("dt must be non-negative")
        target = self.env.now + dt
        if dt > 0:
            self.env.run(until=target)
        while self.env.peek() <= target:
            self.env.step()
        return self.now
