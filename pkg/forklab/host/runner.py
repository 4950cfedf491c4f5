from __future__ import annotations
import logging
from typing import Any, Callable, List, Mapping, Optional, Protocol

from forklab.enclave.program import Rejected
from forklab.errors import ScriptError
from forklab.host.adversary import Host
from forklab.host.script import (
    Adopt,
    AdvanceTime,
    AttackScript,
    Clone,
    Condition,
    Deliver,
    Drop,
    HostAction,
    Invoke,
    Isolate,
    Launch,
    Modify,
    Repeat,
    Restart,
    SelectOutput,
    SubmitTx,
    Unisolate,
    action_name,
)
from forklab.ledger.chain import Tx

logger = logging.getLogger(__name__)

Predicate = Callable[[Any, List[Any]], bool]


class ScriptWorld(Protocol):
    """What a protocol offers the script runner: its vocabulary."""

    def message(self, name: str, args: Mapping[str, Any]) -> Any: ...

    def operation(self, name: str) -> Callable[..., Any]: ...

    def predicate(self, name: str) -> Predicate: ...

    def mutation(self, name: str) -> Callable[[Any], Any]: ...

    def sort_key(self, name: str) -> Callable[[Any], Any]: ...

    def transactions(self, value: Any, sender: str) -> List[Tx]: ...


class ScriptRunner:
    """Executes an AttackScript against a host, action by action, logging each one."""

    def __init__(self, host: Host, world: ScriptWorld) -> None:
        self.host = host
        self.world = world
        self.log = host.log

    def run(self, script: AttackScript) -> None:
        self.log.record("script.start", attack_kind=script.attack_kind, actions=len(script))
        for action in script.actions:
            self.execute(action)
        self.log.record("script.end", attack_kind=script.attack_kind)

    def _holds(self, cond: Optional[Condition]) -> bool:
        if cond is None:
            return True
        present = self.log.contains(cond.event, **dict(cond.match))
        return not present if cond.absent else present

    def execute(self, action: HostAction) -> None:
        name = action_name(action)
        if not self._holds(action.when):
            self.log.record("host.skip", action=name)
            return
        handler = getattr(self, f"_do_{name}")
        handler(action)

    def _do_launch(self, a: Launch) -> None:
        self.host.launch(a.alias, a.platform, a.program)

    def _do_restart(self, a: Restart) -> None:
        self.host.restart_with(a.alias, a.blob)

    def _do_clone(self, a: Clone) -> None:
        self.host.clone(a.source, a.alias, a.from_blob)

    def _do_isolate(self, a: Isolate) -> None:
        self.host.isolate(a.alias)

    def _do_unisolate(self, a: Unisolate) -> None:
        self.host.unisolate(a.alias, a.replay)

    def _do_deliver(self, a: Deliver) -> None:
        message = self.world.message(a.message, a.args)
        self.host.deliver(a.to, message, into=a.into)

    def _do_drop(self, a: Drop) -> None:
        self.host.drop(a.output)

    def _do_modify(self, a: Modify) -> None:
        self.host.modify(a.output, self.world.mutation(a.mutation), into=a.into, label=a.mutation)

    def _do_select_output(self, a: SelectOutput) -> None:
        self.host.select_output(
            list(a.candidates), self.world.predicate(a.predicate), a.into, fallback=a.fallback, label=a.predicate,
        )

    def _do_submit_tx(self, a: SubmitTx) -> None:
        captured = [self.host.output(name) for name in a.outputs if name in self.host.outputs]
        if a.sort_by:
            key = self.world.sort_key(a.sort_by)
            captured.sort(key=lambda c: key(c.value))
        accepted = None
        for c in captured:
            if isinstance(c.value, Rejected):
                continue
            txs = self.world.transactions(c.value, c.producer or "host")
            receipts = [self.host.submit_tx(tx) for tx in txs]
            ok = bool(txs) and all(r is not None for r in receipts)
            self.log.record("host.submit", output=c.name, accepted=ok)
            if ok and accepted is None:
                accepted = c
                if a.first_accepted:
                    break
        if a.into and accepted is not None:
            self.host.capture(a.into, accepted.value, producer=accepted.producer, handle=accepted.handle)

    def _do_advance_time(self, a: AdvanceTime) -> None:
        if a.dt < 0:
            raise ScriptError("advance_time needs a non-negative dt")
        self.host.advance_time(a.dt)

    def _do_invoke(self, a: Invoke) -> None:
        result = self.world.operation(a.op)(**dict(a.args))
        if a.into:
            self.host.capture(a.into, result)

    def _do_adopt(self, a: Adopt) -> None:
        self.host.adopt(a.alias, a.output)

    def _do_repeat(self, a: Repeat) -> None:
        if a.times < 0:
            raise ScriptError("repeat needs a non-negative count")
        for _ in range(a.times):
            for inner in a.actions:
                self.execute(inner)
