from __future__ import annotations
import logging
from dataclasses import dataclass
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

from forklab.enclave.program import Rejected
from forklab.enclave.runtime import EnclaveInstance, EnclaveRuntime, SealedBlob
from forklab.errors import DeadInstance, IntegrityFailure, ScriptError, ValidationFailed
from forklab.host.events import EventLog
from forklab.ledger.chain import Block, Ledger, Receipt, Tx
from forklab.ledger.views import ChainView, NodeConnection, honest_connections, read_view

logger = logging.getLogger(__name__)

RelayFactory = Callable[[Block], Any]
RelayHook = Callable[[str, Any], None]


@dataclass(slots=True)
class Captured:
    """An output the host holds, with the instance that produced it (if any)."""
    name: str
    value: Any
    producer: Optional[str] = None
    handle: Optional[int] = None


@dataclass(slots=True)
class _Relay:
    factory: RelayFactory
    on_output: Optional[RelayHook]
    missed: List[Block]


class Host:
    """
    The untrusted host. It owns every instance handle, all sealed blobs,
    the messages in flight and the ledger connection of each enclave.
    It never holds enclave keys.
    """

    def __init__(self, runtime: EnclaveRuntime, ledger: Ledger, log: EventLog) -> None:
        self.runtime = runtime
        self.ledger = ledger
        self.clock = ledger.clock
        self.log = log
        self.instances: Dict[str, EnclaveInstance] = {}
        self.outputs: Dict[str, Captured] = {}
        self._blobs: Dict[Tuple[str, bytes], List[SealedBlob]] = {}
        self._current_blob: Dict[int, SealedBlob] = {}
        self._isolated: Dict[str, int] = {}
        self._relays: Dict[str, _Relay] = {}
        self._connections: Dict[str, List[NodeConnection]] = {}
        self._restart_hooks: List[Callable[[str], None]] = []
        ledger.on_block(self._on_block)

    # --- instances ---

    def instance(self, alias: str) -> EnclaveInstance:
        try:
            return self.instances[alias]
        except KeyError:
            raise ScriptError(f"unknown instance alias {alias!r}") from None

    def alias_of(self, handle: int) -> Optional[str]:
        for alias, inst in self.instances.items():
            if inst.handle == handle:
                return alias
        return None

    def launch(self, alias: str, platform_id: str, program: str) -> EnclaveInstance:
        if alias in self.instances and self.instances[alias].alive:
            raise ScriptError(f"alias {alias!r} is already bound to a live instance")
        measurement = self.runtime.registry.measurement_of(program)
        if measurement is None:
            raise ScriptError(f"unknown program {program!r}")
        inst = self.runtime.launch(platform_id, measurement)
        self.instances[alias] = inst
        self.log.record("host.launch", alias=alias, platform=platform_id, program=program, handle=inst.handle)
        return inst

    def clone(self, source: str, alias: str, from_blob: str = "none") -> EnclaveInstance:
        src = self.instance(source)
        if not src.alive:
            raise DeadInstance(f"cannot clone {source}: instance is not live")
        inst = self.runtime.launch(src.platform_id, src.measurement)
        blob = self.pick_blob(src, from_blob)
        if blob is not None:
            self.runtime.restore_state(inst, blob)
            self._current_blob[inst.handle] = blob
        old = self.instances.get(alias)
        if old is not None and old.alive and old is not src:
            self.runtime.terminate(old)
        self.instances[alias] = inst
        if source in self._relays and alias not in self._relays:
            r = self._relays[source]
            self._relays[alias] = _Relay(r.factory, r.on_output, [])
        if source in self._connections and alias not in self._connections:
            self._connections[alias] = list(self._connections[source])
        self.log.record(
            "host.clone", source=source, alias=alias, handle=inst.handle,
            blob=blob.seq_hint if blob is not None else None,
        )
        return inst

    def restart_with(self, alias: str, blob_ref: str = "none") -> EnclaveInstance:
        old = self.instance(alias)
        blob = self.pick_blob(old, blob_ref)
        inst = self.runtime.launch(old.platform_id, old.measurement)
        if blob is not None:
            try:
                self.runtime.restore_state(inst, blob)
            except IntegrityFailure:
                # the alias keeps the old instance
                self.runtime.terminate(inst)
                self.log.record("host.restart_failed", alias=alias, handle=inst.handle, blob=blob.seq_hint)
                raise
            self._current_blob[inst.handle] = blob
        self.runtime.terminate(old)
        self.instances[alias] = inst
        self.log.record(
            "host.restart", alias=alias, old_handle=old.handle, handle=inst.handle,
            blob=blob.seq_hint if blob is not None else None,
        )
        for hook in self._restart_hooks:
            hook(alias)
        return inst

    def on_restart(self, hook: Callable[[str], None]) -> None:
        self._restart_hooks.append(hook)

    def adopt(self, alias: str, output: str) -> EnclaveInstance:
        captured = self.output(output)
        if captured.handle is None:
            raise ScriptError(f"output {output!r} was not produced by an enclave")
        chosen = self.runtime.instance(captured.handle)
        current = self.instances.get(alias)
        if current is not None and current is not chosen and current.alive:
            self.runtime.terminate(current)
        for other, inst in list(self.instances.items()):
            if inst is chosen and other != alias:
                del self.instances[other]
        self.instances[alias] = chosen
        self.log.record("host.adopt", alias=alias, output=output, handle=chosen.handle)
        return chosen

    # --- sealed storage ---

    def blobs_for(self, inst: EnclaveInstance) -> List[SealedBlob]:
        return list(self._blobs.get((inst.platform_id, inst.measurement.digest), []))

    def pick_blob(self, inst: EnclaveInstance, ref: str) -> Optional[SealedBlob]:
        """
        Resolve `none`, `first`, `latest`, `previous` or `seq:N` against the
        binding's history. `own` is the blob holding the instance's current state.
        """
        ref = (ref or "none").strip().lower()
        if ref == "none":
            return None
        if ref == "own":
            return self._current_blob.get(inst.handle)
        history = self.blobs_for(inst)
        if not history:
            return None
        if ref == "first":
            return history[0]
        if ref == "latest":
            return history[-1]
        if ref == "previous":
            return history[-2] if len(history) > 1 else history[0]
        if ref.startswith("seq:"):
            seq = int(ref[4:])
            for blob in history:
                if blob.seq_hint == seq:
                    return blob
            raise ScriptError(f"no blob with seq_hint {seq}")
        raise ScriptError(f"unknown blob reference {ref!r}")

    def store_blob(self, blob: SealedBlob) -> None:
        self._blobs.setdefault(blob.binding, []).append(blob)

    # --- messages ---

    def deliver(self, alias: str, message: Any, into: Optional[str] = None) -> Any:
        inst = self.instance(alias)
        output = self.runtime.step(inst, message)
        for blob in inst.outbox:
            self.store_blob(blob)
            self._current_blob[inst.handle] = blob
            self.log.record("enclave.seal", alias=alias, handle=inst.handle, seq_hint=blob.seq_hint)
        inst.outbox.clear()
        if isinstance(output, Rejected):
            self.log.record("enclave.reject", alias=alias, handle=inst.handle, code=output.code, detail=output.detail,
                            message=type(message).__name__)
        else:
            self.log.record("enclave.output", alias=alias, handle=inst.handle, message=type(message).__name__,
                            output=output)
        if into:
            self.capture(into, output, producer=alias, handle=inst.handle)
        return output

    def capture(self, name: str, value: Any, producer: Optional[str] = None, handle: Optional[int] = None) -> Captured:
        captured = Captured(name, value, producer, handle)
        self.outputs[name] = captured
        return captured

    def output(self, name: str) -> Captured:
        try:
            return self.outputs[name]
        except KeyError:
            raise ScriptError(f"no captured output named {name!r}") from None

    def value(self, name: str) -> Any:
        return self.output(name).value

    def drop(self, name: str) -> None:
        self.outputs.pop(name, None)
        self.log.record("host.drop", output=name)

    def modify(self, name: str, mutation: Callable[[Any], Any], into: Optional[str] = None, label: str = "") -> Any:
        captured = self.output(name)
        changed = mutation(captured.value)
        target = into or name
        self.capture(target, changed, producer=captured.producer, handle=captured.handle)
        self.log.record("host.modify", output=name, into=target, mutation=label)
        return changed

    def select_output(
        self,
        candidates: Sequence[str],
        predicate: Callable[[Any, List[Any]], bool],
        into: str,
        fallback: Optional[str] = None,
        label: str = "",
    ) -> Captured:
        if not candidates:
            raise ScriptError("select_output needs at least one candidate")
        pool = [self.output(c) for c in candidates]
        values = [c.value for c in pool]
        chosen = next((c for c in pool if predicate(c.value, values)), None)
        if chosen is None:
            chosen = self.output(fallback) if fallback else pool[0]
        self.capture(into, chosen.value, producer=chosen.producer, handle=chosen.handle)
        self.log.record("host.select", candidates=list(candidates), chosen=chosen.name, predicate=label,
                        producer=chosen.producer)
        return chosen

    # --- ledger ---

    def submit_tx(self, tx: Tx) -> Optional[Receipt]:
        try:
            return self.ledger.submit_tx(tx)
        except ValidationFailed:
            return None

    def advance_time(self, dt: int) -> List[Block]:
        blocks = self.ledger.advance(dt)
        self.log.record("host.advance", dt=dt, height=self.ledger.height)
        return blocks

    def attach_relay(self, alias: str, factory: RelayFactory, on_output: Optional[RelayHook] = None) -> None:
        """Forward every new canonical head to `alias` (the honest relayer)."""
        self._relays[alias] = _Relay(factory, on_output, [])

    def _on_block(self, block: Block) -> None:
        for alias, relay in list(self._relays.items()):
            inst = self.instances.get(alias)
            if inst is None or not inst.alive:
                continue
            if alias in self._isolated:
                relay.missed.append(block)
                continue
            self._relay_deliver(alias, relay, block)

    def _relay_deliver(self, alias: str, relay: _Relay, block: Block) -> None:
        out = self.deliver(alias, relay.factory(block))
        if relay.on_output is not None:
            relay.on_output(alias, out)

    def isolate(self, alias: str) -> None:
        inst = self.instance(alias)
        if not inst.alive:
            raise DeadInstance(f"cannot isolate {alias}: instance is not live")
        self._isolated[alias] = self.ledger.height
        self.log.record("host.isolate", alias=alias, height=self.ledger.height)

    def unisolate(self, alias: str, replay: bool = True) -> None:
        self._isolated.pop(alias, None)
        relay = self._relays.get(alias)
        missed = relay.missed if relay else []
        self.log.record("host.unisolate", alias=alias, replay=replay, missed=len(missed))
        if relay is not None:
            pending, relay.missed = list(missed), []
            if replay:
                for block in pending:
                    self._relay_deliver(alias, relay, block)

    def is_isolated(self, alias: str) -> bool:
        return alias in self._isolated

    # --- connectivity ---

    def connect(self, alias: str, connections: Sequence[NodeConnection]) -> None:
        self._connections[alias] = list(connections)
        self.log.record("host.connect", alias=alias, connections=list(connections))

    def view_for(self, alias: str) -> ChainView:
        connections = self._connections.get(alias)
        if connections is None:
            connections = honest_connections()
        if alias in self._isolated:
            lag = self.ledger.height - self._isolated[alias]
            connections = [NodeConnection.stale(c.node_id, lag) for c in connections]
        return read_view(self.ledger, connections, served_to=alias)
