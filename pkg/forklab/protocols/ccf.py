"""
CCF-style replicated key-value store. Nodes move through views, commit
every write to the ledger, and clients cache the last view they saw.
"""
from __future__ import annotations
import logging
from dataclasses import dataclass
from typing import Any, Dict, List, Tuple, Union

from forklab.enclave import codec
from forklab.enclave.program import EnclaveProgram, ProgramFault, Rejected
from forklab.enclave.runtime import EnclaveContext
from forklab.host.script import (
    AdvanceTime,
    AttackKind,
    AttackOutcome,
    AttackScript,
    Clone,
    Evidence,
    EvidenceKind,
    Invoke,
    Restart,
)
from forklab.ledger.chain import Block, Tx
from forklab.mitigations.serialization import (
    COMMIT_KIND,
    ReplayRecovery,
    StateCommit,
    StateCommitValidator,
    StateOnLedger,
    replay_recover,
)
from forklab.protocols.base import VULNERABLE, ProtocolWorld

logger = logging.getLogger(__name__)

NODE = "ccf-node"
CONTRACT = "ccf-kvs"
VIEW_KIND = "ccf.view"
GENESIS_DIGEST = codec.digest("ccf-genesis")


@dataclass(frozen=True, slots=True)
class Connect:
    pass


@dataclass(frozen=True, slots=True)
class ViewInfo:
    view: int
    log_digest: bytes


@dataclass(frozen=True, slots=True)
class Write:
    key: str
    value: Any
    anchor_hash: bytes


@dataclass(frozen=True, slots=True)
class Executed:
    view: int
    key: str
    value: Any
    commit: StateCommit


@dataclass(frozen=True, slots=True)
class ViewChange:
    pass


@dataclass(frozen=True, slots=True)
class Recover:
    blocks: Tuple[Block, ...]


@dataclass(frozen=True, slots=True)
class Aborted:
    reason: str
    cached: int
    got: int


def log_step(prev: bytes, view: int, key: str, value: Any) -> bytes:
    return codec.digest(["ccf-log", prev, view, key, value])


def node_init() -> Dict[str, Any]:
    return {"view": 1, "log_digest": GENESIS_DIGEST, "kv": {}}


def apply_ledger_tx(state: Dict[str, Any], tx: Tx) -> Dict[str, Any]:
    """Replay fold: view changes and committed writes, as they appear on the ledger."""
    if tx.kind == VIEW_KIND:
        return {**state, "view": max(state["view"], int(tx.payload["view"]))}
    commit: StateCommit = tx.payload["commit"]
    if commit.contract != CONTRACT:
        return state
    key, value, view = tx.payload["key"], tx.payload["value"], int(tx.payload["view"])
    expected = log_step(state["log_digest"], view, key, value)
    if commit.prev_digest != state["log_digest"] or commit.new_digest != expected:
        raise ProgramFault("BrokenLog", f"commit at {commit.new_digest.hex()[:12]} does not extend the log")
    return {"view": max(state["view"], view), "log_digest": expected, "kv": {**state["kv"], key: value}}


def node_program() -> EnclaveProgram:
    def step(ctx: EnclaveContext, state: Dict[str, Any], msg: Any) -> Tuple[Dict[str, Any], Any]:
        if isinstance(msg, Connect):
            return state, ViewInfo(state["view"], state["log_digest"])
        if isinstance(msg, Write):
            new_digest = log_step(state["log_digest"], state["view"], msg.key, msg.value)
            commit = StateCommit(CONTRACT, state["log_digest"], new_digest, msg.anchor_hash)
            new = {"view": state["view"], "log_digest": new_digest, "kv": {**state["kv"], msg.key: msg.value}}
            return new, Executed(state["view"], msg.key, msg.value, commit)
        if isinstance(msg, ViewChange):
            return {**state, "view": state["view"] + 1}, state["view"] + 1
        if isinstance(msg, Recover):
            recovered = replay_recover(ReplayRecovery(), msg.blocks, node_init(), apply_ledger_tx, {COMMIT_KIND, VIEW_KIND})
            return recovered.state, ViewInfo(recovered.state["view"], recovered.state["log_digest"])
        raise ProgramFault("UnknownMessage", type(msg).__name__)

    return EnclaveProgram(
        name=NODE,
        init=node_init,
        step=step,
        persistent_fields=("view", "log_digest", "kv"),
        checkpoint=True,
    )


class CcfWorld(ProtocolWorld):
    """Primary P serves clients A, B and C; every write is committed to the ledger."""

    name = "CcfKvs"
    title = "CCF key-value store"
    variants = (VULNERABLE,)
    defaults = {"anchor_window": 1}

    def setup(self) -> None:
        self.runtime.add_platform("P1")
        self.register(node_program())
        self.commits = StateCommitValidator(StateOnLedger(anchor_window=int(self.params["anchor_window"])))
        self.commits.register_genesis(CONTRACT, GENESIS_DIGEST)
        self.ledger.register_tx_validator(COMMIT_KIND, self.commits)
        self.host.launch("P", "P1", NODE)
        self.cached_view: Dict[str, int] = {}
        self.host.advance_time(self.ledger.mode.block_interval_ms)

    # --- clients ---

    def ccf_connect(self, client: str, alias: str) -> Union[int, Aborted]:
        info = self.host.deliver(alias, Connect())
        if isinstance(info, Rejected):
            return Aborted(info.code, self.cached_view.get(client, 0), -1)
        cached = self.cached_view.get(client, 0)
        if info.view < cached:
            self.log.record("ccf.abort", client=client, alias=alias, reason="ViewMismatch", cached=cached, got=info.view)
            return Aborted("ViewMismatch", cached, info.view)
        self.cached_view[client] = info.view
        self.log.record("ccf.connect", client=client, alias=alias, view=info.view)
        return info.view

    def ccf_submit(self, client: str, alias: str, key: str, value: Any) -> Union[Executed, Aborted, Rejected]:
        """Connect, write, and treat the write as done only once its commit reaches the ledger."""
        view = self.ccf_connect(client, alias)
        if isinstance(view, Aborted):
            return view
        result = self.host.deliver(alias, Write(key, value, self.ledger.head.hash))
        if isinstance(result, Rejected):
            return result
        tx = Tx(COMMIT_KIND, alias, {"commit": result.commit, "key": key, "value": value, "view": result.view})
        committed = self.host.submit_tx(tx) is not None
        self.log.record("ccf.result", client=client, alias=alias, key=key, view=result.view, committed=committed,
                        prev=result.commit.prev_digest, new=result.commit.new_digest)
        return result

    # --- vocabulary ---

    def op_connect(self, client: str, alias: str = "P") -> Any:
        return self.ccf_connect(client, alias)

    def op_submit(self, client: str, key: str, value: Any, alias: str = "P") -> Any:
        return self.ccf_submit(client, alias, key, value)

    def op_view_change(self, alias: str = "P") -> int:
        view = self.host.deliver(alias, ViewChange())
        self.host.submit_tx(Tx(VIEW_KIND, alias, {"view": view}))
        return view

    def op_recover(self, alias: str = "P") -> Any:
        view = self.host.view_for(alias)
        info = self.host.deliver(alias, Recover(view.blocks))
        self.log.record("ccf.recover", alias=alias, height=view.height,
                        view=info.view if isinstance(info, ViewInfo) else None)
        return info

    # --- scripts ---

    def _history(self) -> Tuple[Any, ...]:
        interval = self.ledger.mode.block_interval_ms
        return (
            Invoke("connect", {"client": "A"}),
            Invoke("connect", {"client": "B"}),
            Invoke("submit", {"client": "A", "key": "k1", "value": 1}),
            AdvanceTime(interval),
        )

    def default_script(self, kind: AttackKind) -> AttackScript:
        interval = self.ledger.mode.block_interval_ms
        if kind == AttackKind.CLONING:
            actions = (
                *self._history(),
                Clone("P", "P2", "own"),
                Invoke("view_change"),
                Invoke("submit", {"client": "B", "key": "k2", "value": 2}),
                AdvanceTime(interval),
                Invoke("connect", {"client": "B", "alias": "P2"}),
                Invoke("submit", {"client": "A", "key": "k3", "value": 3, "alias": "P2"}),
                AdvanceTime(interval),
            )
            return AttackScript(actions, kind)
        if kind == AttackKind.ROLLBACK:
            actions = (
                *self._history(),
                Invoke("view_change"),
                Invoke("submit", {"client": "B", "key": "k2", "value": 2}),
                AdvanceTime(interval),
                Restart("P", "first"),
                Invoke("connect", {"client": "B"}),
                Invoke("submit", {"client": "C", "key": "k3", "value": 3}),
                AdvanceTime(interval),
            )
            return AttackScript(actions, kind)
        actions = (
            *self._history(),
            Invoke("view_change"),
            Invoke("submit", {"client": "B", "key": "k2", "value": 2}),
            AdvanceTime(interval),
            Restart("P", "none"),
            Invoke("recover"),
            Invoke("submit", {"client": "B", "key": "k3", "value": 3}),
            AdvanceTime(interval),
        )
        return AttackScript(actions, kind)

    def judge(self, kind: AttackKind) -> AttackOutcome:
        evidence: List[Evidence] = []
        aborts = self.log.find("ccf.abort", reason="ViewMismatch")
        if aborts:
            evidence.append(Evidence(EvidenceKind.VIEW_MISMATCH_DETECTED, {"count": len(aborts)},
                                     tuple(e.seq for e in aborts)))
        evidence += self.rejection_evidence({"WrongPredecessor": EvidenceKind.WRONG_PREDECESSOR})
        # Forked history: two committed writes that extend the same log position.
        by_prev: Dict[str, List[int]] = {}
        for e in self.log.find("ccf.result", committed=True):
            by_prev.setdefault(e.data["prev"], []).append(e.seq)
        forks = [seqs for seqs in by_prev.values() if len(seqs) > 1]
        if forks:
            ev = Evidence(EvidenceKind.DIVERGENT_RESPONSES, {"forks": len(forks)}, tuple(forks[0]))
            return AttackOutcome(kind, True, (ev, *evidence))
        return AttackOutcome(kind, False, tuple(evidence))

    def committed_kv(self) -> Dict[str, Any]:
        """The store as the ledger alone defines it."""
        recovered = replay_recover(
            ReplayRecovery(), self.ledger.canonical_chain(), node_init(), apply_ledger_tx, {COMMIT_KIND, VIEW_KIND}
        )
        return dict(recovered.state["kv"])


def ccf_connect(world: CcfWorld, client: str, alias: str) -> Union[int, Aborted]:
    return world.ccf_connect(client, alias)


def ccf_submit(world: CcfWorld, client: str, alias: str, key: str, value: Any) -> Union[Executed, Aborted, Rejected]:
    return world.ccf_submit(client, alias, key, value)
