"""
BITE-style balance service: a stateless enclave answers light-client
balance queries from whatever chain its host feeds it.
"""
from __future__ import annotations
import logging
from dataclasses import dataclass
from typing import Any, Dict, List, Optional, Sequence, Tuple

from forklab.enclave import codec
from forklab.enclave.program import EnclaveProgram, ProgramFault, Rejected
from forklab.enclave.runtime import EnclaveContext
from forklab.errors import BadSignature, BrokenChain
from forklab.host.script import (
    AttackKind,
    AttackOutcome,
    AttackScript,
    Clone,
    Deliver,
    Evidence,
    EvidenceKind,
    Invoke,
)
from forklab.ledger.chain import Block, Tx, check_chain
from forklab.ledger.views import NodeConnection
from forklab.mitigations.ephemeral import Registration, key_binding, make_registration
from forklab.mitigations.serialization import (
    HeightAndHash,
    TimestampedResponse,
    Timestamping,
    Verdict,
    client_verify,
    timestamp_response,
)
from forklab.mitigations.stateless import stateless_wrap
from forklab.protocols.base import PATCHED, VULNERABLE, ProtocolWorld

logger = logging.getLogger(__name__)

NODE = "bite-node"
TRANSFER_KIND = "bite.transfer"
CLIENT_ACCOUNT = "light-client"


@dataclass(frozen=True, slots=True)
class BalanceQuery:
    account: str
    blocks: Tuple[Block, ...]

    def to_record(self) -> Dict[str, Any]:
        return {"account": self.account, "height": self.blocks[-1].height if self.blocks else None}


@dataclass(frozen=True, slots=True)
class Balance:
    account: str
    amount: int
    height: int
    block_hash: bytes


@dataclass(frozen=True, slots=True)
class Hello:
    pass


def balance_of(blocks: Sequence[Block], account: str) -> int:
    total = 0
    for block in blocks:
        for tx in block.txs_of(TRANSFER_KIND):
            if tx.payload["to"] == account:
                total += int(tx.payload["amount"])
            if tx.payload["from"] == account:
                total -= int(tx.payload["amount"])
    return total


def node_program(patched: bool = False) -> EnclaveProgram:
    policy = Timestamping(HeightAndHash()) if patched else None

    def step(ctx: EnclaveContext, state: Dict[str, Any], msg: Any) -> Tuple[Dict[str, Any], Any]:
        if isinstance(msg, Hello):
            if ctx.ephemeral is None:
                raise ProgramFault("NoIdentity", "responses are not signed")
            return state, make_registration(ctx, "bite:node")
        if isinstance(msg, BalanceQuery):
            try:
                check_chain(msg.blocks)
            except BrokenChain as e:
                raise ProgramFault("BrokenChain", str(e)) from None
            head = msg.blocks[-1]
            amount = balance_of(msg.blocks, msg.account)
            if policy is None:
                return state, Balance(msg.account, amount, head.height, head.hash)
            payload = codec.pack_fields(msg.account, amount)
            return state, timestamp_response(policy, ctx.crypto, ctx.ephemeral.signing.secret, payload,
                                             head.height, head.hash)
        raise ProgramFault("UnknownMessage", type(msg).__name__)

    return stateless_wrap(EnclaveProgram(
        name=NODE,
        init=dict,
        step=step,
        params={"patched": patched},
        ephemeral_keys=patched,
    ))


class BiteWorld(ProtocolWorld):
    """
    The host forks the chain at the head, puts a transfer to the light
    client on branch A only, and feeds each of two instances one branch.
    """

    name = "BiteForkScenario"
    title = "BITE light-client balances under a fork"
    variants = (VULNERABLE, PATCHED)
    consensus = "ethereum"
    defaults = {"amount": 5, "freshness_window": 1}

    def setup(self) -> None:
        self.runtime.add_platform("P1")
        self.register(node_program(self.patched))
        self.policy = Timestamping(HeightAndHash(), int(self.params["freshness_window"]))
        self.host.launch("B1", "P1", NODE)
        self.branches: Dict[str, bytes] = {}
        self.host.advance_time(2 * self.ledger.mode.block_interval_ms)

    # --- the forking host ---

    def op_fork(self, amount: int = 0) -> Tuple[bytes, bytes]:
        """Transfer on branch A only; A gets one more block so it becomes canonical."""
        t = Tx(TRANSFER_KIND, "alice", {"from": "alice", "to": CLIENT_ACCOUNT,
                                        "amount": int(amount or self.params["amount"])})
        a, b = self.ledger.fork_at_head([t], [])
        tip = self.ledger.append_block(a.hash, [], proposer="node-2")
        self.branches = {"a": a.hash, "b": b.hash}
        self.log.record("bite.fork", height=a.height, a=a.hash, b=b.hash, tip=tip.hash)
        return a.hash, b.hash

    def op_connect_branches(self, first: str = "B1", second: str = "B2") -> None:
        self.host.connect(first, [NodeConnection.on_branch("node-a", self.branches["a"])])
        self.host.connect(second, [NodeConnection.on_branch("node-b", self.branches["b"])])

    # --- light client ---

    def _identity(self, alias: str) -> Optional[bytes]:
        reg = self.host.deliver(alias, Hello())
        if not isinstance(reg, Registration) or not self.runtime.verify_attestation(reg.report):
            return None
        if reg.report.report_data[:32] != key_binding(self.crypto, reg.signing_pk, reg.agreement_pk):
            return None
        return reg.signing_pk

    def bite_balance_query(self, alias: str, value: Any) -> Optional[int]:
        """Client-side handling of one instance's answer; None when the answer is refused."""
        if isinstance(value, Rejected):
            self.log.record("bite.response", alias=alias, accepted=False, code=value.code)
            return None
        if isinstance(value, TimestampedResponse):
            signer = self._identity(alias)
            if signer is None:
                self.log.record("bite.response", alias=alias, accepted=False, code="Unattested")
                return None
            try:
                verdict = client_verify(value, self.host.view_for("client"), self.policy,
                                        crypto=self.crypto, public_key=signer)
            except BadSignature:
                self.log.record("bite.response", alias=alias, accepted=False, code="BadSignature")
                return None
            if verdict != Verdict.ACCEPT:
                self.log.record("client.verdict", alias=alias, verdict=verdict, height=value.height,
                                block_hash=value.block_hash)
                return None
            _, amount = codec.unpack_fields(value.payload, 2)
            height = value.height
        else:
            amount, height = value.amount, value.height
        self.log.record("bite.response", alias=alias, accepted=True, balance=int(amount), height=height)
        return int(amount)

    def op_check(self, outputs: Sequence[str] = ("r1", "r2")) -> List[int]:
        balances: List[int] = []
        for name in outputs:
            captured = self.host.output(name)
            amount = self.bite_balance_query(captured.producer or name, captured.value)
            if amount is not None:
                balances.append(amount)
        if len(set(balances)) > 1:
            self.log.record("bite.divergent", balances=balances)
        return balances

    # --- vocabulary ---

    def msg_balance(self, via: str, account: str = CLIENT_ACCOUNT) -> BalanceQuery:
        return BalanceQuery(account, self.host.view_for(via).blocks)

    # --- scripts ---

    def default_script(self, kind: AttackKind) -> AttackScript:
        if kind == AttackKind.NONE:
            actions = (
                Invoke("fork"),
                Deliver("B1", "balance", {"via": "B1"}, into="r1"),
                Invoke("check", {"outputs": ["r1"]}),
            )
            return AttackScript(actions, kind)
        actions = (
            Invoke("fork"),
            Clone("B1", "B2", "none"),
            Invoke("connect_branches"),
            Deliver("B1", "balance", {"via": "B1"}, into="r1"),
            Deliver("B2", "balance", {"via": "B2"}, into="r2"),
            Invoke("check", {"outputs": ["r1", "r2"]}),
        )
        return AttackScript(actions, kind)

    def judge(self, kind: AttackKind) -> AttackOutcome:
        if kind == AttackKind.ROLLBACK:
            return AttackOutcome.not_applicable(kind, "the balance enclave is stateless")
        evidence: List[Evidence] = []
        rejected = self.log.find("client.verdict", verdict=Verdict.REJECT_FORK_MISMATCH)
        if rejected:
            evidence.append(Evidence(EvidenceKind.REJECT_FORK_MISMATCH, {"count": len(rejected)},
                                     tuple(e.seq for e in rejected)))
        divergent = self.log.find("bite.divergent")
        if divergent:
            ev = Evidence(EvidenceKind.DIVERGENT_RESPONSES, {"balances": divergent[0].data["balances"]},
                          tuple(e.seq for e in divergent))
            return AttackOutcome(kind, True, (ev, *evidence))
        return AttackOutcome(kind, False, tuple(evidence))
