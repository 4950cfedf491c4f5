"""
Secret Network contract queries. Every node enclave derives the same
consensus IO key from the network seed, and queries carry the contract
address in the clear.
"""
from __future__ import annotations
import logging
from dataclasses import dataclass, replace
from typing import Any, Dict, Optional, Tuple

import numpy as np

from forklab.enclave import codec
from forklab.enclave.crypto import CryptoProvider, KeyPair
from forklab.enclave.program import EnclaveProgram, ProgramFault, Rejected
from forklab.enclave.runtime import EnclaveContext
from forklab.errors import BadSignature, BrokenChain, DecryptionError, ScriptError
from forklab.host.script import (
    AdvanceTime,
    AttackKind,
    AttackOutcome,
    AttackScript,
    Deliver,
    Evidence,
    EvidenceKind,
    Invoke,
    Modify,
    Restart,
)
from forklab.ledger.chain import Block, Tx
from forklab.mitigations.serialization import (
    HeightAndHash,
    ReplayRecovery,
    TimestampedResponse,
    Timestamping,
    Verdict,
    client_verify,
    replay_recover,
    timestamp_response,
)
from forklab.protocols.base import PATCHED, VULNERABLE, ProtocolWorld
from forklab.protocols.contracts import apply_counter
from forklab.protocols.network import SEED_FIELD, Genesis, handle_enrollment

logger = logging.getLogger(__name__)

NODE = "secret-node"
DEPLOY_KIND = "secret.deploy"
EXECUTE_KIND = "secret.execute"
SECRET_KINDS = frozenset({DEPLOY_KIND, EXECUTE_KIND})
COUNTER_CODE_HASH = codec.digest("secret-counter-contract")
_IO_INFO = b"consensus-io"
_SIGN_INFO = b"consensus-sign"
# a patched response must reflect every committed block
SECRET_POLICY = Timestamping(HeightAndHash(), freshness_window=0)


@dataclass(frozen=True, slots=True)
class SecretQuery:
    """contractAddress and nonce travel in the clear; only the query itself is encrypted."""
    contract_address: str
    nonce: bytes
    client_pk: bytes
    ciphertext: bytes

    def to_bytes(self) -> bytes:
        return codec.pack_fields(self.contract_address, self.nonce, self.client_pk, self.ciphertext)

    @classmethod
    def from_bytes(cls, data: bytes) -> "SecretQuery":
        address, nonce, client_pk, ciphertext = codec.unpack_fields(data, 4)
        return cls(address, nonce, client_pk, ciphertext)


@dataclass(frozen=True, slots=True)
class SecretResponse:
    aead_iv: bytes
    ciphertext: bytes

    def to_bytes(self) -> bytes:
        return codec.pack_fields(self.aead_iv, self.ciphertext)

    @classmethod
    def from_bytes(cls, data: bytes) -> "SecretResponse":
        iv, ciphertext = codec.unpack_fields(data, 2)
        return cls(iv, ciphertext)


@dataclass(frozen=True, slots=True)
class NodeKeys:
    io_pk: bytes
    signing_pk: bytes


@dataclass(frozen=True, slots=True)
class PublishKeys:
    pass


@dataclass(frozen=True, slots=True)
class BlockSync:
    block: Block


@dataclass(frozen=True, slots=True)
class Replay:
    blocks: Tuple[Block, ...]

    def to_record(self) -> Dict[str, Any]:
        return {"heights": [b.height for b in self.blocks]}


# --- keys ---

def io_keypair(crypto: CryptoProvider, seed: bytes) -> KeyPair:
    return crypto.agreement_keypair_from_secret(crypto.kdf(seed, info=_IO_INFO))


def node_signing_keypair(crypto: CryptoProvider, seed: bytes) -> KeyPair:
    return crypto.signing_keypair_from_secret(crypto.kdf(seed, info=_SIGN_INFO))


def client_query_key(crypto: CryptoProvider, client_secret: bytes, io_pk: bytes, nonce: bytes) -> bytes:
    """k = HKDF(n, agree(clientPriv, consensusIoPub))"""
    return crypto.kdf(crypto.agree(client_secret, io_pk), salt=nonce)


def enclave_query_key(crypto: CryptoProvider, io_secret: bytes, client_pk: bytes, nonce: bytes) -> bytes:
    return crypto.kdf(crypto.agree(io_secret, client_pk), salt=nonce)


def query_plaintext(code_hash: bytes, raw: str, address: Optional[str] = None) -> bytes:
    if address is None:
        return codec.pack_fields(code_hash, raw)
    return codec.pack_fields(code_hash, address, raw)


def build_query(
    crypto: CryptoProvider,
    rng: np.random.Generator,
    io_pk: bytes,
    address: str,
    raw: str,
    *,
    code_hash: bytes = COUNTER_CODE_HASH,
    bind_address: bool = False,
) -> Tuple[SecretQuery, bytes]:
    client = crypto.agreement_keypair(rng)
    nonce = crypto.nonce(rng)
    k = client_query_key(crypto, client.secret, io_pk, nonce)
    plaintext = query_plaintext(code_hash, raw, address if bind_address else None)
    return SecretQuery(address, nonce, client.public, crypto.encrypt(k, plaintext, nonce=nonce)), k


def read_response(crypto: CryptoProvider, k: bytes, response: SecretResponse) -> Any:
    (result,) = codec.unpack_fields(crypto.decrypt(k, response.ciphertext, nonce=response.aead_iv), 1)
    return result


# --- contract state ---

def contracts_init() -> Dict[str, Any]:
    return {"contracts": {}}


def apply_secret_tx(state: Dict[str, Any], tx: Tx) -> Dict[str, Any]:
    contracts = dict(state["contracts"])
    address = tx.payload["address"]
    if tx.kind == DEPLOY_KIND:
        if address in contracts:
            return state
        contracts[address] = {"code": tx.payload["code_hash"], "value": int(tx.payload["init"])}
    elif tx.kind == EXECUTE_KIND:
        entry = contracts.get(address)
        if entry is None:
            return state
        try:
            value = apply_counter(entry["value"], tx.payload["method"], tx.payload.get("arg"))
        except ProgramFault:
            return state
        contracts[address] = {**entry, "value": value}
    return {**state, "contracts": contracts}


def node_init() -> Dict[str, Any]:
    return {"height": 0, "head": None, **contracts_init()}


def _sync(state: Dict[str, Any], block: Block) -> Dict[str, Any]:
    if block.height != state["height"] + 1 or (state["head"] is not None and block.parent_hash != state["head"]):
        raise ProgramFault("HeightGap", f"at {state['height']}, got block {block.height}")
    folded: Dict[str, Any] = {"contracts": state["contracts"]}
    for tx in block.txs:
        if tx.kind in SECRET_KINDS:
            folded = apply_secret_tx(folded, tx)
    return {**state, "height": block.height, "head": block.hash, "contracts": folded["contracts"]}


def _serve(ctx: EnclaveContext, state: Dict[str, Any], query: SecretQuery,
           bind_address: bool, policy: Optional[Timestamping]) -> Any:
    seed = state.get(SEED_FIELD)
    if not seed:
        raise ProgramFault("NotMember", "node holds no consensus seed")
    io = io_keypair(ctx.crypto, seed)
    k = enclave_query_key(ctx.crypto, io.secret, query.client_pk, query.nonce)
    try:
        plaintext = ctx.crypto.decrypt(k, query.ciphertext, nonce=query.nonce)
    except DecryptionError:
        raise ProgramFault("DecryptFail", "query key does not match") from None
    intended = None
    if bind_address:
        code_hash, intended, raw = codec.unpack_fields(plaintext, 3)
    else:
        code_hash, raw = codec.unpack_fields(plaintext, 2)
    contract = state["contracts"].get(query.contract_address)
    if contract is None:
        raise ProgramFault("UnknownContract", query.contract_address)
    if code_hash != contract["code"]:
        raise ProgramFault("CodeHashMismatch", query.contract_address)
    if intended is not None and intended != query.contract_address:
        raise ProgramFault("AddressMismatch", f"query for {intended}, handled by {query.contract_address}")
    if raw != "get":
        raise ProgramFault("ReadOnly", f"queries cannot run {raw!r}")
    iv = ctx.crypto.nonce(ctx.rng)
    response = SecretResponse(iv, ctx.crypto.encrypt(k, codec.pack_fields(contract["value"]), nonce=iv))
    if policy is None:
        return response
    signing = node_signing_keypair(ctx.crypto, seed)
    return timestamp_response(policy, ctx.crypto, signing.secret, response.to_bytes(), state["height"], state["head"])


def node_program(patched: bool = False) -> EnclaveProgram:
    recovery = ReplayRecovery(validate_chain=patched)
    policy = SECRET_POLICY if patched else None

    def step(ctx: EnclaveContext, state: Dict[str, Any], msg: Any) -> Tuple[Dict[str, Any], Any]:
        handled = handle_enrollment(ctx, state, msg)
        if handled is not None:
            return handled
        if isinstance(msg, PublishKeys):
            seed = state.get(SEED_FIELD)
            if not seed:
                raise ProgramFault("NotMember", "node holds no consensus seed")
            return state, NodeKeys(io_keypair(ctx.crypto, seed).public, node_signing_keypair(ctx.crypto, seed).public)
        if isinstance(msg, BlockSync):
            return _sync(state, msg.block), msg.block.height
        if isinstance(msg, Replay):
            try:
                recovered = replay_recover(recovery, msg.blocks, contracts_init(), apply_secret_tx, SECRET_KINDS)
            except BrokenChain as e:
                raise ProgramFault("BrokenChain", str(e)) from None
            new = {**state, "height": recovered.height, "head": recovered.head_hash,
                   "contracts": recovered.state["contracts"]}
            return new, recovered.height
        if isinstance(msg, SecretQuery):
            return state, _serve(ctx, state, msg, patched, policy)
        raise ProgramFault("UnknownMessage", type(msg).__name__)

    return EnclaveProgram(
        name=NODE,
        init=node_init,
        step=step,
        params={"patched": patched},
        deterministic=False,
        uses_randomness=True,
        persistent_fields=("height", "head", "contracts", SEED_FIELD),
        checkpoint=True,
    )


class SecretWorld(ProtocolWorld):
    """
    One node N runs on the adversary's machine. Contract `address` holds 2
    after one increment; the adversary may deploy a copy with the same
    code hash at `clone_address`, which starts at 1.
    """

    name = "SecretQuery"
    title = "Secret Network contract queries"
    variants = (VULNERABLE, PATCHED)
    defaults = {"address": "secret1counter", "clone_address": "secret1counterclone", "start": 1}

    def setup(self) -> None:
        self.runtime.add_platform("P1")
        self.register(node_program(self.patched))
        self.policy = SECRET_POLICY if self.patched else None
        self.host.launch("N", "P1", NODE)
        self.host.deliver("N", Genesis(self.rng.bytes(32)))
        self.host.attach_relay("N", BlockSync)
        self.keys: NodeKeys = self.host.deliver("N", PublishKeys())
        self._pending: Dict[bytes, Tuple[bytes, str]] = {}
        interval = self.ledger.mode.block_interval_ms
        self.op_deploy(str(self.params["address"]))
        self.host.advance_time(interval)
        self.op_execute(str(self.params["address"]), "increment")
        self.host.advance_time(interval)

    # --- chain-side parties ---

    def op_deploy(self, address: str, sender: str = "client") -> bool:
        tx = Tx(DEPLOY_KIND, sender, {"address": address, "code_hash": COUNTER_CODE_HASH,
                                      "init": int(self.params["start"])})
        return self.host.submit_tx(tx) is not None

    def op_execute(self, address: str, method: str = "increment", arg: Any = None) -> bool:
        return self.host.submit_tx(Tx(EXECUTE_KIND, "client", {"address": address, "method": method, "arg": arg})) is not None

    def contract_value(self, address: str) -> Optional[int]:
        """The value every honest node computes from the canonical chain."""
        recovered = replay_recover(ReplayRecovery(), self.ledger.canonical_chain(), contracts_init(),
                                   apply_secret_tx, SECRET_KINDS)
        entry = recovered.state["contracts"].get(address)
        return entry["value"] if entry else None

    # --- client ---

    def op_build_query(self, address: str = "", raw: str = "get") -> SecretQuery:
        intended = address or str(self.params["address"])
        query, k = build_query(self.crypto, self.rng, self.keys.io_pk, intended, raw, bind_address=self.patched)
        self._pending[query.nonce] = (k, intended)
        return query

    def op_read_response(self, query: str = "query", response: str = "response") -> Any:
        sent: SecretQuery = self.host.value(query)
        pending = self._pending.get(sent.nonce)
        if pending is None:
            raise ScriptError(f"{query!r} was not built by this client")
        k, intended = pending
        out = self.host.value(response)
        if isinstance(out, Rejected):
            self.log.record("secret.response", address=intended, accepted=False, code=out.code)
            return out
        if self.policy is not None:
            if not isinstance(out, TimestampedResponse):
                self.log.record("secret.response", address=intended, accepted=False, code="Unstamped")
                return Verdict.REJECT_STALE
            try:
                verdict = client_verify(out, self.host.view_for("client"), self.policy,
                                        crypto=self.crypto, public_key=self.keys.signing_pk)
            except BadSignature:
                verdict = Verdict.REJECT_FORK_MISMATCH
            if verdict != Verdict.ACCEPT:
                self.log.record("client.verdict", address=intended, verdict=verdict, height=out.height,
                                view_height=self.ledger.height)
                return verdict
            out = SecretResponse.from_bytes(out.payload)
        result = read_response(self.crypto, k, out)
        self.log.record("secret.response", address=intended, routed=sent.contract_address, accepted=True,
                        got=result, expected=self.contract_value(intended))
        return result

    def secret_query(self, address: str = "", raw: str = "get", rewrite_to: Optional[str] = None) -> Any:
        """Full client round trip; `rewrite_to` plays the proxy that edits the cleartext address."""
        query = self.op_build_query(address, raw)
        self.host.capture("query", query)
        if rewrite_to is not None:
            self.host.modify("query", lambda q: replace(q, contract_address=rewrite_to), label="rewrite_address")
        self.host.deliver("N", self.host.value("query"), into="response")
        return self.op_read_response("query", "response")

    # --- vocabulary ---

    def msg_query(self, query: SecretQuery) -> SecretQuery:
        return query

    def msg_replay(self, omit: Optional[str] = None) -> Replay:
        """The canonical chain, minus every block that carries a tx of kind `omit`."""
        blocks = [b for b in self.ledger.canonical_chain() if not (omit and b.txs_of(omit))]
        return Replay(tuple(blocks))

    def mut_swap_address(self, query: SecretQuery) -> SecretQuery:
        return replace(query, contract_address=str(self.params["clone_address"]))

    # --- scripts ---

    def _honest_query(self, suffix: str = "") -> Tuple[Any, ...]:
        return (
            Invoke("build_query", into=f"query{suffix}"),
            Deliver("N", "query", {"query": f"$query{suffix}"}, into=f"response{suffix}"),
            Invoke("read_response", {"query": f"query{suffix}", "response": f"response{suffix}"}),
        )

    def default_script(self, kind: AttackKind) -> AttackScript:
        interval = self.ledger.mode.block_interval_ms
        if kind == AttackKind.CLONING:
            actions = (
                Invoke("deploy", {"address": str(self.params["clone_address"]), "sender": "adversary"}),
                AdvanceTime(interval),
                *self._honest_query("_honest"),
                Invoke("build_query", into="query"),
                Modify("query", "swap_address"),
                Deliver("N", "query", {"query": "$query"}, into="response"),
                Invoke("read_response"),
            )
            return AttackScript(actions, kind)
        if kind == AttackKind.ROLLBACK:
            actions = (
                *self._honest_query("_honest"),
                Restart("N", "first"),
                Deliver("N", "replay", {"omit": EXECUTE_KIND}),
                *self._honest_query(),
            )
            return AttackScript(actions, kind)
        return AttackScript(self._honest_query(), kind)

    def judge(self, kind: AttackKind) -> AttackOutcome:
        evidence = self.rejection_evidence(
            {"AddressMismatch": EvidenceKind.ADDRESS_MISMATCH, "BrokenChain": EvidenceKind.BROKEN_CHAIN},
            source="enclave.reject",
        )
        stale = self.log.find("client.verdict", verdict=Verdict.REJECT_STALE)
        if stale:
            evidence.append(Evidence(EvidenceKind.REJECT_STALE, {"count": len(stale)}, tuple(e.seq for e in stale)))
        wrong = [e for e in self.log.find("secret.response", accepted=True) if e.data["got"] != e.data["expected"]]
        if wrong:
            first = wrong[0]
            ev = Evidence(EvidenceKind.STALE_RESPONSE_ACCEPTED,
                          {"expected": first.data["expected"], "got": first.data["got"],
                           "routed": first.data["routed"]},
                          tuple(e.seq for e in wrong))
            return AttackOutcome(kind, True, (ev, *evidence))
        return AttackOutcome(kind, False, tuple(evidence))


def secret_query(world: SecretWorld, address: str, raw: str = "get", rewrite_to: Optional[str] = None) -> Any:
    return world.secret_query(address, raw, rewrite_to)
