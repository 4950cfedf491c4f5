"""
Phala workers: enrolled enclaves that follow the chain block by block,
serve encrypted contract queries off-chain and send heartbeats.
"""
from __future__ import annotations
import logging
from dataclasses import dataclass
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from forklab import rng as rngs
from forklab.enclave import codec
from forklab.enclave.crypto import CryptoProvider, KeyPair
from forklab.enclave.program import EnclaveProgram, ProgramFault, Rejected
from forklab.enclave.runtime import EnclaveContext
from forklab.errors import BadSignature, ConfigError, DecryptionError, NoAck, NotInRange
from forklab.host.adversary import Host
from forklab.host.script import (
    AdvanceTime,
    AttackKind,
    AttackOutcome,
    AttackScript,
    Clone,
    Evidence,
    EvidenceKind,
    Invoke,
    Isolate,
    Restart,
)
from forklab.ledger.chain import Block, Tx
from forklab.mitigations.serialization import (
    HeartbeatAck,
    HeightAndHash,
    PlainHeight,
    Range,
    TimestampedResponse,
    Timestamping,
    TimestampVariant,
    Verdict,
    client_verify,
    timestamp_response,
)
from forklab.protocols.base import PATCHED, VULNERABLE, ProtocolWorld
from forklab.protocols.network import (
    Genesis,
    SharedNetworkSecret,
    enroll,
    handle_enrollment,
    network_secret,
)

logger = logging.getLogger(__name__)

WORKER = "phala-pruntime"
FLIP = "flip"
TOGGLE_KIND = "phala.toggle"
HEARTBEAT_KIND = "phala.heartbeat"
TARGET_SENDERS = 20
RESPONSE_KEY_LABEL = "phala-response"
_QUERY_INFO = b"phala-query"

TIMESTAMP_MODES = ("none", "height_and_hash", "plain_height", "heartbeat_ack", "range")


# --- wire formats ---

@dataclass(frozen=True, slots=True)
class PhalaQuery:
    """payload = iv || clientPub || AEAD_k(address || n || rawQuery); signed by the client identity."""
    aead_iv: bytes
    client_pk: bytes
    ciphertext: bytes
    identity_pk: bytes
    signature: bytes

    def payload(self) -> bytes:
        return codec.pack_fields(self.aead_iv, self.client_pk, self.ciphertext)

    def to_bytes(self) -> bytes:
        return codec.pack_fields(self.payload(), self.identity_pk, self.signature)

    @classmethod
    def from_bytes(cls, data: bytes) -> "PhalaQuery":
        payload, identity_pk, signature = codec.unpack_fields(data, 3)
        iv, client_pk, ciphertext = codec.unpack_fields(payload, 3)
        return cls(iv, client_pk, ciphertext, identity_pk, signature)


@dataclass(frozen=True, slots=True)
class PhalaResponse:
    aead_iv: bytes
    ciphertext: bytes

    def to_bytes(self) -> bytes:
        return codec.pack_fields(self.aead_iv, self.ciphertext)

    @classmethod
    def from_bytes(cls, data: bytes) -> "PhalaResponse":
        iv, ciphertext = codec.unpack_fields(data, 2)
        return cls(iv, ciphertext)


@dataclass(frozen=True, slots=True)
class PhalaHeartbeat:
    session_id: int
    challenge_block: int
    challenge_time: int
    iterations: int
    n_clusters: int
    n_contracts: int
    worker_pk: bytes
    signature: bytes = b""

    def body(self) -> bytes:
        return codec.pack_fields(
            self.session_id, self.challenge_block, self.challenge_time,
            self.iterations, self.n_clusters, self.n_contracts,
        )

    def to_bytes(self) -> bytes:
        return codec.pack_fields(
            self.session_id, self.challenge_block, self.challenge_time,
            self.iterations, self.n_clusters, self.n_contracts, self.signature,
        )

    def to_record(self) -> Dict[str, Any]:
        return {"session": self.session_id, "block": self.challenge_block, "time": self.challenge_time,
                "worker": self.worker_pk.hex()[:16]}


def query_key(crypto: CryptoProvider, secret: bytes, peer_pk: bytes) -> bytes:
    return crypto.kdf(crypto.agree(secret, peer_pk), info=_QUERY_INFO)


def build_query(
    crypto: CryptoProvider,
    rng: np.random.Generator,
    identity: KeyPair,
    contract_pk: bytes,
    address: str,
    nonce: int,
    raw: str,
) -> Tuple[PhalaQuery, bytes]:
    """Client side: returns the query and the session key k for reading the answer."""
    ephemeral = crypto.agreement_keypair(rng)
    k = query_key(crypto, ephemeral.secret, contract_pk)
    iv = crypto.nonce(rng)
    ciphertext = crypto.encrypt(k, codec.pack_fields(address, nonce, raw), nonce=iv)
    unsigned = PhalaQuery(iv, ephemeral.public, ciphertext, identity.public, b"")
    signature = crypto.sign(identity.secret, unsigned.payload())
    return PhalaQuery(iv, ephemeral.public, ciphertext, identity.public, signature), k


def read_response(crypto: CryptoProvider, k: bytes, response: PhalaResponse) -> Tuple[Any, int]:
    result, nonce = codec.unpack_fields(crypto.decrypt(k, response.ciphertext, nonce=response.aead_iv), 2)
    return result, int(nonce)


# --- heartbeats ---

def heartbeat_eligible(
    crypto: CryptoProvider, worker_pk: bytes, block_hash: bytes, n_workers: int, target: int = TARGET_SENDERS
) -> bool:
    """About min(target, W) of W workers qualify for any given block."""
    if n_workers < 1:
        raise ValueError("need at least one worker")
    draw = int.from_bytes(crypto.hash(worker_pk + block_hash), "big")
    return draw % n_workers < min(target, n_workers)


def expected_gap_blocks(n_workers: int, target: int = TARGET_SENDERS) -> float:
    return n_workers / min(target, n_workers)


def senders_per_block(
    crypto: CryptoProvider, worker_pks: Sequence[bytes], blocks: Sequence[Block], n_workers: Optional[int] = None
) -> List[int]:
    w = n_workers or len(worker_pks)
    return [sum(heartbeat_eligible(crypto, pk, b.hash, w) for pk in worker_pks) for b in blocks]


def heartbeat_gaps_ms(crypto: CryptoProvider, worker_pk: bytes, blocks: Sequence[Block], n_workers: int) -> List[int]:
    times = [b.timestamp for b in blocks if heartbeat_eligible(crypto, worker_pk, b.hash, n_workers)]
    return [b - a for a, b in zip(times, times[1:])]


# --- the worker program ---

@dataclass(frozen=True, slots=True)
class InitIdentity:
    pass


@dataclass(frozen=True, slots=True)
class BlockSync:
    block: Block


@dataclass(frozen=True, slots=True)
class SyncStatus:
    pass


@dataclass(frozen=True, slots=True)
class QueryRequest:
    address: str
    query: bytes
    requested_range: Optional[Tuple[int, int]] = None


def timestamp_policy(mode: str, period_ms: int, freshness_window: int) -> Optional[Timestamping]:
    variant: TimestampVariant
    if mode == "none":
        return None
    if mode == "height_and_hash":
        variant = HeightAndHash()
    elif mode == "plain_height":
        variant = PlainHeight()
    elif mode == "heartbeat_ack":
        variant = HeartbeatAck(period_ms)
    elif mode == "range":
        variant = Range(0, 2**62)
    else:
        raise ValueError(f"unknown timestamp mode {mode!r}")
    return Timestamping(variant, freshness_window)


def worker_init() -> Dict[str, Any]:
    return {
        "height": 0,
        "head": None,
        "flags": {FLIP: False},
        "iterations": 0,
        "session": 0,
        "identity_sk": None,
        "identity_pk": None,
        "last_ack_ms": None,
    }


def _sync(ctx: EnclaveContext, state: Dict[str, Any], block: Block, n_workers: int) -> Tuple[Dict[str, Any], Any]:
    if block.height != state["height"] + 1 or (state["head"] is not None and block.parent_hash != state["head"]):
        raise ProgramFault("HeightGap", f"at {state['height']}, got block {block.height}")
    flags = dict(state["flags"])
    for tx in block.txs_of(TOGGLE_KIND):
        contract = tx.payload.get("contract", FLIP)
        flags[contract] = not flags.get(contract, False)
    last_ack = state["last_ack_ms"]
    if any(tx.payload.get("worker") == state["identity_pk"] for tx in block.txs_of(HEARTBEAT_KIND)):
        last_ack = block.timestamp
    new = {**state, "height": block.height, "head": block.hash, "flags": flags,
           "iterations": state["iterations"] + 1, "last_ack_ms": last_ack}
    pk = state["identity_pk"]
    if pk is None or not heartbeat_eligible(ctx.crypto, pk, block.hash, n_workers):
        return new, None
    hb = PhalaHeartbeat(state["session"], block.height, block.timestamp, new["iterations"], 1, len(flags), pk)
    signature = ctx.crypto.sign(state["identity_sk"], hb.body())
    return new, PhalaHeartbeat(hb.session_id, hb.challenge_block, hb.challenge_time, hb.iterations,
                               hb.n_clusters, hb.n_contracts, pk, signature)


def _serve(ctx: EnclaveContext, state: Dict[str, Any], msg: QueryRequest, policy: Optional[Timestamping]) -> Any:
    secret = network_secret(state)
    if secret is None:
        raise ProgramFault("NotMember", "worker holds no network secret")
    try:
        query = PhalaQuery.from_bytes(msg.query)
    except ValueError:
        raise ProgramFault("Malformed", "query layout") from None
    if not ctx.crypto.verify(query.identity_pk, query.payload(), query.signature):
        raise ProgramFault("BadSignature", "query signature")
    contract = secret.contract_keypair(ctx.crypto, msg.address)
    k = query_key(ctx.crypto, contract.secret, query.client_pk)
    try:
        address, nonce, raw = codec.unpack_fields(ctx.crypto.decrypt(k, query.ciphertext, nonce=query.aead_iv), 3)
    except DecryptionError:
        raise ProgramFault("DecryptFail", "query not encrypted to this contract") from None
    if address != msg.address:
        raise ProgramFault("AddressMismatch", f"query for {address}, routed to {msg.address}")
    if raw != "get":
        raise ProgramFault("UnknownQuery", str(raw))
    result = state["flags"].get(address, False)
    iv = ctx.crypto.nonce(ctx.rng)
    response = PhalaResponse(iv, ctx.crypto.encrypt(k, codec.pack_fields(result, nonce), nonce=iv))
    if policy is None:
        return response
    signing = secret.signing_keypair(ctx.crypto, RESPONSE_KEY_LABEL)
    try:
        return timestamp_response(
            policy, ctx.crypto, signing.secret, response.to_bytes(), state["height"], state["head"],
            requested_range=msg.requested_range, last_ack_ms=state["last_ack_ms"], now_ms=ctx.trusted_time_ms(),
        )
    except NoAck as e:
        raise ProgramFault("NoAck", str(e)) from None
    except NotInRange as e:
        raise ProgramFault("NotInRange", str(e)) from None


def worker_program(n_workers: int = 1, mode: str = "none", period_ms: int = 0, freshness_window: int = 0) -> EnclaveProgram:
    policy = timestamp_policy(mode, period_ms, freshness_window)

    def step(ctx: EnclaveContext, state: Dict[str, Any], msg: Any) -> Tuple[Dict[str, Any], Any]:
        handled = handle_enrollment(ctx, state, msg)
        if handled is not None:
            return handled
        if isinstance(msg, InitIdentity):
            if state["identity_pk"] is not None:
                return state, state["identity_pk"]
            keys = ctx.signing_keypair()
            return {**state, "identity_sk": keys.secret, "identity_pk": keys.public,
                    "session": ctx.integers(2**31)}, keys.public
        if isinstance(msg, BlockSync):
            return _sync(ctx, state, msg.block, n_workers)
        if isinstance(msg, SyncStatus):
            return state, state["height"]
        if isinstance(msg, QueryRequest):
            return state, _serve(ctx, state, msg, policy)
        raise ProgramFault("UnknownMessage", type(msg).__name__)

    return EnclaveProgram(
        name=WORKER,
        init=worker_init,
        step=step,
        params={"n_workers": n_workers, "timestamp": mode, "period_ms": period_ms, "freshness": freshness_window},
        deterministic=False,
        uses_randomness=True,
        persistent_fields=("height", "head", "flags", "iterations", "session", "identity_sk", "identity_pk",
                           "last_ack_ms", "network_seed"),
        checkpoint=True,
    )


def phala_heartbeat_tick(host: Host, alias: str, block: Block) -> Optional[PhalaHeartbeat]:
    out = host.deliver(alias, BlockSync(block))
    return out if isinstance(out, PhalaHeartbeat) else None


class PhalaWorld(ProtocolWorld):
    """
    Gatekeeper G holds the master key, worker W enrolls with it and serves
    the flip contract. The client toggles the flag on chain and then asks.
    """

    name = "PhalaWorker"
    title = "Phala worker and contract queries"
    variants = (VULNERABLE, PATCHED)
    consensus = "phala"
    defaults = {"n_workers": 1, "timestamp": "height_and_hash", "freshness_window": 0}

    def setup(self) -> None:
        interval = self.ledger.mode.block_interval_ms
        n_workers = int(self.params["n_workers"])
        mode = str(self.params["timestamp"]) if self.patched else "none"
        if mode not in TIMESTAMP_MODES:
            raise ConfigError("params.timestamp", f"expected one of {list(TIMESTAMP_MODES)}")
        self.gap_ms = int(expected_gap_blocks(n_workers) * interval)
        self.policy = timestamp_policy(mode, self.gap_ms, int(self.params["freshness_window"]))
        self.runtime.add_platform("P0")
        self.runtime.add_platform("P1")
        self.register(worker_program(n_workers, mode, self.gap_ms, int(self.params["freshness_window"])))
        seed = self.rng.bytes(32)
        self.network = SharedNetworkSecret(seed)
        self.contract_pk = self.network.contract_keypair(self.crypto, FLIP).public
        self.response_pk = self.network.signing_keypair(self.crypto, RESPONSE_KEY_LABEL).public
        self.identity = self.crypto.signing_keypair(self.rng)
        self.host.launch("G", "P0", WORKER)
        self.host.deliver("G", Genesis(seed))
        self.host.launch("W", "P1", WORKER)
        enroll(self.host, "W", "G")
        self.worker_pk: bytes = self.host.deliver("W", InitIdentity())
        self.registered_at = self.clock_now()
        self.log.record("phala.worker", worker=self.worker_pk, n_workers=n_workers)
        self.host.attach_relay("W", BlockSync, self._relay_output)
        self.host.on_restart(self._on_restart)
        self.host.advance_time(2 * interval)

    def clock_now(self) -> int:
        return self.ledger.clock.now

    # --- honest relayer and gatekeeper ---

    def _relay_output(self, alias: str, out: Any) -> None:
        if isinstance(out, PhalaHeartbeat):
            self.host.submit_tx(Tx(HEARTBEAT_KIND, "relayer", {"heartbeat": out, "worker": out.worker_pk}))
        elif isinstance(out, Rejected) and out.code == "HeightGap":
            self.catch_up(alias)

    def _on_restart(self, alias: str) -> None:
        if alias != "G":
            self.catch_up(alias)

    def catch_up(self, alias: str) -> int:
        """Relay every canonical block the worker has not processed yet."""
        have = self.host.deliver(alias, SyncStatus())
        if isinstance(have, Rejected):
            return 0
        chain = self.ledger.canonical_chain()
        missing = chain[int(have) + 1:]
        for block in missing:
            self.host.deliver(alias, BlockSync(block))
        self.log.record("phala.resync", alias=alias, start=int(have), to=self.ledger.height, blocks=len(missing))
        return len(missing)

    def op_gatekeeper_check(self) -> int:
        """Flag the worker if it stayed silent for more than two expected heartbeat gaps."""
        last = self.registered_at
        for block in self.ledger.canonical_chain():
            for tx in block.txs_of(HEARTBEAT_KIND):
                if tx.payload["worker"] == self.worker_pk:
                    last = max(last, tx.payload["heartbeat"].challenge_time)
        now = self.clock_now()
        if now - last > 2 * self.gap_ms:
            self.log.record("phala.missed_heartbeat", worker=self.worker_pk, last=last, now=now)
            return 1
        return 0

    # --- client ---

    def expected_flag(self, contract: str = FLIP) -> bool:
        toggles = sum(
            1 for tx in (t for b in self.ledger.canonical_chain() for t in b.txs_of(TOGGLE_KIND))
            if tx.payload.get("contract", FLIP) == contract
        )
        return toggles % 2 == 1

    def op_toggle(self, contract: str = FLIP) -> bool:
        return self.host.submit_tx(Tx(TOGGLE_KIND, "client", {"contract": contract})) is not None

    def phala_query(self, alias: str, address: str = FLIP, raw: str = "get",
                    requested_range: Optional[Sequence[int]] = None) -> Union[Any, Rejected, Verdict]:
        nonce = rngs.draw_u64(self.rng)
        query, k = build_query(self.crypto, self.rng, self.identity, self.contract_pk, address, nonce, raw)
        rng_tuple = tuple(int(x) for x in requested_range) if requested_range else None
        out = self.host.deliver(alias, QueryRequest(address, query.to_bytes(), rng_tuple), into=f"response:{alias}")
        if isinstance(out, Rejected):
            self.log.record("phala.response", alias=alias, accepted=False, code=out.code)
            return out
        if self.policy is not None:
            if not isinstance(out, TimestampedResponse):
                self.log.record("phala.response", alias=alias, accepted=False, code="Unstamped")
                return Verdict.REJECT_STALE
            try:
                verdict = client_verify(out, self.host.view_for("client"), self.policy,
                                        crypto=self.crypto, public_key=self.response_pk)
            except BadSignature:
                self.log.record("phala.response", alias=alias, accepted=False, code="BadSignature")
                return Verdict.REJECT_FORK_MISMATCH
            if verdict != Verdict.ACCEPT:
                self.log.record("client.verdict", alias=alias, verdict=verdict, height=out.height,
                                view_height=self.ledger.height)
                return verdict
            out = PhalaResponse.from_bytes(out.payload)
        result, echoed = read_response(self.crypto, k, out)
        if echoed != nonce:
            self.log.record("phala.response", alias=alias, accepted=False, code="NonceMismatch")
            return Verdict.REJECT_STALE
        self.log.record("phala.response", alias=alias, accepted=True, got=result, expected=self.expected_flag(address))
        return result

    def op_query(self, alias: str = "W", address: str = FLIP, raw: str = "get",
                 requested_range: Optional[List[int]] = None) -> Any:
        return self.phala_query(alias, address, raw, requested_range)

    # --- scripts ---

    def default_script(self, kind: AttackKind) -> AttackScript:
        interval = self.ledger.mode.block_interval_ms
        if kind == AttackKind.CLONING:
            actions = (
                Clone("W", "W2", "own"),
                Isolate("W2"),
                Invoke("toggle"),
                AdvanceTime(3 * interval),
                Invoke("query", {"alias": "W2"}),
                Invoke("query", {"alias": "W"}),
                Invoke("gatekeeper_check"),
            )
            return AttackScript(actions, kind)
        if kind == AttackKind.ROLLBACK:
            checkpoint = self.host.pick_blob(self.host.instance("W"), "own")
            ref = f"seq:{checkpoint.seq_hint}" if checkpoint is not None else "first"
            actions = (
                Invoke("toggle"),
                AdvanceTime(2 * interval),
                Restart("W", ref),
                Invoke("query", {"alias": "W"}),
                Invoke("gatekeeper_check"),
            )
            return AttackScript(actions, kind)
        actions = (
            Invoke("toggle"),
            AdvanceTime(2 * interval),
            Invoke("query", {"alias": "W"}),
            Invoke("gatekeeper_check"),
        )
        return AttackScript(actions, kind)

    def judge(self, kind: AttackKind) -> AttackOutcome:
        evidence: List[Evidence] = []
        for verdict, ev_kind in ((Verdict.REJECT_STALE, EvidenceKind.REJECT_STALE),
                                 (Verdict.REJECT_FORK_MISMATCH, EvidenceKind.REJECT_FORK_MISMATCH)):
            events = self.log.find("client.verdict", verdict=verdict)
            if events:
                evidence.append(Evidence(ev_kind, {"count": len(events)}, tuple(e.seq for e in events)))
        evidence += self.rejection_evidence({"NoAck": EvidenceKind.NO_ACK}, source="enclave.reject")
        missed = self.log.find("phala.missed_heartbeat")
        if missed:
            evidence.append(Evidence(EvidenceKind.MISSED_HEARTBEAT, {"count": len(missed)}, tuple(e.seq for e in missed)))
        stale = [e for e in self.log.find("phala.response", accepted=True) if e.data["got"] != e.data["expected"]]
        if stale:
            first = stale[0]
            ev = Evidence(EvidenceKind.STALE_RESPONSE_ACCEPTED,
                          {"expected": first.data["expected"], "got": first.data["got"], "alias": first.data["alias"]},
                          tuple(e.seq for e in stale))
            return AttackOutcome(kind, True, (ev, *evidence))
        return AttackOutcome(kind, False, tuple(evidence))
