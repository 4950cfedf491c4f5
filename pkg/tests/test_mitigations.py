from dataclasses import replace

import pytest
from hypothesis import given, settings, strategies as st

from forklab import rng as rngs
from forklab.enclave import codec
from forklab.enclave.crypto import make_provider
from forklab.enclave.program import EnclaveProgram
from forklab.errors import BadSignature, BrokenChain, DecryptionError, NoAck, NotInRange, StateMismatch, ValidationFailed
from forklab.ledger.chain import PRESETS, FinalMode, Ledger, Tx
from forklab.ledger.views import NodeConnection, read_view
from forklab.mitigations import (
    COMMIT_KIND,
    REGISTER_KIND,
    EphemeralIdPolicy,
    EphemeralIdRegistry,
    FixedClientPolicy,
    HeartbeatAck,
    HeightAndHash,
    PlainHeight,
    Range,
    ReplayRecovery,
    StateCommitValidator,
    StateOnLedger,
    Timestamping,
    Verdict,
    check_round,
    client_verify,
    ephemeral_register,
    fixed_client_round,
    make_registration,
    open_envelope,
    replay_recover,
    seal_to,
    sign_input,
    state_commit,
    state_digest,
    timestamp_response,
)
from forklab.simulation import Simulation


@pytest.fixture
def stream():
    return rngs.stream(21, 1)


# --- serialization: replay ---

class TestReplayRecovery:
    def test_folds_relevant_txs(self):
        ledger = Ledger(FinalMode(1000))
        for n in (1, 2, 3):
            ledger.submit_tx(Tx("add", "c", {"n": n}))
            ledger.submit_tx(Tx("noise", "c"))
            ledger.advance(1000)
        out = replay_recover(ReplayRecovery(), ledger.canonical_chain(), 0, lambda s, tx: s + tx.payload["n"], {"add"})
        assert (out.state, out.applied, out.height) == (6, 3, 3)
        assert out.head_hash == ledger.head.hash

    def test_broken_chain_is_refused(self):
        ledger = Ledger(FinalMode(1000))
        ledger.advance(3000)
        chain = ledger.canonical_chain()
        spliced = [chain[0], chain[2], chain[3]]
        with pytest.raises(BrokenChain):
            replay_recover(ReplayRecovery(), spliced, 0, lambda s, tx: s, set())
        out = replay_recover(ReplayRecovery(validate_chain=False), spliced, 0, lambda s, tx: s, set())
        assert out.height == 3


# --- serialization: timestamping ---

class TestTimestamping:
    @pytest.fixture
    def chain(self):
        ledger = Ledger(FinalMode(1000))
        ledger.advance(10_000)
        return ledger

    def _response(self, provider, keys, policy, block, **kw):
        return timestamp_response(policy, provider, keys.secret, "payload", block.height, block.hash, **kw)

    def test_fresh_response_is_accepted(self, chain, provider, stream):
        keys = provider.signing_keypair(stream)
        policy = Timestamping(HeightAndHash(), freshness_window=1)
        view = read_view(chain, [NodeConnection.honest_node("n")])
        resp = self._response(provider, keys, policy, chain.head)
        assert client_verify(resp, view, policy, crypto=provider, public_key=keys.public) == Verdict.ACCEPT

    def test_isolated_clone_is_stale(self, chain, provider, stream):
        keys = provider.signing_keypair(stream)
        policy = Timestamping(HeightAndHash(), freshness_window=1)
        view = read_view(chain, [NodeConnection.honest_node("n")])
        old = chain.canonical_chain()[chain.height - 5]
        resp = self._response(provider, keys, policy, old)
        assert client_verify(resp, view, policy) == Verdict.REJECT_STALE

    def test_window_edge(self, chain, provider, stream):
        keys = provider.signing_keypair(stream)
        policy = Timestamping(PlainHeight(), freshness_window=2)
        view = read_view(chain, [NodeConnection.honest_node("n")])
        blocks = chain.canonical_chain()
        assert client_verify(self._response(provider, keys, policy, blocks[-3]), view, policy) == Verdict.ACCEPT
        assert client_verify(self._response(provider, keys, policy, blocks[-4]), view, policy) == Verdict.REJECT_STALE

    def test_plain_height_carries_no_hash(self, chain, provider, stream):
        keys = provider.signing_keypair(stream)
        resp = self._response(provider, keys, Timestamping(PlainHeight()), chain.head)
        assert resp.block_hash is None

    def test_off_branch_hash_is_a_fork_mismatch(self, provider, stream):
        ledger = Ledger(PRESETS["ethereum"])
        a, b = ledger.fork_at_head([Tx("t", "x")], [])
        keys = provider.signing_keypair(stream)
        policy = Timestamping(HeightAndHash())
        view_b = read_view(ledger, [NodeConnection.on_branch("n", b.hash)])
        resp = self._response(provider, keys, policy, a)
        assert client_verify(resp, view_b, policy) == Verdict.REJECT_FORK_MISMATCH

    def test_missing_hash_is_a_fork_mismatch_when_hashes_are_required(self, chain, provider, stream):
        keys = provider.signing_keypair(stream)
        view = read_view(chain, [NodeConnection.honest_node("n")])
        plain = self._response(provider, keys, Timestamping(PlainHeight()), chain.head)
        assert plain.block_hash is None
        assert client_verify(plain, view, Timestamping(PlainHeight())) == Verdict.ACCEPT
        assert client_verify(plain, view, Timestamping(HeightAndHash())) == Verdict.REJECT_FORK_MISMATCH
        assert client_verify(plain, view, Timestamping(Range(0, 100))) == Verdict.REJECT_FORK_MISMATCH

    def test_bad_signature(self, chain, provider, stream):
        keys = provider.signing_keypair(stream)
        policy = Timestamping()
        view = read_view(chain, [NodeConnection.honest_node("n")])
        resp = replace(self._response(provider, keys, policy, chain.head), payload="forged")
        with pytest.raises(BadSignature):
            client_verify(resp, view, policy, crypto=provider, public_key=keys.public)

    def test_range_variant(self, chain, provider, stream):
        keys = provider.signing_keypair(stream)
        policy = Timestamping(Range(0, 100))
        self._response(provider, keys, policy, chain.head, requested_range=(8, 12))
        with pytest.raises(NotInRange):
            self._response(provider, keys, policy, chain.head, requested_range=(11, 12))

    def test_heartbeat_variant(self, chain, provider, stream):
        keys = provider.signing_keypair(stream)
        policy = Timestamping(HeartbeatAck(period_ms=1000))
        self._response(provider, keys, policy, chain.head, last_ack_ms=8000, now_ms=10_000)
        with pytest.raises(NoAck):
            self._response(provider, keys, policy, chain.head, last_ack_ms=7999, now_ms=10_000)
        with pytest.raises(NoAck):
            self._response(provider, keys, policy, chain.head, last_ack_ms=None, now_ms=10_000)

    def test_wire_layout_is_canonical(self, chain, provider, stream):
        keys = provider.signing_keypair(stream)
        resp = self._response(provider, keys, Timestamping(), chain.head)
        assert codec.unpack_fields(resp.to_bytes(), 4) == ["payload", resp.height, resp.block_hash, resp.signature]


# --- serialization: state on ledger ---

commit_steps = st.lists(
    st.tuples(
        st.integers(min_value=0, max_value=6),  # which known digest to extend
        st.booleans(),  # anchor on the current head
        st.integers(min_value=0, max_value=2),  # blocks to produce afterwards
    ),
    min_size=1,
    max_size=12,
)


class TestStateOnLedger:
    def _ledger(self, window=0):
        ledger = Ledger(FinalMode(1000))
        validator = StateCommitValidator(StateOnLedger(anchor_window=window))
        ledger.register_tx_validator(COMMIT_KIND, validator)
        validator.register_genesis("c", codec.digest("genesis"))
        ledger.advance(2000)
        return ledger, validator

    def test_extends_head_from_fresh_anchor(self):
        ledger, v = self._ledger()
        g = v.head("c")
        state_commit(StateOnLedger(), ledger, "c", g, codec.digest(1), ledger.head.hash)
        assert v.head("c") == codec.digest(1)

    def test_wrong_predecessor(self):
        ledger, v = self._ledger()
        with pytest.raises(ValidationFailed) as err:
            state_commit(StateOnLedger(), ledger, "c", codec.digest("nope"), codec.digest(1), ledger.head.hash)
        assert err.value.reason == "WrongPredecessor"

    def test_stale_anchor(self):
        ledger, v = self._ledger()
        old = ledger.canonical_chain()[-2].hash
        with pytest.raises(ValidationFailed) as err:
            state_commit(StateOnLedger(), ledger, "c", v.head("c"), codec.digest(1), old)
        assert err.value.reason == "StaleAnchor"

    def test_anchor_window(self):
        ledger, v = self._ledger(window=1)
        old = ledger.canonical_chain()[-2].hash
        state_commit(StateOnLedger(1), ledger, "c", v.head("c"), codec.digest(1), old)

    def test_unknown_contract(self):
        ledger, _ = self._ledger()
        with pytest.raises(ValidationFailed) as err:
            state_commit(StateOnLedger(), ledger, "other", b"", b"", ledger.head.hash)
        assert err.value.reason == "UnknownContract"

    @settings(max_examples=1000, deadline=None)
    @given(commit_steps)
    def test_accepted_commits_form_one_hash_linked_chain(self, steps):
        ledger, v = self._ledger()
        genesis = v.head("c")
        known = [genesis]
        for n, (pick, fresh, produce) in enumerate(steps):
            prev = known[pick % len(known)]
            new = codec.digest(("state", n))
            anchor = ledger.head.hash if fresh else ledger.canonical_chain()[0].hash
            try:
                state_commit(StateOnLedger(), ledger, "c", prev, new, anchor)
            except ValidationFailed:
                pass
            known.append(new)
            ledger.advance(1000 * produce)

        history = v.history("c")
        expected_prev = genesis
        for commit in history:
            assert commit.prev_digest == expected_prev
            expected_prev = commit.new_digest
        assert v.head("c") == expected_prev
        assert len({c.new_digest for c in history}) == len(history)


# --- fixed clients ---

class TestFixedClients:
    @pytest.fixture
    def clients(self, provider, stream):
        keys = {cid: provider.signing_keypair(stream) for cid in ("a", "b", "c")}
        return keys, FixedClientPolicy({cid: kp.public for cid, kp in keys.items()})

    def _inputs(self, provider, keys, digest, round_no=0):
        return [sign_input(provider, kp.secret, cid, round_no, digest, {"bet": cid}) for cid, kp in keys.items()]

    def test_policy_is_immutable(self, clients):
        _, policy = clients
        with pytest.raises(AttributeError):
            policy.extra = 1
        with pytest.raises(TypeError):
            policy.clients["d"] = b""
        with pytest.raises(ValueError):
            FixedClientPolicy({})

    def test_round_executes_when_all_agree(self, provider, clients):
        keys, policy = clients
        state = {"round": 0}
        inputs = self._inputs(provider, keys, state_digest(state))
        new, out = fixed_client_round(
            policy, provider, state, inputs, lambda s, p: ({"round": s["round"] + 1}, sorted(p)), 0,
        )
        assert new == {"round": 1}
        assert out.round_no == 1
        assert out.digest == state_digest(new)
        assert out.output == ["a", "b", "c"]

    def test_stale_digest_is_a_state_mismatch(self, provider, clients):
        keys, policy = clients
        inputs = self._inputs(provider, keys, state_digest({"round": 1}))
        with pytest.raises(StateMismatch) as err:
            check_round(policy, provider, state_digest({"round": 0}), inputs)
        assert err.value.offending == ("a", "b", "c")

    def test_missing_client_is_a_state_mismatch(self, provider, clients):
        keys, policy = clients
        digest = state_digest({})
        with pytest.raises(StateMismatch) as err:
            check_round(policy, provider, digest, self._inputs(provider, keys, digest)[:2])
        assert err.value.offending == ("c",)

    def test_forged_and_foreign_inputs(self, provider, clients, stream):
        keys, policy = clients
        digest = state_digest({})
        inputs = self._inputs(provider, keys, digest)
        forged = [replace(inputs[0], payload={"bet": "mallory"}), *inputs[1:]]
        with pytest.raises(BadSignature):
            check_round(policy, provider, digest, forged)
        stranger = provider.signing_keypair(stream)
        extra = sign_input(provider, stranger.secret, "z", 0, digest, {})
        with pytest.raises(BadSignature):
            check_round(policy, provider, digest, [*inputs, extra])


# --- ephemeral identities ---

def registrar_program(name="registrar") -> EnclaveProgram:
    def step(ctx, state, msg):
        role, supersedes = msg
        return state, make_registration(ctx, role, supersedes)

    return EnclaveProgram(name=name, init=dict, step=step, ephemeral_keys=True)


class TestEphemeralRegistry:
    @pytest.fixture
    def world(self, provider):
        sim = Simulation.create(9, crypto=provider)
        sim.runtime.add_platform("P1")
        sim.runtime.add_platform("P2")
        sim.runtime.register_program(registrar_program())
        registry = EphemeralIdRegistry(provider, sim.runtime.verify_attestation)
        sim.ledger.register_tx_validator(REGISTER_KIND, registry)
        return sim, registry

    def _register(self, sim, alias, platform, role="r", supersedes=False):
        if alias not in sim.host.instances:
            sim.host.launch(alias, platform, "registrar")
        reg = sim.host.deliver(alias, (role, supersedes))
        ephemeral_register(EphemeralIdPolicy(), sim.ledger, reg, sender=alias)
        return reg

    def test_register_then_active_after_inclusion(self, world):
        sim, registry = world
        reg = self._register(sim, "A", "P1")
        assert registry.active("r") is None
        sim.ledger.advance(1000)
        assert registry.is_registered(reg.signing_pk, "r")
        assert registry.active("r").height == 1

    def test_role_taken(self, world):
        sim, registry = world
        self._register(sim, "A", "P1")
        with pytest.raises(ValidationFailed) as err:
            self._register(sim, "B", "P1")
        assert err.value.reason == "RoleTaken"

    def test_supersede_same_binding(self, world):
        sim, registry = world
        first = self._register(sim, "A", "P1")
        sim.ledger.advance(1000)
        second = self._register(sim, "B", "P1", supersedes=True)
        sim.ledger.advance(1000)
        assert registry.is_registered(second.signing_pk, "r")
        assert registry.is_retired(first.signing_pk)

    def test_supersede_from_other_platform_is_refused(self, world):
        sim, _ = world
        self._register(sim, "A", "P1")
        sim.ledger.advance(1000)
        with pytest.raises(ValidationFailed) as err:
            self._register(sim, "B", "P2", supersedes=True)
        assert err.value.reason == "Unauthorized"

    def test_tampered_registrations(self, world, stream):
        sim, _ = world
        sim.host.launch("A", "P1", "registrar")
        reg = sim.host.deliver("A", ("r", False))
        other = sim.crypto.signing_keypair(stream)
        cases = {
            "UnboundKey": replace(reg, signing_pk=other.public),
            "AttestationFailed": replace(reg, report=replace(reg.report, signature=b"\x00" * 64)),
            "BadSignature": replace(reg, proof=sim.crypto.sign(other.secret, reg.signed_bytes())),
        }
        for reason, bad in cases.items():
            with pytest.raises(ValidationFailed) as err:
                sim.ledger.submit_tx(Tx(REGISTER_KIND, "A", {"registration": bad}))
            assert err.value.reason == reason

    def test_local_registry_sends_nothing(self, world):
        sim, _ = world
        sim.host.launch("A", "P1", "registrar")
        reg = sim.host.deliver("A", ("r", False))
        tx = ephemeral_register(EphemeralIdPolicy(registry_location="none"), sim.ledger, reg)
        assert tx.kind == REGISTER_KIND
        assert sim.ledger.pending == ()


class TestEnvelopes:
    def test_only_the_recipient_opens(self, provider, stream):
        alice = provider.agreement_keypair(stream)
        mallory = provider.agreement_keypair(stream)
        env = seal_to(provider, stream, alice.public, b"five coins")
        assert open_envelope(provider, alice.secret, env) == b"five coins"
        with pytest.raises(DecryptionError):
            open_envelope(provider, mallory.secret, env)
        with pytest.raises(DecryptionError):
            open_envelope(provider, alice.secret, env, info=b"other-purpose")
