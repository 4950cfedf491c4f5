from statistics import mean

import pytest
from hypothesis import given, settings, strategies as st

from forklab import rng as rngs
from forklab.enclave.crypto import make_provider
from forklab.enclave.program import Rejected
from forklab.errors import AttestationFailed, StateMismatch
from forklab.host.runner import ScriptRunner
from forklab.host.script import AttackKind, Cell, EvidenceKind
from forklab.ledger.chain import PRESETS, Ledger, Tx
from forklab.mitigations import FixedClientPolicy, HeartbeatAck, Verdict, sign_input, state_digest
from forklab.protocols.bite import BiteWorld
from forklab.protocols.ccf import Aborted, CcfWorld, Executed, ccf_connect, ccf_submit
from forklab.protocols.fastkitten import fastkitten_lottery_round, lottery_init
from forklab.protocols.network import enroll
from forklab.protocols.phala import (
    WORKER,
    PhalaWorld,
    expected_gap_blocks,
    heartbeat_eligible,
    heartbeat_gaps_ms,
    phala_heartbeat_tick,
    senders_per_block,
    timestamp_policy,
)
from forklab.protocols.pouw import Attempt, NoLuck, PoUwConfig, PoUwProof, PoUwWorld, Task, pouw_clone_trial, threshold
from forklab.protocols.proof_of_luck import FinishRound, PoLProof, ProofOfLuckWorld, StartRound, pol_generate, proofs_per_round
from forklab.protocols.secret import SecretWorld, client_query_key, enclave_query_key, io_keypair
from forklab.protocols.ten import ROLLUP_KIND, RollupHeader, TenRollup, TenWorld, ten_propose, ten_settle
from forklab.protocols.twilight import TwilightWorld, claimers, twilight_claim, twilight_pay
from forklab.scenarios.config import load_scenario, parse_scenario
from forklab.scenarios.runner import run_scenario
from forklab.simulation import Simulation


def world_for(cls, seed=0, variant="vulnerable", **params):
    sim = Simulation.create(seed, PRESETS[cls.consensus], make_provider("hash"))
    world = cls(sim, variant, params)
    world.setup()
    return world


def evidence_kinds(outcome):
    return {e.kind for e in outcome.evidence}


# --- PoUW ---

class TestPoUw:
    def test_threshold(self):
        assert threshold(0.1, 3) == pytest.approx(0.271)
        assert threshold(0.5, 1) == pytest.approx(0.5)
        assert threshold(0.3, 0) == 0.0
        with pytest.raises(ValueError):
            threshold(0.3, -1)

    @pytest.mark.parametrize("diff", [0.0, 1.0, -0.5, 2.0])
    def test_diff_must_be_a_probability(self, diff):
        with pytest.raises(ValueError):
            PoUwConfig(diff)

    @pytest.mark.slow
    @pytest.mark.parametrize("clones, expected", [(1, 0.2), (4, 1 - 0.8 ** 4)])
    def test_clone_success_rate(self, clones, expected):
        rate = pouw_clone_trial(PoUwConfig(0.2), Task("task-0", 1), clones, 10_000, seed=2024)
        assert rate == pytest.approx(expected, abs=0.02)

    def test_attempt_binds_the_head(self):
        world = world_for(PoUwWorld, diff=0.5, instructions=64)
        head = world.ledger.head
        proof = world.host.deliver("M0", Attempt(Task("task-0", 64), head.hash, head.height))
        assert isinstance(proof, PoUwProof)
        assert proof.block_hash == head.hash
        assert world.runtime.verify_attestation(proof.report)

    def test_rollback_script_lands_fresh_proofs_and_refuses_stale_ones(self):
        world = world_for(PoUwWorld, diff=0.5, instructions=64, rounds=4)
        ScriptRunner(world.host, world).run(world.default_script(AttackKind.ROLLBACK))
        fresh = world.log.find("host.submit", output="fresh")
        assert len(fresh) == 4
        assert all(e.data["accepted"] for e in fresh)
        assert len(world.log.find("host.submit", output="stale", accepted=False)) == 4
        outcome = world.judge(AttackKind.ROLLBACK)
        assert outcome.cell == Cell.FAILS
        assert EvidenceKind.STALE_ANCHOR in evidence_kinds(outcome)

    def test_no_instructions_no_luck(self):
        world = world_for(PoUwWorld)
        head = world.ledger.head
        assert isinstance(world.host.deliver("M0", Attempt(Task("task-0", 0), head.hash, head.height)), NoLuck)


# --- Proof of luck ---

class TestProofOfLuck:
    def test_generate_binds_the_head(self):
        world = world_for(ProofOfLuckWorld)
        head = world.ledger.head
        proof = pol_generate(world.host, "L0", head, 1)
        assert isinstance(proof, PoLProof)
        assert (proof.round_no, proof.block_hash, proof.platform) == (1, head.hash, "P1")

    def test_a_later_start_voids_an_open_round(self):
        world = world_for(ProofOfLuckWorld)
        head = world.ledger.head
        world.host.deliver("L0", StartRound(1, head.hash, head.height))
        world.host.clone("L0", "L1", "none")
        assert isinstance(pol_generate(world.host, "L1", head, 1), PoLProof)
        late = world.host.deliver("L0", FinishRound())
        assert isinstance(late, Rejected)
        assert late.code == "CounterMismatch"

    def test_finish_needs_a_start(self):
        world = world_for(ProofOfLuckWorld)
        assert world.host.deliver("L0", FinishRound()).code == "NoRound"

    def test_only_the_last_started_clone_finishes(self):
        world = world_for(ProofOfLuckWorld, clones=3, rounds=4)
        ScriptRunner(world.host, world).run(world.default_script(AttackKind.CLONING))
        assert proofs_per_round(world) == [1, 1, 1, 1]
        assert world.log.contains("enclave.reject", code="CounterMismatch")

    @pytest.mark.slow
    @settings(max_examples=1000, deadline=None)
    @given(clones=st.integers(min_value=1, max_value=8), seed=st.integers(min_value=0, max_value=2**32))
    def test_at_most_one_proof_per_round(self, clones, seed):
        world = world_for(ProofOfLuckWorld, seed, clones=clones, rounds=2)
        ScriptRunner(world.host, world).run(world.default_script(AttackKind.CLONING))
        per_round = proofs_per_round(world)
        assert len(per_round) == 2
        assert all(p <= 1 for p in per_round)


# --- Twilight ---

class TestTwilight:
    def test_recipient_claims_the_payment(self):
        world = world_for(TwilightWorld)
        payment = twilight_pay(world.host, "S", world.recipient_pk(), 5)
        assert twilight_claim(world.host, "M", payment) == 5
        assert isinstance(twilight_claim(world.host, "S", payment), Rejected)

    def test_non_positive_amount(self):
        world = world_for(TwilightWorld)
        assert isinstance(twilight_pay(world.host, "S", world.recipient_pk(), 0), Rejected)

    @pytest.mark.slow
    @settings(max_examples=1000, deadline=None)
    @given(clones=st.integers(min_value=1, max_value=8), seed=st.integers(min_value=0, max_value=2**32))
    def test_exactly_one_instance_claims(self, clones, seed):
        world = world_for(TwilightWorld, seed)
        aliases = ["M", *(f"M{i}" for i in range(1, clones))]
        for alias in aliases[1:]:
            world.host.clone("M", alias, "none")
        payment = twilight_pay(world.host, "S", world.recipient_pk(), 5)
        assert claimers(world.host, payment, aliases) == 1


# --- FastKitten ---

class TestFastKitten:
    @pytest.fixture
    def setup(self, provider):
        stream = rngs.stream(3, 1)
        keys = {cid: provider.signing_keypair(stream) for cid in ("a", "b", "c", "d")}
        policy = FixedClientPolicy({cid: kp.public for cid, kp in keys.items()})
        return provider, keys, policy

    def _inputs(self, provider, keys, state):
        digest = state_digest(state)
        return [sign_input(provider, kp.secret, cid, state["round"], digest, {"bet": 1}) for cid, kp in keys.items()]

    def test_round_picks_the_drawn_client(self, setup):
        provider, keys, policy = setup
        state = lottery_init(policy.client_ids)
        new, ann = fastkitten_lottery_round(policy, provider, state, self._inputs(provider, keys, state), lambda k: 2)
        assert ann.winner == "c"
        assert ann.round_no == 1
        assert ann.digest == state_digest(new)
        assert new["wins"] == {"a": 0, "b": 0, "c": 1, "d": 0}

    def test_inputs_for_an_old_state_are_refused(self, setup):
        provider, keys, policy = setup
        state = lottery_init(policy.client_ids)
        old_inputs = self._inputs(provider, keys, state)
        new, _ = fastkitten_lottery_round(policy, provider, state, old_inputs, lambda k: 0)
        with pytest.raises(StateMismatch):
            fastkitten_lottery_round(policy, provider, new, old_inputs, lambda k: 0)


# --- CCF ---

class TestCcf:
    def test_submit_commits_to_the_ledger(self):
        world = world_for(CcfWorld)
        assert ccf_connect(world, "A", "P") == 1
        done = ccf_submit(world, "A", "P", "k1", 1)
        assert isinstance(done, Executed)
        assert done.view == 1
        world.host.advance_time(world.ledger.mode.block_interval_ms)
        assert world.committed_kv() == {"k1": 1}

    def test_client_that_saw_a_newer_view_aborts_on_a_stale_clone(self):
        world = world_for(CcfWorld)
        ccf_submit(world, "B", "P", "k1", 1)
        world.host.advance_time(world.ledger.mode.block_interval_ms)
        world.host.clone("P", "P2", "own")
        assert world.op_view_change() == 2
        assert ccf_connect(world, "B", "P") == 2
        assert ccf_connect(world, "B", "P2") == Aborted("ViewMismatch", 2, 1)
        assert world.log.contains("ccf.abort", client="B", alias="P2")


# --- Ten ---

def rollup(nonce, address):
    header = RollupHeader(b"\x01" * 32, (), b"\x02" * 32, b"", 0, nonce, address)
    return TenRollup(header)


class TestTenSettle:
    def test_lowest_nonce_wins(self):
        rollups = [rollup(9, "agg-0"), rollup(3, "agg-7"), rollup(5, "agg-1")]
        assert ten_settle(rollups).address == "agg-7"

    def test_ties_go_to_the_lowest_address(self):
        assert ten_settle([rollup(4, "agg-b"), rollup(4, "agg-a")]).address == "agg-a"

    def test_nothing_to_settle(self):
        assert ten_settle([]) is None


class TestTenPropose:
    def test_rollup_is_bound_to_the_synced_head(self):
        world = world_for(TenWorld, honest=2)
        rollup = ten_propose(world.host, "agg-1", "agg-1", ["t1"])
        assert isinstance(rollup, TenRollup)
        assert rollup.header.l1_ref == world.ledger.head.hash
        assert rollup.address == "agg-1"
        assert world.host.submit_tx(Tx(ROLLUP_KIND, "agg-1", {"rollup": rollup})) is not None

    def test_one_rollup_per_block(self):
        world = world_for(TenWorld, honest=2)
        ten_propose(world.host, "agg-1", "agg-1")
        again = ten_propose(world.host, "agg-1", "agg-1")
        assert isinstance(again, Rejected)
        assert again.code == "ThrottleExceeded"
        world.host.advance_time(world.ledger.mode.block_interval_ms)
        assert isinstance(ten_propose(world.host, "agg-1", "agg-1"), TenRollup)


# --- Phala ---

class TestPhalaHeartbeats:
    def test_expected_gap(self):
        assert expected_gap_blocks(400) == 20.0
        assert expected_gap_blocks(5) == 1.0

    def test_needs_workers(self):
        with pytest.raises(ValueError):
            heartbeat_eligible(make_provider("hash"), b"pk", b"h", 0)

    def test_small_networks_always_qualify(self):
        crypto = make_provider("hash")
        assert all(heartbeat_eligible(crypto, bytes([i]) * 32, b"block", 5) for i in range(5))

    @pytest.mark.slow
    def test_heartbeat_rate_calibration(self):
        crypto = make_provider("hash")
        ledger = Ledger(PRESETS["phala"])
        interval = ledger.mode.block_interval_ms
        ledger.advance(2000 * interval)
        blocks = ledger.canonical_chain()[1:]
        stream = rngs.stream(11, rngs.WORLD_STREAM)
        workers = [stream.bytes(32) for _ in range(400)]

        per_block = senders_per_block(crypto, workers, blocks)
        assert 18.5 <= mean(per_block) <= 21.5

        gaps = [g for pk in workers[:100] for g in heartbeat_gaps_ms(crypto, pk, blocks, 400)]
        assert interval == 2250
        assert mean(gaps) == pytest.approx(45_000, rel=0.1)

    def test_timestamp_policy(self):
        assert timestamp_policy("none", 1000, 0) is None
        assert timestamp_policy("heartbeat_ack", 1000, 2).variant == HeartbeatAck(1000)
        assert timestamp_policy("height_and_hash", 0, 3).freshness_window == 3
        with pytest.raises(ValueError):
            timestamp_policy("sundial", 0, 0)


class TestPhalaWorker:
    def test_query_sees_the_toggle(self):
        world = world_for(PhalaWorld)
        assert world.op_toggle()
        world.host.advance_time(2 * world.ledger.mode.block_interval_ms)
        assert world.phala_query("W") is True
        assert world.expected_flag() is True

    def test_heartbeat_tick(self):
        world = world_for(PhalaWorld)
        world.host.isolate("W")
        block = world.host.advance_time(world.ledger.mode.block_interval_ms)[-1]
        heartbeat = phala_heartbeat_tick(world.host, "W", block)
        assert heartbeat.challenge_block == block.height
        assert heartbeat.worker_pk == world.worker_pk
        # the same block again is a height gap, not a heartbeat
        assert phala_heartbeat_tick(world.host, "W", block) is None

    def test_enrolled_worker_can_serve(self):
        world = world_for(PhalaWorld)
        world.host.launch("X", "P1", WORKER)
        enroll(world.host, "X", "G")
        assert world.log.contains("network.enroll", candidate="X", member="G")
        assert world.phala_query("X") is False

    def test_only_members_enroll(self):
        world = world_for(PhalaWorld)
        world.host.launch("X", "P1", WORKER)
        world.host.launch("Y", "P1", WORKER)
        with pytest.raises(AttestationFailed):
            enroll(world.host, "Y", "X")
        assert world.log.contains("network.enroll_refused", candidate="Y", code="NotMember")


class TestPhalaScenarios:
    def test_isolated_clone_answers_stale(self, corpus_dir):
        result = run_scenario(load_scenario(corpus_dir / "phala" / "cloning-vulnerable.yaml"))
        assert result.cell == Cell.SUCCEEDS
        assert EvidenceKind.STALE_RESPONSE_ACCEPTED in evidence_kinds(result.outcome)

    def test_timestamps_catch_the_clone(self, corpus_dir):
        result = run_scenario(load_scenario(corpus_dir / "phala" / "cloning-patched.yaml"))
        assert result.cell == Cell.FAILS
        assert EvidenceKind.REJECT_STALE in evidence_kinds(result.outcome)


# --- Secret ---

class TestSecretQuery:
    def test_query_key_agrees_on_both_sides(self, provider):
        stream = rngs.stream(17, rngs.CLIENT_STREAM)
        for _ in range(1000):
            io = io_keypair(provider, stream.bytes(32))
            client = provider.agreement_keypair(stream)
            nonce = provider.nonce(stream)
            assert client_query_key(provider, client.secret, io.public, nonce) == enclave_query_key(
                provider, io.secret, client.public, nonce
            )

    def test_honest_query(self):
        world = world_for(SecretWorld)
        assert world.secret_query() == 2
        assert world.contract_value("secret1counter") == 2

    def _rewrite(self, seed, variant):
        world = world_for(SecretWorld, seed, variant)
        world.op_deploy("secret1counterclone", sender="adversary")
        world.host.advance_time(world.ledger.mode.block_interval_ms)
        return world, world.secret_query("secret1counter", rewrite_to="secret1counterclone")

    @pytest.mark.parametrize("seed", range(5))
    def test_rewritten_address(self, seed):
        world, got = self._rewrite(seed, "vulnerable")
        assert got == 1
        assert world.contract_value("secret1counter") == 2
        _, refused = self._rewrite(seed, "patched")
        assert isinstance(refused, Rejected)
        assert refused.code == "AddressMismatch"

    def _truncated_replay(self, variant):
        world = world_for(SecretWorld, variant=variant)
        world.host.restart_with("N", "first")
        world.host.deliver("N", world.msg_replay(omit="secret.execute"))
        return world, world.secret_query()

    def test_truncated_replay_serves_the_old_value(self):
        world, got = self._truncated_replay("vulnerable")
        assert got == 1
        assert world.contract_value("secret1counter") == 2

    def test_truncated_replay_is_stale_one_block_behind(self):
        world, verdict = self._truncated_replay("patched")
        assert verdict == Verdict.REJECT_STALE
        event = world.log.last("client.verdict")
        assert (event.data["height"], event.data["view_height"]) == (1, 2)
        assert not world.log.contains("secret.response", accepted=True)

    @pytest.mark.parametrize("variant,cell", [("vulnerable", Cell.SUCCEEDS), ("patched", Cell.FAILS)])
    def test_rollback_scenarios(self, corpus_dir, variant, cell):
        result = run_scenario(load_scenario(corpus_dir / "secret" / f"rollback-{variant}.yaml"))
        assert result.cell == cell

    @pytest.mark.slow
    def test_rewritten_address_over_many_runs(self):
        for seed in rngs.sub_seeds(42, 1000):
            _, got = self._rewrite(seed, "vulnerable")
            assert got == 1
            _, refused = self._rewrite(seed, "patched")
            assert refused.code == "AddressMismatch"


# --- BITE ---

def bite(variant, seed):
    return run_scenario(parse_scenario({
        "name": f"bite-{variant}-{seed}",
        "protocol": "BiteForkScenario",
        "variant": variant,
        "attack": "cloning",
        "seed": seed,
    }))


class TestBite:
    def _answers(self, variant):
        world = world_for(BiteWorld, variant=variant)
        world.op_fork()
        world.host.clone("B1", "B2", "none")
        world.op_connect_branches()
        return world, {a: world.host.deliver(a, world.msg_balance(a)) for a in ("B1", "B2")}

    def test_each_branch_has_its_own_balance(self):
        world, answers = self._answers("vulnerable")
        assert world.bite_balance_query("B1", answers["B1"]) == 5
        assert world.bite_balance_query("B2", answers["B2"]) == 0

    def test_client_refuses_the_losing_branch(self):
        world, answers = self._answers("patched")
        assert world.bite_balance_query("B2", answers["B2"]) is None
        assert world.log.contains("client.verdict", alias="B2", verdict=Verdict.REJECT_FORK_MISMATCH)

    @pytest.mark.parametrize("seed", range(10))
    def test_fork_makes_instances_diverge(self, seed):
        outcome = bite("vulnerable", seed).outcome
        assert outcome.succeeded
        assert EvidenceKind.DIVERGENT_RESPONSES in evidence_kinds(outcome)

    @pytest.mark.parametrize("seed", range(10))
    def test_block_hash_exposes_the_branch(self, seed):
        outcome = bite("patched", seed).outcome
        assert not outcome.succeeded
        assert EvidenceKind.REJECT_FORK_MISMATCH in evidence_kinds(outcome)

    def test_rollback_does_not_apply(self):
        result = run_scenario(parse_scenario({
            "name": "bite-rollback", "protocol": "BiteForkScenario", "attack": "rollback",
        }))
        assert result.cell == Cell.NOT_APPLICABLE
