from dataclasses import replace

import pytest

from forklab import rng as rngs
from forklab.errors import BrokenChain, DuplicateKind, NoConnections, ValidationFailed
from forklab.host.clock import SimClock
from forklab.host.events import EventLog
from forklab.ledger.chain import (
    PRESETS,
    EventualMode,
    FinalMode,
    Ledger,
    Tx,
    TxValidator,
    check_chain,
    is_valid_chain,
)
from forklab.ledger.views import NodeConnection, honest_connections, read_view


def make_ledger(mode=FinalMode(1000), fork_seed: int = 0) -> Ledger:
    clock = SimClock()
    return Ledger(mode, clock=clock, log=EventLog(clock), rng=rngs.stream(fork_seed, rngs.LEDGER_STREAM))


class RefuseOdd(TxValidator):
    def __init__(self):
        self.included = []

    def validate(self, tx, ledger):
        if tx.payload.get("n", 0) % 2:
            raise ValidationFailed("Odd", str(tx.payload["n"]))

    def on_include(self, tx, block, ledger):
        self.included.append((tx.payload["n"], block.height))


class TestClock:
    def test_events_at_the_target_time_run(self):
        clock = SimClock()
        fired = []
        clock.schedule(10, lambda: fired.append("a"))
        clock.schedule(10, lambda: fired.append("b"))
        clock.advance(9)
        assert fired == []
        clock.advance(1)
        assert fired == ["a", "b"]
        assert clock.now == 10

    def test_negative_values(self):
        clock = SimClock()
        with pytest.raises(ValueError):
            clock.advance(-1)
        with pytest.raises(ValueError):
            clock.schedule(-1, lambda: None)


class TestProduction:
    def test_final_mode_block_count(self):
        ledger = make_ledger(FinalMode(12000))
        blocks = ledger.advance(36000)
        assert len(blocks) == 3
        assert ledger.height == 3
        assert [b.timestamp for b in blocks] == [12000, 24000, 36000]

    def test_partial_interval_produces_nothing(self):
        ledger = make_ledger(FinalMode(1000))
        assert ledger.advance(999) == []
        assert len(ledger.advance(1)) == 1

    def test_canonical_chain_is_valid(self):
        ledger = make_ledger()
        ledger.advance(5000)
        chain = ledger.canonical_chain()
        check_chain(chain)
        assert [b.height for b in chain] == list(range(6))

    def test_final_mode_forbids_forks(self):
        ledger = make_ledger()
        ledger.append_block(ledger.genesis.hash, [], proposer="a")
        with pytest.raises(ValidationFailed) as err:
            ledger.append_block(ledger.genesis.hash, [], proposer="b")
        assert err.value.reason == "ForkForbidden"

    def test_eventual_mode_forks_sometimes(self):
        ledger = make_ledger(EventualMode(1000, 0.5, 2), fork_seed=3)
        ledger.advance(40_000)
        assert len(ledger.all_blocks()) > ledger.height + 1
        check_chain(ledger.canonical_chain())

    def test_fork_at_head_and_tiebreak(self):
        ledger = make_ledger(PRESETS["ethereum"])
        a, b = ledger.fork_at_head([Tx("t", "x")], [])
        assert a.height == b.height == 1
        assert ledger.head.hash == min(a.hash, b.hash)
        assert ledger.best_descendant(a.hash) == a
        tip = ledger.append_block(b.hash, [], proposer="node-1")
        assert ledger.head == tip
        assert ledger.is_canonical(1, b.hash)
        assert not ledger.is_canonical(1, a.hash)

    def test_confirmed_head(self):
        ledger = make_ledger(EventualMode(1000, 0.0, 3))
        ledger.advance(10_000)
        assert ledger.confirmed_head().height == 7
        final = make_ledger()
        final.advance(4000)
        assert final.confirmed_head() == final.head

    def test_blocks_are_logged(self):
        ledger = make_ledger()
        ledger.advance(2000)
        assert len(ledger.log.find("ledger.block")) == 2


class TestTransactions:
    def test_validator_gates_submission_and_sees_inclusion(self):
        ledger = make_ledger()
        v = RefuseOdd()
        ledger.register_tx_validator("num", v)
        ledger.submit_tx(Tx("num", "alice", {"n": 2}))
        with pytest.raises(ValidationFailed):
            ledger.submit_tx(Tx("num", "alice", {"n": 3}))
        assert ledger.log.contains("ledger.reject", reason="Odd")
        ledger.advance(1000)
        assert v.included == [(2, 1)]
        assert ledger.pending == ()

    def test_duplicate_validator(self):
        ledger = make_ledger()
        ledger.register_tx_validator("num", RefuseOdd())
        with pytest.raises(DuplicateKind):
            ledger.register_tx_validator("num", RefuseOdd())

    def test_submit_inside_a_simulation_is_logged(self, sim):
        receipt = sim.ledger.submit_tx(Tx("note", "alice", {"n": 1}))
        event = sim.log.last("ledger.submit")
        assert event is not None
        assert event.kind == "ledger.submit"
        assert event.data["tx_kind"] == "note"
        assert event.data["sender"] == "alice"
        assert event.data["tx_id"] == receipt.tx_id.hex()[:16]
        assert sim.log.contains("ledger.submit", tx_kind="note")

    def test_rejection_inside_a_simulation_is_logged(self, sim):
        sim.ledger.register_tx_validator("num", RefuseOdd())
        with pytest.raises(ValidationFailed):
            sim.ledger.submit_tx(Tx("num", "bob", {"n": 3}))
        assert sim.log.contains("ledger.reject", tx_kind="num", sender="bob", reason="Odd")
        assert not sim.log.contains("ledger.submit")

    def test_receipts_number_transactions(self):
        ledger = make_ledger()
        r1 = ledger.submit_tx(Tx("a", "x"))
        r2 = ledger.submit_tx(Tx("a", "x"))
        assert (r1.seq, r2.seq) == (0, 1)
        assert r1.tx_id != r2.tx_id


class TestCheckChain:
    def test_broken_chains(self):
        ledger = make_ledger()
        ledger.advance(3000)
        chain = ledger.canonical_chain()
        with pytest.raises(BrokenChain, match="empty"):
            check_chain([])
        with pytest.raises(BrokenChain, match="genesis"):
            check_chain(chain[1:])
        with pytest.raises(BrokenChain, match="discontinuity"):
            check_chain([chain[0], chain[2]])
        tampered = [*chain[:2], replace(chain[2], proposer="mallory"), *chain[3:]]
        assert not is_valid_chain(tampered)


class TestViews:
    def test_highest_chain_wins(self):
        ledger = make_ledger()
        ledger.advance(5000)
        view = read_view(ledger, [NodeConnection.stale("node-0", 3), NodeConnection.honest_node("node-1")])
        assert view.height == 5

    def test_stale_and_silent(self):
        ledger = make_ledger()
        ledger.advance(5000)
        assert read_view(ledger, [NodeConnection.stale("n", 2)]).height == 3
        assert read_view(ledger, [NodeConnection.silent("n")]).head == ledger.genesis

    def test_no_connections(self):
        with pytest.raises(NoConnections):
            read_view(make_ledger(), [])

    def test_branch_view(self):
        ledger = make_ledger(PRESETS["ethereum"])
        a, b = ledger.fork_at_head([], [Tx("t", "x")])
        on_a = read_view(ledger, [NodeConnection.on_branch("n", a.hash)])
        on_b = read_view(ledger, [NodeConnection.on_branch("n", b.hash)])
        assert on_a.contains(1, a.hash) and not on_a.contains(1, b.hash)
        assert on_b.contains(1, b.hash)
        assert len(on_b.txs("t")) == 1

    def test_honest_connections(self):
        assert [c.node_id for c in honest_connections(2)] == ["node-0", "node-1"]
