from fractions import Fraction

import pytest

from oracles import closed_form, monte_carlo


class TestClosedForms:
    def test_values(self):
        assert closed_form.any_of_clones(0.2, 4) == pytest.approx(0.5904)
        assert closed_form.any_of_clones(0.2, 1) == pytest.approx(0.2)
        assert closed_form.lottery_favored_win(2, 4) == Fraction(7, 16)
        assert closed_form.lowest_nonce_share(2, 8) == Fraction(1, 5)
        assert closed_form.heartbeat_senders_per_block(400) == 20
        assert closed_form.heartbeat_senders_per_block(5) == 5
        assert closed_form.heartbeat_gap_ms(400, 2250) == 45_000

    @pytest.mark.parametrize(
        "fn, args",
        [
            (closed_form.any_of_clones, (0.2, 0)),
            (closed_form.any_of_clones, (1.5, 2)),
            (closed_form.lottery_favored_win, (0, 4)),
            (closed_form.lowest_nonce_share, (0, 0)),
        ],
    )
    def test_bad_arguments(self, fn, args):
        with pytest.raises(ValueError):
            fn(*args)

    def test_reference_fold(self):
        s0 = {"value": 1}
        honest, rolled_back = closed_form.rollback_states(s0, ("add", 5), ("increment", None))
        assert honest == {"value": 7}
        assert rolled_back == {"value": 2}
        assert closed_form.cloning_states(s0, ("add", 5), ("add", 7)) == [{"value": 6}, {"value": 8}]
        with pytest.raises(ValueError):
            closed_form.counter_step(s0, ("explode", None))


class TestMonteCarloAgrees:
    @pytest.mark.parametrize("p, c", [(0.2, 1), (0.2, 4), (0.05, 8)])
    def test_any_of_clones(self, p, c):
        assert monte_carlo.any_of_clones(p, c) == pytest.approx(closed_form.any_of_clones(p, c), abs=0.01)

    @pytest.mark.parametrize("c, k", [(1, 4), (2, 4), (3, 2)])
    def test_lottery(self, c, k):
        assert monte_carlo.lottery_favored_win(c, k) == pytest.approx(float(closed_form.lottery_favored_win(c, k)), abs=0.01)

    @pytest.mark.parametrize("c, m", [(1, 8), (2, 8), (3, 1)])
    def test_lowest_nonce(self, c, m):
        assert monte_carlo.lowest_nonce_share(c, m) == pytest.approx(float(closed_form.lowest_nonce_share(c, m)), abs=0.01)

    def test_heartbeat_senders(self):
        assert monte_carlo.heartbeat_senders_per_block(400, 2000) == pytest.approx(20, abs=0.5)
