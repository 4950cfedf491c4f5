import pytest

from forklab.errors import ConfigError
from forklab.scenarios.config import load_scenario, parse_scenario
from forklab.scenarios.trials import run_trials, wilson_interval
from oracles import closed_form


class TestWilson:
    def test_known_interval(self):
        lo, hi = wilson_interval(50, 100)
        assert lo == pytest.approx(0.4038, abs=1e-4)
        assert hi == pytest.approx(0.5962, abs=1e-4)

    def test_edges_stay_in_unit_interval(self):
        assert wilson_interval(0, 10)[0] == 0.0
        assert wilson_interval(10, 10)[1] == 1.0
        for n in (1, 7, 100, 1000, 10_000):
            lo, hi = wilson_interval(n, n)
            assert hi == 1.0
            assert 0.0 < lo < 1.0
            assert wilson_interval(0, n)[0] == 0.0

    @pytest.mark.parametrize("successes, n", [(0, 0), (11, 10), (-1, 10)])
    def test_bad_counts(self, successes, n):
        with pytest.raises(ValueError):
            wilson_interval(successes, n)


class TestRunTrials:
    def test_needs_a_hundred_trials(self, corpus_dir):
        config = load_scenario(corpus_dir / "pouw" / "trials-c1.yaml")
        with pytest.raises(ConfigError) as err:
            run_trials(config, 99)
        assert err.value.path == "trials"

    def test_single_miner_is_its_own_baseline(self, corpus_dir):
        result = run_trials(load_scenario(corpus_dir / "pouw" / "trials-c1.yaml"), 200)
        assert result.trials == 200
        assert result.successes == round(result.baseline * result.trials)
        assert result.ci_low <= result.frequency <= result.ci_high

    def test_whole_runs_for_deterministic_worlds(self):
        config = parse_scenario({"name": "s", "protocol": "SecretQuery", "attack": "cloning", "seed": 8})
        result = run_trials(config, 100)
        assert result.successes == 100
        assert result.baseline is None

    def test_rows(self, corpus_dir):
        row = run_trials(load_scenario(corpus_dir / "pouw" / "trials-c1.yaml"), 100).to_rows()[0]
        assert list(row) == ["scenario", "protocol", "variant", "attack", "seed", "trials", "successes",
                             "frequency", "ci_low", "ci_high", "baseline"]


@pytest.mark.slow
class TestRatesMatchTheClosedForms:
    def test_pouw_four_miners(self, corpus_dir):
        result = run_trials(load_scenario(corpus_dir / "pouw" / "trials-c4.yaml"))
        assert result.trials == 10_000
        assert result.frequency == pytest.approx(closed_form.any_of_clones(0.2, 4), abs=0.02)
        assert result.baseline == pytest.approx(0.2, abs=0.02)

    def test_pouw_single_miner(self, corpus_dir):
        result = run_trials(load_scenario(corpus_dir / "pouw" / "trials-c1.yaml"))
        assert result.frequency == pytest.approx(0.2, abs=0.02)

    def test_lottery_two_clones_four_clients(self, corpus_dir):
        result = run_trials(load_scenario(corpus_dir / "fastkitten" / "trials-c2-k4.yaml"))
        assert float(closed_form.lottery_favored_win(2, 4)) == 0.4375
        assert 0.4175 <= result.frequency <= 0.4575

    def test_lottery_without_clones(self, corpus_dir):
        result = run_trials(load_scenario(corpus_dir / "fastkitten" / "trials-honest.yaml"))
        assert result.frequency == pytest.approx(0.25, abs=0.02)

    def test_ten_two_clones_eight_honest(self, corpus_dir):
        result = run_trials(load_scenario(corpus_dir / "ten" / "trials-c2-m8.yaml"))
        assert float(closed_form.lowest_nonce_share(2, 8)) == pytest.approx(0.2)
        assert 0.18 <= result.frequency <= 0.22
        assert result.baseline == pytest.approx(1 / 9, abs=0.02)
