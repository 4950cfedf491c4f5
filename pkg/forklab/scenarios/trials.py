from __future__ import annotations
import logging
from dataclasses import dataclass
from typing import Any, Dict, List, Optional, Tuple

import numpy as np

from forklab import rng as rngs
from forklab.errors import ConfigError
from forklab.host.runner import ScriptRunner
from forklab.scenarios.config import ScenarioConfig
from forklab.scenarios.runner import build_world, run_scenario

logger = logging.getLogger(__name__)

Z95 = 1.959963984540054
MIN_TRIALS = 100
ROUNDS_PER_WORLD = 100


def wilson_interval(successes: int, n: int, z: float = Z95) -> Tuple[float, float]:
    """Wilson score interval for a binomial proportion."""
    if n <= 0:
        raise ValueError("n must be positive")
    if not 0 <= successes <= n:
        raise ValueError("successes must lie in [0, n]")
    p = successes / n
    z2 = z * z
    denom = 1.0 + z2 / n
    centre = (p + z2 / (2 * n)) / denom
    half = z * np.sqrt(p * (1 - p) / n + z2 / (4 * n * n)) / denom
    # the bounds are exactly 0 and 1 at the edges; the float sum is not
    lo = 0.0 if successes == 0 else float(max(0.0, centre - half))
    hi = 1.0 if successes == n else float(min(1.0, centre + half))
    return lo, hi


@dataclass(frozen=True, slots=True)
class TrialResult:
    """
    Frequency of attack success over N independent trials.

    For round-based protocols a trial is one round and `baseline` is how
    often the adversary's original instance alone would have won.
    """
    scenario: str
    protocol: str
    variant: str
    attack: str
    seed: int
    trials: int
    successes: int
    ci_low: float
    ci_high: float
    baseline: Optional[float] = None

    @property
    def frequency(self) -> float:
        return self.successes / self.trials

    def to_rows(self) -> List[Dict[str, Any]]:
        return [{
            "scenario": self.scenario,
            "protocol": self.protocol,
            "variant": self.variant,
            "attack": self.attack,
            "seed": self.seed,
            "trials": self.trials,
            "successes": self.successes,
            "frequency": round(self.frequency, 6),
            "ci_low": round(self.ci_low, 6),
            "ci_high": round(self.ci_high, 6),
            "baseline": None if self.baseline is None else round(self.baseline, 6),
        }]

    def to_record(self) -> Dict[str, Any]:
        return self.to_rows()[0]


def _round_trials(config: ScenarioConfig, n: int) -> Tuple[int, int]:
    """(adversary wins, baseline wins) over n rounds split into worlds of at most 100 rounds."""
    won = base = done = 0
    for world_seed in rngs.sub_seeds(config.seed, (n + ROUNDS_PER_WORLD - 1) // ROUNDS_PER_WORLD):
        rounds = min(ROUNDS_PER_WORLD, n - done)
        sub = config.with_seed(world_seed).model_copy(update={"params": {**config.params, "rounds": rounds}})
        sim, world = build_world(sub)
        script = sub.attack_script()
        ScriptRunner(sim.host, world).run(script if script is not None else world.default_script(sub.attack_kind))
        played, w, b = world.round_counts()
        if played != rounds:
            raise ConfigError("script", f"world played {played} rounds, expected {rounds}")
        won += w
        base += b
        done += rounds
    return won, base


def run_trials(config: ScenarioConfig, trials: Optional[int] = None) -> TrialResult:
    """
    Repeat a scenario N >= 100 times on independent sub-seeds.

    Round-based protocols (PoUW, FastKittenLottery, TenPobi) count rounds;
    everything else counts whole scenario runs that the attack won.
    """
    n = int(trials if trials is not None else config.trials)
    if n < MIN_TRIALS:
        raise ConfigError("trials", f"need at least {MIN_TRIALS} trials, got {n}")
    baseline: Optional[float] = None
    if config.world_class.randomized and "rounds" in config.world_class.defaults:
        successes, base = _round_trials(config, n)
        baseline = base / n
    else:
        successes = sum(
            1 for s in rngs.sub_seeds(config.seed, n) if run_scenario(config.with_seed(s)).outcome.succeeded
        )
    lo, hi = wilson_interval(successes, n)
    logger.info("%s: %d/%d trials (%.4f, CI %.4f..%.4f)", config.name, successes, n, successes / n, lo, hi)
    return TrialResult(
        scenario=config.name,
        protocol=config.protocol,
        variant=config.variant,
        attack=config.attack,
        seed=config.seed,
        trials=n,
        successes=successes,
        ci_low=lo,
        ci_high=hi,
        baseline=baseline,
    )
