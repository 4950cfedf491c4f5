"""Brute-force estimates on their own numpy streams, unrelated to the simulator's."""
from __future__ import annotations

import numpy as np

ORACLE_SEED = 0x0DDBA11


def _rng(seed: int) -> np.random.Generator:
    return np.random.default_rng([ORACLE_SEED, seed])


def any_of_clones(p: float, c: int, n: int = 100_000, seed: int = 0) -> float:
    hits = _rng(seed).random((n, c)) < p
    return float(hits.any(axis=1).mean())


def lottery_favored_win(c: int, k: int, n: int = 100_000, seed: int = 0, favored: int = 0) -> float:
    winners = _rng(seed).integers(0, k, size=(n, c))
    return float((winners == favored).any(axis=1).mean())


def lowest_nonce_share(c: int, m: int, n: int = 100_000, seed: int = 0) -> float:
    draws = _rng(seed).random((n, c + m))
    return float((draws.argmin(axis=1) < c).mean())


def heartbeat_senders_per_block(n_workers: int, blocks: int, target: int = 20, seed: int = 0) -> float:
    """Each worker qualifies per block when a uniform draw mod W falls under min(target, W)."""
    draws = _rng(seed).integers(0, 2**62, size=(blocks, n_workers))
    return float(((draws % n_workers) < min(target, n_workers)).sum(axis=1).mean())
