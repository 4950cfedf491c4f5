from __future__ import annotations
from pathlib import Path

import pytest

from forklab.enclave.crypto import CryptoProvider, make_provider
from forklab.ledger.chain import PRESETS, ConsensusMode
from forklab.protocols.contracts import counter_contract
from forklab.simulation import Simulation

REPO_ROOT = Path(__file__).resolve().parents[1]
CORPUS_DIR = REPO_ROOT / "scenarios"


@pytest.fixture(autouse=True)
def _clean_env(monkeypatch):
    # a developer's .env must not leak into the suite
    for var in ("FORKLAB_SEED", "FORKLAB_CRYPTO", "FORKLAB_OUTPUT_DIR", "FORKLAB_CORPUS_DIR", "FORKLAB_JOBS"):
        monkeypatch.delenv(var, raising=False)


@pytest.fixture(params=["cryptography", "hash"])
def provider(request) -> CryptoProvider:
    return make_provider(request.param)


@pytest.fixture
def corpus_dir() -> Path:
    return CORPUS_DIR


def make_sim(seed: int = 7, consensus: ConsensusMode = PRESETS["final"], crypto: CryptoProvider | None = None) -> Simulation:
    return Simulation.create(seed, consensus, crypto or make_provider("cryptography"))


@pytest.fixture
def sim() -> Simulation:
    return make_sim()


@pytest.fixture
def counter_sim(sim: Simulation) -> Simulation:
    """One platform P1 with the counter contract registered."""
    sim.runtime.add_platform("P1")
    sim.runtime.add_platform("P2")
    sim.runtime.register_program(counter_contract())
    return sim
