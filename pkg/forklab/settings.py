from __future__ import annotations
import logging
import os
from dataclasses import dataclass
from typing import Literal, Optional

CryptoBackend = Literal["cryptography", "hash"]


def _parse_int(value: str | None, default: Optional[int]) -> Optional[int]:
    v = (value or "").strip()
    if not v:
        return default
    try:
        return int(v, 0)
    except ValueError:
        logging.getLogger(__name__).warning("ignoring non-integer value %r", value)
        return default


def normalize_crypto_backend(raw: Optional[str]) -> CryptoBackend:
    """
    Map FORKLAB_CRYPTO spellings to a provider name.

    Anything unrecognised falls back to the real primitives.
    """
    cleaned = (raw or "").strip().lower()
    if cleaned in {"hash", "toy", "stub"}:
        return "hash"
    return "cryptography"


@dataclass(slots=True)
class Settings:
    """
    Process-wide settings read from the environment.

    Environment variables used:
    - FORKLAB_SEED (optional, overrides every scenario seed)
    - FORKLAB_CRYPTO (cryptography | hash)
    - FORKLAB_LOG_LEVEL
    - FORKLAB_OUTPUT_DIR
    - FORKLAB_CORPUS_DIR
    - FORKLAB_JOBS
    """
    seed_override: Optional[int]
    crypto_backend: CryptoBackend
    log_level: str
    output_dir: str
    corpus_dir: str
    jobs: int

    @classmethod
    def from_env(cls) -> "Settings":
        return cls(
            seed_override=_parse_int(os.getenv("FORKLAB_SEED"), None),
            crypto_backend=normalize_crypto_backend(os.getenv("FORKLAB_CRYPTO")),
            log_level=os.getenv("FORKLAB_LOG_LEVEL", "WARNING").strip().upper() or "WARNING",
            output_dir=os.getenv("FORKLAB_OUTPUT_DIR", "output/reports"),
            corpus_dir=os.getenv("FORKLAB_CORPUS_DIR", "scenarios"),
            jobs=max(1, _parse_int(os.getenv("FORKLAB_JOBS"), 1) or 1),
        )


def configure_logging(level: str) -> None:
    logging.basicConfig(
        level=getattr(logging, level, logging.WARNING),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
