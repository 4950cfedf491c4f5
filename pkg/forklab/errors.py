from __future__ import annotations
from typing import Iterable, Optional, Sequence


class ForkLabError(Exception):
    """Base class for every error raised by the simulator."""


# --- enclave-core ---

class DuplicateName(ForkLabError):
    pass


class UnknownMeasurement(ForkLabError):
    pass


class IntegrityFailure(ForkLabError):
    """Unseal failed: wrong binding or tampered ciphertext."""


class DecryptionError(ForkLabError):
    pass


class CounterUnsupported(ForkLabError):
    pass


class DeadInstance(ForkLabError):
    pass


class AttestationFailed(ForkLabError):
    pass


# --- ledger ---

class NoConnections(ForkLabError):
    pass


class DuplicateKind(ForkLabError):
    pass


class BrokenChain(ForkLabError):
    pass


class ValidationFailed(ForkLabError):
    """A ledger-side validator refused a transaction.

    `reason` is a short machine-readable tag such as "StaleAnchor".
    """

    def __init__(self, reason: str, detail: str = "") -> None:
        self.reason = reason
        self.detail = detail
        super().__init__(f"{reason}: {detail}" if detail else reason)


# --- mitigations ---

class PolicyViolation(ForkLabError):
    pass


class StateMismatch(ForkLabError):
    def __init__(self, offending: Iterable[str]) -> None:
        self.offending = tuple(sorted(offending))
        super().__init__(f"state mismatch for clients {', '.join(self.offending)}")


class BadSignature(ForkLabError):
    pass


class NotInRange(ForkLabError):
    pass


class NoAck(ForkLabError):
    pass


# --- host / scenarios ---

class ScriptError(ForkLabError):
    pass


class ConfigError(ForkLabError):
    """Invalid scenario configuration; `path` is the dotted field path."""

    def __init__(self, path: str, message: str) -> None:
        self.path = path
        self.message = message
        super().__init__(f"{path}: {message}" if path else message)


class IncompleteCorpus(ForkLabError):
    def __init__(self, missing: Sequence[tuple[str, str]]) -> None:
        self.missing = tuple(missing)
        pairs = ", ".join(f"{p}/{a}" for p, a in self.missing)
        super().__init__(f"corpus is missing scenarios for: {pairs}")


class IoError(ForkLabError):
    def __init__(self, path: str, cause: Optional[BaseException] = None) -> None:
        self.path = path
        super().__init__(f"cannot write {path}: {cause}" if cause else f"cannot write {path}")


class UnknownPlatform(ForkLabError):
    pass
