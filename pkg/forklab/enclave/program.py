from __future__ import annotations
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Any, Callable, Dict, Mapping, Optional, Tuple

from forklab.enclave import codec
from forklab.enclave.crypto import KeyPair
from forklab.errors import DuplicateName, ForkLabError, UnknownMeasurement

if TYPE_CHECKING:
    from forklab.enclave.runtime import EnclaveContext

State = Any
StepFn = Callable[["EnclaveContext", State, Any], Tuple[State, Any]]


@dataclass(frozen=True, slots=True)
class Measurement:
    digest: bytes

    @property
    def hex(self) -> str:
        return self.digest.hex()

    def short(self) -> str:
        return self.digest.hex()[:12]

    def to_record(self) -> str:
        return self.digest.hex()


@dataclass(frozen=True, slots=True)
class EphemeralIdentity:
    """Launch-time keys; regenerated on every launch and never sealed."""
    agreement: KeyPair
    signing: KeyPair

    @property
    def id(self) -> bytes:
        return self.signing.public

    def to_record(self) -> Dict[str, str]:
        return {"agreement": self.agreement.public.hex(), "signing": self.signing.public.hex()}


class ProgramFault(ForkLabError):
    """Raised inside a step to reject an input; surfaces as a Rejected output."""

    def __init__(self, code: str, detail: str = "") -> None:
        self.code = code
        self.detail = detail
        super().__init__(f"{code}: {detail}" if detail else code)


@dataclass(frozen=True, slots=True)
class Rejected:
    code: str
    detail: str = ""


@dataclass(frozen=True, eq=False)
class EnclaveProgram:
    """
    An enclave binary: transition function plus the metadata that feeds
    its measurement.

    Args:
        name: unique program name; part of the measurement
        init: () -> initial state (plain codec-encodable values)
        step: (ctx, state, input) -> (new state, output)
        version, params: the rest of the measured descriptor
        deterministic: step is a pure function of (state, input)
        uses_randomness: step draws from the per-instance stream
        ephemeral_keys: generate an EphemeralIdentity at every launch
        persistent_fields: mutable state fields the program persists
        checkpoint: seal the state after every state-changing step
        policy: mitigation tag set by wrappers ("" or "stateless")
    """
    name: str
    init: Callable[[], State]
    step: StepFn
    version: str = "1"
    params: Mapping[str, Any] = field(default_factory=dict)
    deterministic: bool = True
    uses_randomness: bool = False
    ephemeral_keys: bool = False
    persistent_fields: Tuple[str, ...] = ()
    checkpoint: bool = False
    policy: str = ""

    def descriptor(self) -> Dict[str, Any]:
        return {
            "name": self.name,
            "version": self.version,
            "params": codec.digest(dict(self.params)),
            "policy": self.policy,
        }


def _body(fn: Any, depth: int = 0) -> Tuple[Any, ...]:
    """Identity of a callable's code, following closed-over callables."""
    code = getattr(fn, "__code__", None)
    if code is None or depth > 4:
        return (fn,)
    inner = []
    for cell in fn.__closure__ or ():
        try:
            value = cell.cell_contents
        except ValueError:
            continue
        if callable(value) and value is not fn:
            inner.append(_body(value, depth + 1))
    return (code, tuple(inner))


def same_body(a: EnclaveProgram, b: EnclaveProgram) -> bool:
    return _body(a.init) == _body(b.init) and _body(a.step) == _body(b.step)


class ProgramRegistry:
    """Injective name -> program registry; measurements are descriptor hashes."""

    def __init__(self) -> None:
        self._by_name: Dict[str, Tuple[Measurement, EnclaveProgram]] = {}
        self._by_measurement: Dict[bytes, EnclaveProgram] = {}

    def register(self, program: EnclaveProgram) -> Measurement:
        measurement = Measurement(codec.digest(program.descriptor()))
        existing = self._by_name.get(program.name)
        if existing is not None:
            if existing[0] == measurement and same_body(existing[1], program):
                return measurement
            raise DuplicateName(f"program name already registered: {program.name}")
        self._by_name[program.name] = (measurement, program)
        self._by_measurement[measurement.digest] = program
        return measurement

    def get(self, measurement: Measurement) -> EnclaveProgram:
        program = self._by_measurement.get(measurement.digest)
        if program is None:
            raise UnknownMeasurement(f"unregistered measurement {measurement.short()}")
        return program

    def is_registered(self, measurement: Measurement) -> bool:
        return measurement.digest in self._by_measurement

    def measurement_of(self, name: str) -> Optional[Measurement]:
        entry = self._by_name.get(name)
        return entry[0] if entry else None
