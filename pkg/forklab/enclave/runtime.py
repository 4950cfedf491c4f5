from __future__ import annotations
import logging
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional, Tuple

import numpy as np

from forklab import rng as rngs
from forklab.enclave import codec
from forklab.enclave.crypto import CryptoProvider, KeyPair
from forklab.enclave.program import (
    EnclaveProgram,
    EphemeralIdentity,
    Measurement,
    ProgramFault,
    ProgramRegistry,
    Rejected,
)
from forklab.errors import (
    CounterUnsupported,
    DeadInstance,
    DecryptionError,
    DuplicateName,
    IntegrityFailure,
    UnknownMeasurement,
    UnknownPlatform,
)

logger = logging.getLogger(__name__)

REPORT_DATA_SIZE = 64


@dataclass(slots=True)
class Platform:
    platform_id: str
    master_secret: bytes = field(repr=False, metadata={"record": False})
    attributes: Dict[str, Any] = field(default_factory=dict)
    counter_enabled: bool = False
    counter: int = 0


@dataclass(frozen=True, slots=True)
class SealedBlob:
    ciphertext: bytes
    nonce: bytes
    platform_id: str
    measurement: Measurement
    seq_hint: int

    @property
    def binding(self) -> Tuple[str, bytes]:
        return (self.platform_id, self.measurement.digest)

    def to_record(self) -> Dict[str, Any]:
        return {
            "platform": self.platform_id,
            "measurement": self.measurement.hex,
            "seq_hint": self.seq_hint,
            "size": len(self.ciphertext),
        }


@dataclass(frozen=True, slots=True)
class AttestationReport:
    measurement: Measurement
    platform_attributes: Tuple[Tuple[str, Any], ...]
    report_data: bytes
    signature: bytes

    def signed_bytes(self) -> bytes:
        return codec.pack_fields(
            self.measurement.digest,
            [list(pair) for pair in self.platform_attributes],
            self.report_data,
        )


@dataclass(slots=True, eq=False)
class EnclaveInstance:
    """A launched enclave. `handle` is simulator bookkeeping only."""
    handle: int
    platform_id: str
    measurement: Measurement
    state: Any
    rng: np.random.Generator = field(repr=False, metadata={"record": False})
    ephemeral: Optional[EphemeralIdentity] = None
    alive: bool = True
    outbox: List[SealedBlob] = field(default_factory=list, repr=False)

    def to_record(self) -> Dict[str, Any]:
        return {
            "handle": self.handle,
            "platform": self.platform_id,
            "measurement": self.measurement.hex,
            "ephemeral": self.ephemeral.id.hex() if self.ephemeral else None,
        }


class EnclaveContext:
    """What a running step can reach: its own stream, keys, counter and sealing."""

    def __init__(self, runtime: "EnclaveRuntime", instance: EnclaveInstance) -> None:
        self._runtime = runtime
        self._instance = instance

    @property
    def crypto(self) -> CryptoProvider:
        return self._runtime.crypto

    @property
    def ephemeral(self) -> Optional[EphemeralIdentity]:
        return self._instance.ephemeral

    @property
    def measurement(self) -> Measurement:
        return self._instance.measurement

    @property
    def platform_id(self) -> str:
        return self._instance.platform_id

    @property
    def rng(self) -> np.random.Generator:
        return self._instance.rng

    def uniform(self) -> float:
        return self.crypto.uniform(self._instance.rng)

    def random_bytes(self, n: int) -> bytes:
        return self._instance.rng.bytes(n)

    def u64(self) -> int:
        return rngs.draw_u64(self._instance.rng)

    def integers(self, high: int) -> int:
        return int(self._instance.rng.integers(0, high))

    def signing_keypair(self) -> KeyPair:
        return self.crypto.signing_keypair(self._instance.rng)

    def agreement_keypair(self) -> KeyPair:
        return self.crypto.agreement_keypair(self._instance.rng)

    def increment_counter(self) -> int:
        return self._runtime.increment_monotonic_counter(self._instance.platform_id)

    def read_counter(self) -> int:
        return self._runtime.read_monotonic_counter(self._instance.platform_id)

    def attest(self, report_data: bytes) -> AttestationReport:
        return self._runtime.attest(self._instance, report_data)

    def verify_attestation(self, report: AttestationReport) -> bool:
        return self._runtime.verify_attestation(report)

    def trusted_time_ms(self) -> int:
        return self._runtime.trusted_time_ms()

    def seal(self, payload: bytes) -> SealedBlob:
        blob = self._runtime.seal(self._instance, payload)
        self._instance.outbox.append(blob)
        return blob


class EnclaveRuntime:
    """
    The TEE world of one simulation: program registry, platforms,
    simulated manufacturer key and every launched instance.
    """

    def __init__(self, seed: int, crypto: CryptoProvider) -> None:
        self.seed = int(seed)
        self.crypto = crypto
        self.registry = ProgramRegistry()
        self._platforms: Dict[str, Platform] = {}
        self._platform_rng = rngs.stream(self.seed, rngs.PLATFORM_STREAM)
        self._manufacturer = crypto.signing_keypair(rngs.stream(self.seed, rngs.MANUFACTURER_STREAM))
        self._instances: Dict[int, EnclaveInstance] = {}
        self._next_handle = 1
        self._seal_seq: Dict[Tuple[str, bytes], int] = {}
        self.time_source: Optional[Callable[[], int]] = None

    # --- programs and platforms ---

    def register_program(self, program: EnclaveProgram) -> Measurement:
        return self.registry.register(program)

    def program_for(self, instance: EnclaveInstance) -> EnclaveProgram:
        return self.registry.get(instance.measurement)

    def program_name(self, measurement: Measurement) -> Optional[str]:
        if not self.registry.is_registered(measurement):
            return None
        return self.registry.get(measurement).name

    def add_platform(
        self,
        platform_id: str,
        *,
        counter_enabled: bool = False,
        attributes: Optional[Dict[str, Any]] = None,
    ) -> Platform:
        if platform_id in self._platforms:
            raise DuplicateName(f"platform already exists: {platform_id}")
        attrs = {"platform": platform_id, "tee": "sim", "tcb": 1}
        attrs.update(attributes or {})
        platform = Platform(
            platform_id=platform_id,
            master_secret=self._platform_rng.bytes(32),
            attributes=attrs,
            counter_enabled=counter_enabled,
        )
        self._platforms[platform_id] = platform
        return platform

    def platform(self, platform_id: str) -> Platform:
        try:
            return self._platforms[platform_id]
        except KeyError:
            raise UnknownPlatform(f"unknown platform {platform_id}") from None

    @property
    def manufacturer_public(self) -> bytes:
        return self._manufacturer.public

    # --- lifecycle ---

    def launch(self, platform_id: str, measurement: Measurement) -> EnclaveInstance:
        program = self.registry.get(measurement)
        self.platform(platform_id)
        handle = self._next_handle
        self._next_handle += 1
        stream = rngs.stream(self.seed, rngs.HANDLE_STREAM, handle)
        ephemeral = None
        if program.ephemeral_keys:
            ephemeral = EphemeralIdentity(
                agreement=self.crypto.agreement_keypair(stream),
                signing=self.crypto.signing_keypair(stream),
            )
        instance = EnclaveInstance(
            handle=handle,
            platform_id=platform_id,
            measurement=measurement,
            state=program.init(),
            rng=stream,
            ephemeral=ephemeral,
        )
        self._instances[handle] = instance
        logger.debug("launched %s as handle %d on %s", program.name, handle, platform_id)
        return instance

    def terminate(self, instance: EnclaveInstance) -> None:
        instance.alive = False

    def instance(self, handle: int) -> EnclaveInstance:
        try:
            return self._instances[handle]
        except KeyError:
            raise DeadInstance(f"no instance with handle {handle}") from None

    def live_instances(self, platform_id: str, measurement: Measurement) -> List[EnclaveInstance]:
        return [
            i for i in self._instances.values()
            if i.alive and i.platform_id == platform_id and i.measurement == measurement
        ]

    def step(self, instance: EnclaveInstance, message: Any) -> Any:
        if not instance.alive:
            raise DeadInstance(f"handle {instance.handle} is not live")
        program = self.registry.get(instance.measurement)
        ctx = EnclaveContext(self, instance)
        try:
            new_state, output = program.step(ctx, instance.state, message)
        except ProgramFault as fault:
            return Rejected(fault.code, fault.detail)
        changed = codec.digest(new_state) != codec.digest(instance.state)
        instance.state = new_state
        if program.checkpoint and changed:
            ctx.seal(codec.encode(new_state))
        return output

    # --- sealing ---

    def _sealing_key(self, platform_id: str, measurement: Measurement) -> bytes:
        platform = self.platform(platform_id)
        return self.crypto.kdf(platform.master_secret, salt=measurement.digest, info=b"forklab-seal")

    @staticmethod
    def _binding_aad(platform_id: str, measurement: Measurement) -> bytes:
        return codec.pack_fields(platform_id, measurement.digest)

    def seal(self, instance: EnclaveInstance, payload: bytes) -> SealedBlob:
        if not instance.alive:
            raise DeadInstance(f"handle {instance.handle} is not live")
        key = self._sealing_key(instance.platform_id, instance.measurement)
        nonce = self.crypto.nonce(instance.rng)
        aad = self._binding_aad(instance.platform_id, instance.measurement)
        binding = (instance.platform_id, instance.measurement.digest)
        seq = self._seal_seq.get(binding, 0)
        self._seal_seq[binding] = seq + 1
        return SealedBlob(
            ciphertext=self.crypto.encrypt(key, payload, nonce=nonce, aad=aad),
            nonce=nonce,
            platform_id=instance.platform_id,
            measurement=instance.measurement,
            seq_hint=seq,
        )

    def unseal(self, instance: EnclaveInstance, blob: SealedBlob) -> bytes:
        # The instance's own binding decides the key; blob metadata is host-controlled.
        key = self._sealing_key(instance.platform_id, instance.measurement)
        aad = self._binding_aad(instance.platform_id, instance.measurement)
        try:
            return self.crypto.decrypt(key, blob.ciphertext, nonce=blob.nonce, aad=aad)
        except DecryptionError as e:
            raise IntegrityFailure(f"cannot unseal blob #{blob.seq_hint} on handle {instance.handle}") from e

    def restore_state(self, instance: EnclaveInstance, blob: SealedBlob) -> Any:
        instance.state = codec.decode(self.unseal(instance, blob))
        return instance.state

    # --- attestation ---

    def attest(self, instance: EnclaveInstance, report_data: bytes) -> AttestationReport:
        if len(report_data) > REPORT_DATA_SIZE:
            raise ValueError("report_data is limited to 64 bytes")
        platform = self.platform(instance.platform_id)
        attrs = tuple(sorted(platform.attributes.items()))
        unsigned = AttestationReport(
            measurement=instance.measurement,
            platform_attributes=attrs,
            report_data=report_data.ljust(REPORT_DATA_SIZE, b"\x00"),
            signature=b"",
        )
        signature = self.crypto.sign(self._manufacturer.secret, unsigned.signed_bytes())
        return AttestationReport(
            measurement=unsigned.measurement,
            platform_attributes=unsigned.platform_attributes,
            report_data=unsigned.report_data,
            signature=signature,
        )

    def verify_attestation(self, report: AttestationReport) -> bool:
        if not self.registry.is_registered(report.measurement):
            return False
        return self.crypto.verify(self._manufacturer.public, report.signed_bytes(), report.signature)

    # --- trusted time ---

    def trusted_time_ms(self) -> int:
        """Platform time service; 0 when the runtime runs without a clock."""
        return int(self.time_source()) if self.time_source is not None else 0

    # --- monotonic counters ---

    def read_monotonic_counter(self, platform_id: str) -> int:
        platform = self.platform(platform_id)
        if not platform.counter_enabled:
            raise CounterUnsupported(f"counter service disabled on {platform_id}")
        return platform.counter

    def increment_monotonic_counter(self, platform_id: str) -> int:
        platform = self.platform(platform_id)
        if not platform.counter_enabled:
            raise CounterUnsupported(f"counter service disabled on {platform_id}")
        platform.counter += 1
        return platform.counter
