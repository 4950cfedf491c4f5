from forklab.enclave.crypto import CryptoProvider, CryptographyProvider, HashCryptoProvider, KeyPair, make_provider
from forklab.enclave.program import EnclaveProgram, EphemeralIdentity, Measurement, ProgramFault, Rejected
from forklab.enclave.runtime import (
    AttestationReport,
    EnclaveContext,
    EnclaveInstance,
    EnclaveRuntime,
    Platform,
    SealedBlob,
)

__all__ = [
    "AttestationReport",
    "CryptoProvider",
    "CryptographyProvider",
    "EnclaveContext",
    "EnclaveInstance",
    "EnclaveProgram",
    "EnclaveRuntime",
    "EphemeralIdentity",
    "HashCryptoProvider",
    "KeyPair",
    "Measurement",
    "Platform",
    "ProgramFault",
    "Rejected",
    "SealedBlob",
    "make_provider",
]
