"""forklab: deterministic simulator for enclave forking attacks and their mitigations."""

__version__ = "0.1.0"
