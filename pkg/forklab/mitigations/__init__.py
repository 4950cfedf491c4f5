from forklab.mitigations.ephemeral import (
    REGISTER_KIND,
    EphemeralIdPolicy,
    EphemeralIdRegistry,
    Envelope,
    Registration,
    ephemeral_register,
    make_registration,
    open_envelope,
    seal_to,
)
from forklab.mitigations.fixed_clients import (
    FixedClientPolicy,
    RoundOutput,
    SignedInput,
    check_round,
    fixed_client_round,
    sign_input,
    state_digest,
)
from forklab.mitigations.serialization import (
    COMMIT_KIND,
    HeartbeatAck,
    HeightAndHash,
    PlainHeight,
    Range,
    ReplayRecovery,
    StateCommit,
    StateCommitValidator,
    StateOnLedger,
    TimestampedResponse,
    Timestamping,
    Verdict,
    client_verify,
    replay_recover,
    state_commit,
    timestamp_response,
)
from forklab.mitigations.stateless import StatelessPolicy, is_stateless, stateless_wrap

__all__ = [
    "COMMIT_KIND",
    "REGISTER_KIND",
    "EphemeralIdPolicy",
    "EphemeralIdRegistry",
    "Envelope",
    "FixedClientPolicy",
    "HeartbeatAck",
    "HeightAndHash",
    "PlainHeight",
    "Range",
    "Registration",
    "ReplayRecovery",
    "RoundOutput",
    "SignedInput",
    "StateCommit",
    "StateCommitValidator",
    "StateOnLedger",
    "StatelessPolicy",
    "TimestampedResponse",
    "Timestamping",
    "Verdict",
    "check_round",
    "client_verify",
    "ephemeral_register",
    "fixed_client_round",
    "is_stateless",
    "make_registration",
    "open_envelope",
    "replay_recover",
    "seal_to",
    "sign_input",
    "state_commit",
    "state_digest",
    "stateless_wrap",
    "timestamp_response",
]
