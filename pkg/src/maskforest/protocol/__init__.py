"""Two-server masked outlier-detection protocol over an in-process transport."""
from .audit import AuditReport, audit_transcript
from .messages import Envelope, Network, ProtocolAbort, Transcript, TranscriptFormatError
from .parties import ClientState, ServerAState, ServerPState
from .rounds import (
    OutlierPolicy,
    RoundConfig,
    RoundResult,
    agree_seed,
    aggregate_and_denoise,
    assign_indices,
    client_mask_and_send,
    detect_and_report,
    distribute_keys,
    make_parties,
    prepare_matrices,
    run_full_round,
    secure_total_count,
)

__all__ = [
    "AuditReport", "ClientState", "Envelope", "Network", "OutlierPolicy", "ProtocolAbort",
    "RoundConfig", "RoundResult", "ServerAState", "ServerPState", "Transcript",
    "TranscriptFormatError", "agree_seed", "aggregate_and_denoise", "assign_indices",
    "audit_transcript", "client_mask_and_send", "detect_and_report", "distribute_keys",
    "make_parties", "prepare_matrices", "run_full_round", "secure_total_count",
]
