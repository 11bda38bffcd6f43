"""Structural privacy audit of a round transcript.

Four checks, each reported separately:

* ``aux_server_inputs`` -- A only ever receives public keys, ciphertexts,
  noise matrices and the public total count
* ``principal_server_inputs`` -- P only receives public keys, full-size
  masked matrices, the aggregated noise and the public total count
* ``no_client_to_client`` -- clients never talk to each other
* ``no_local_counts_to_servers`` -- the only plaintext integer a server sees
  is the single agreed total
"""
from __future__ import annotations

from dataclasses import dataclass, field

from .messages import (
    INT_KINDS,
    MATRIX_KINDS,
    MESSAGE_KINDS,
    SERVER_A,
    SERVER_P,
    Transcript,
    decode_ints,
    decode_matrix,
    is_client,
    is_server,
)

CHECK_NAMES = (
    "aux_server_inputs",
    "principal_server_inputs",
    "no_client_to_client",
    "no_local_counts_to_servers",
)

ALLOWED_TO_A = frozenset({"pk_broadcast", "enc_xi", "enc_count", "noise_matrix", "count_result"})
ALLOWED_TO_P = frozenset({"pk_broadcast", "masked_matrix", "noise_sum", "count_result"})
_PLAINTEXT_INT_KINDS = frozenset({"count_result"})


@dataclass
class AuditReport:
    findings: dict = field(default_factory=lambda: {name: [] for name in CHECK_NAMES})

    def passed(self, check: str) -> bool:
        return not self.findings[check]

    @property
    def ok(self) -> bool:
        return all(self.passed(name) for name in CHECK_NAMES)

    @property
    def failed_checks(self) -> list[str]:
        return [name for name in CHECK_NAMES if not self.passed(name)]

    def lines(self) -> list[str]:
        out = []
        for name in CHECK_NAMES:
            status = "PASS" if self.passed(name) else "FAIL"
            out.append(f"{status}  {name}")
            out.extend(f"      - {msg}" for msg in self.findings[name])
        return out

    def __str__(self):
        return "\n".join(self.lines())


def _payload_problem(env) -> str | None:
    try:
        if env.kind in INT_KINDS:
            decode_ints(env.payload)
        elif env.kind in MATRIX_KINDS:
            decode_matrix(env.payload)
    except ValueError as exc:
        return f"seq {env.seq}: undecodable {env.kind} payload ({exc})"
    return None


def audit_transcript(transcript: Transcript) -> AuditReport:
    report = AuditReport()
    f = report.findings

    totals = set()
    for env in transcript:
        if env.kind in _PLAINTEXT_INT_KINDS and is_server(env.recipient):
            try:
                totals.update(decode_ints(env.payload))
            except ValueError:
                f["no_local_counts_to_servers"].append(f"seq {env.seq}: undecodable count payload")
    expected_rows = next(iter(totals)) if len(totals) == 1 else None

    shapes_at_p = set()
    noise_rows = set()
    for env in transcript:
        tag = f"seq {env.seq}: {env.sender} -> {env.recipient} {env.kind!r}"
        if env.kind not in MESSAGE_KINDS:
            check = {SERVER_A: "aux_server_inputs", SERVER_P: "principal_server_inputs"}.get(env.recipient)
            if check:
                f[check].append(f"{tag} is outside the protocol alphabet")
        if is_client(env.sender) and is_client(env.recipient):
            f["no_client_to_client"].append(f"{tag}: direct client-to-client message")

        if env.recipient == SERVER_A:
            if env.kind in MESSAGE_KINDS and env.kind not in ALLOWED_TO_A:
                f["aux_server_inputs"].append(f"{tag}: kind not permitted at the auxiliary server")
            problem = _payload_problem(env)
            if problem:
                f["aux_server_inputs"].append(problem)
        elif env.recipient == SERVER_P:
            if env.kind in MESSAGE_KINDS and env.kind not in ALLOWED_TO_P:
                f["principal_server_inputs"].append(f"{tag}: kind not permitted at the principal server")
            problem = _payload_problem(env)
            if problem:
                f["principal_server_inputs"].append(problem)
            elif env.kind in ("masked_matrix", "noise_sum"):
                shape = decode_matrix(env.payload).shape
                shapes_at_p.add(shape)
                if env.kind == "noise_sum":
                    noise_rows.add(shape[0])
                if expected_rows is not None and shape[0] != expected_rows:
                    f["principal_server_inputs"].append(
                        f"{tag}: matrix has {shape[0]} rows, not the full {expected_rows}"
                        " (partial or unmasked data)")

    if len(shapes_at_p) > 1:
        f["principal_server_inputs"].append(
            f"matrices at the principal server disagree in shape: {sorted(shapes_at_p)}")
    if len(totals) > 1:
        f["no_local_counts_to_servers"].append(
            f"servers received {len(totals)} distinct plaintext counts; only the total is allowed")
    if expected_rows is not None and noise_rows and noise_rows != {expected_rows}:
        f["no_local_counts_to_servers"].append(
            "plaintext count delivered to a server is not the pooled row count")
    return report
