"""Envelopes, transcripts and payload codecs for the in-process transport.

Wire format of one envelope (one NDJSON line in a transcript file)::

    {"seq": 0, "from": "client:0", "to": "server:A", "kind": "pk_broadcast", "payload": "..."}

Payload encodings by kind:

* ``pk_broadcast``, ``enc_*``, ``count_result``: big-endian hex integers,
  comma separated when the message carries several values
* ``noise_matrix``, ``masked_matrix``, ``noise_sum``, ``score_vector``:
  base64 of two little-endian uint32 (rows, cols) followed by row-major
  little-endian float64 values
* ``outlier_policy``: base64 of a compact JSON object
"""
from __future__ import annotations

import base64
import json
import struct
from collections import deque
from dataclasses import dataclass, field

import numpy as np

SERVER_P = "server:P"
SERVER_A = "server:A"

MESSAGE_KINDS = frozenset({
    "pk_broadcast",
    "enc_xi",
    "enc_Xi_sum",
    "enc_count",
    "count_result",
    "enc_offset_start",
    "noise_matrix",
    "masked_matrix",
    "noise_sum",
    "score_vector",
    "outlier_policy",
})

INT_KINDS = frozenset({"pk_broadcast", "enc_xi", "enc_Xi_sum", "enc_count",
                       "count_result", "enc_offset_start"})
MATRIX_KINDS = frozenset({"noise_matrix", "masked_matrix", "noise_sum", "score_vector"})


class ProtocolAbort(RuntimeError):
    """A protocol round could not complete; ``round`` names the step."""

    def __init__(self, round_name: str, reason: str):
        super().__init__(f"[{round_name}] {reason}")
        self.round = round_name
        self.reason = reason


class TranscriptFormatError(ValueError):
    pass


def client_id(i: int) -> str:
    return f"client:{i}"


def is_client(party: str) -> bool:
    return party.startswith("client:")


def is_server(party: str) -> bool:
    return party in (SERVER_P, SERVER_A)


# -- payload codecs ---------------------------------------------------------

def encode_ints(values) -> str:
    return ",".join(format(int(v), "x") for v in values)


def decode_ints(payload: str) -> list[int]:
    if payload == "":
        return []
    return [int(tok, 16) for tok in payload.split(",")]


_HEADER = struct.Struct("<II")


def encode_matrix(a) -> str:
    a = np.ascontiguousarray(a, dtype="<f8")
    if a.ndim == 1:
        a = a.reshape(-1, 1)
    rows, cols = a.shape
    return base64.b64encode(_HEADER.pack(rows, cols) + a.tobytes()).decode("ascii")


def decode_matrix(payload: str) -> np.ndarray:
    raw = base64.b64decode(payload.encode("ascii"), validate=True)
    if len(raw) < _HEADER.size:
        raise ValueError("matrix payload shorter than its header")
    rows, cols = _HEADER.unpack_from(raw)
    body = raw[_HEADER.size:]
    if len(body) != rows * cols * 8:
        raise ValueError(f"matrix payload holds {len(body)} bytes, header says {rows}x{cols}")
    return np.frombuffer(body, dtype="<f8").reshape(rows, cols).astype(np.float64)


def encode_json(obj) -> str:
    text = json.dumps(obj, sort_keys=True, separators=(",", ":"))
    return base64.b64encode(text.encode()).decode("ascii")


def decode_json(payload: str):
    return json.loads(base64.b64decode(payload.encode("ascii"), validate=True))


# -- envelopes and transcripts ---------------------------------------------

@dataclass(frozen=True)
class Envelope:
    seq: int
    sender: str
    recipient: str
    kind: str
    payload: str

    def to_json(self) -> str:
        return json.dumps({"seq": self.seq, "from": self.sender, "to": self.recipient,
                           "kind": self.kind, "payload": self.payload},
                          separators=(",", ":"))

    @classmethod
    def from_dict(cls, obj) -> "Envelope":
        try:
            env = cls(seq=obj["seq"], sender=obj["from"], recipient=obj["to"],
                      kind=obj["kind"], payload=obj["payload"])
        except (KeyError, TypeError) as exc:
            raise TranscriptFormatError(f"malformed envelope: {exc}") from None
        if not isinstance(env.seq, int) or not all(
                isinstance(v, str) for v in (env.sender, env.recipient, env.kind, env.payload)):
            raise TranscriptFormatError("envelope fields have the wrong types")
        return env


@dataclass
class Transcript:
    entries: list = field(default_factory=list)

    def __iter__(self):
        return iter(self.entries)

    def __len__(self):
        return len(self.entries)

    def __eq__(self, other):
        return isinstance(other, Transcript) and self.entries == other.entries

    def to_ndjson(self) -> str:
        return "".join(env.to_json() + "\n" for env in self.entries)

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(self.to_ndjson())

    @classmethod
    def from_ndjson(cls, text: str) -> "Transcript":
        entries = []
        for lineno, line in enumerate(text.splitlines(), 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise TranscriptFormatError(f"line {lineno}: {exc}") from None
            entries.append(Envelope.from_dict(obj))
        if not entries:
            raise TranscriptFormatError("transcript is empty")
        for prev, cur in zip(entries, entries[1:]):
            if cur.seq <= prev.seq:
                raise TranscriptFormatError(f"sequence numbers not increasing at seq {cur.seq}")
        return cls(entries)

    @classmethod
    def load(cls, path) -> "Transcript":
        with open(path, encoding="utf-8") as fh:
            return cls.from_ndjson(fh.read())

    def between(self, sender=None, recipient=None, kind=None):
        return [e for e in self.entries
                if (sender is None or e.sender == sender)
                and (recipient is None or e.recipient == recipient)
                and (kind is None or e.kind == kind)]


class Network:
    """Synchronous in-process transport; every send is logged in order."""

    def __init__(self):
        self.transcript = Transcript()
        self._inbox: dict[str, deque] = {}

    def send(self, sender: str, recipient: str, kind: str, payload: str) -> Envelope:
        if kind not in MESSAGE_KINDS:
            raise ValueError(f"unknown message kind {kind!r}")
        env = Envelope(len(self.transcript.entries), sender, recipient, kind, payload)
        self.transcript.entries.append(env)
        self._inbox.setdefault(recipient, deque()).append(env)
        return env

    def receive(self, recipient: str, kind: str, sender: str | None = None,
                round_name: str = "receive") -> Envelope:
        """Pop the oldest matching envelope or abort the round."""
        box = self._inbox.get(recipient, deque())
        for env in box:
            if env.kind == kind and (sender is None or env.sender == sender):
                box.remove(env)
                return env
        src = f" from {sender}" if sender else ""
        raise ProtocolAbort(round_name, f"{recipient} is missing a {kind!r} message{src}")

    def pending(self, recipient: str) -> list:
        return list(self._inbox.get(recipient, ()))

