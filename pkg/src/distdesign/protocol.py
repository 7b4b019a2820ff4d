"""Coordinator/worker wire protocol: newline-delimited JSON messages, payload
schemas, and the communication-cost ledger."""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field

import numpy as np

PROTOCOL_VERSION = 1

COORDINATOR = "coordinator"

HELLO = "HELLO"
ASSIGN_BLOCK = "ASSIGN_BLOCK"
CONDITIONAL_SCORES = "CONDITIONAL_SCORES"
SCORES_BROADCAST = "SCORES_BROADCAST"
CANDIDATE_DESIGN = "CANDIDATE_DESIGN"
EVAL_REQUEST = "EVAL_REQUEST"
EVAL_REPORT = "EVAL_REPORT"
SELECTION = "SELECTION"
SHUTDOWN = "SHUTDOWN"
ERROR = "ERROR"

# Allowed payload keys per message type. The schema carries covariates,
# treatments, scores, designs, and balance values only; there is no field
# anywhere capable of transporting subject outcomes.
MESSAGE_SCHEMAS: dict[str, frozenset] = {
    HELLO: frozenset({"designer_id"}),
    ASSIGN_BLOCK: frozenset(
        {"designer_id", "columns", "column_names", "column_kinds", "n", "matrix",
         "treatment", "config"}
    ),
    CONDITIONAL_SCORES: frozenset({"designer_id", "stage", "model_kind", "n", "values"}),
    SCORES_BROADCAST: frozenset({"scores"}),
    CANDIDATE_DESIGN: frozenset(
        {"designer_id", "method", "kind", "n", "assignments", "params", "n_retained"}
    ),
    EVAL_REQUEST: frozenset({"designs", "terms"}),
    EVAL_REPORT: frozenset({"designer_id", "entries", "term_entries"}),
    SELECTION: frozenset({"winner", "criterion", "threshold", "table"}),
    SHUTDOWN: frozenset(),
    ERROR: frozenset({"message", "category"}),   # category: numeric | protocol
}

_LENGTH_FIELDS = {"values": "n", "assignments": "n", "treatment": "n"}


class ProtocolError(RuntimeError):
    pass


@dataclass(frozen=True)
class ProtocolMessage:
    msg_type: str
    sender: int | str               # designer id or "coordinator"
    payload: dict
    version: int = PROTOCOL_VERSION

    def __post_init__(self):
        if self.msg_type not in MESSAGE_SCHEMAS:
            raise ProtocolError(f"unknown message type {self.msg_type!r}")
        extra = set(self.payload) - MESSAGE_SCHEMAS[self.msg_type]
        if extra:
            raise ProtocolError(f"{self.msg_type} payload has unknown fields {sorted(extra)}")


def encode_message(msg: ProtocolMessage) -> bytes:
    """One UTF-8 JSON line. Floats use Python's shortest round-trip
    representation (up to 17 significant digits), so decode(encode(m)) is
    bitwise exact for 64-bit values."""
    obj = {
        "version": msg.version,
        "type": msg.msg_type,
        "sender": msg.sender,
        "payload": msg.payload,
    }
    return (json.dumps(obj, separators=(",", ":"), allow_nan=False) + "\n").encode("utf-8")


def decode_message(line: bytes | str) -> ProtocolMessage:
    if isinstance(line, bytes):
        line = line.decode("utf-8")
    line = line.strip()
    if not line:
        raise ProtocolError("empty or truncated message line")
    try:
        obj = json.loads(line)
    except json.JSONDecodeError as exc:
        raise ProtocolError(f"undecodable message line: {exc}") from None
    if not isinstance(obj, dict):
        raise ProtocolError("message must be a JSON object")
    version = obj.get("version")
    if version != PROTOCOL_VERSION:
        raise ProtocolError(f"protocol version mismatch: got {version}, expected {PROTOCOL_VERSION}")
    msg_type = obj.get("type")
    if msg_type not in MESSAGE_SCHEMAS:
        raise ProtocolError(f"unknown message type {msg_type!r}")
    payload = obj.get("payload", {})
    if not isinstance(payload, dict):
        raise ProtocolError("payload must be a JSON object")
    msg = ProtocolMessage(msg_type=msg_type, sender=obj.get("sender"), payload=payload)
    _validate_lengths(msg)
    return msg


def _validate_lengths(msg: ProtocolMessage) -> None:
    payload = msg.payload
    n = payload.get("n")
    for key, nfield in _LENGTH_FIELDS.items():
        if key in payload and nfield in payload:
            arr = payload[key]
            if isinstance(arr, list) and len(arr) != payload[nfield]:
                raise ProtocolError(
                    f"{msg.msg_type}.{key} length {len(arr)} != declared {payload[nfield]}"
                )
    if "matrix" in payload and n is not None and "columns" in payload:
        want = n * len(payload["columns"])
        if isinstance(payload["matrix"], list) and len(payload["matrix"]) != want:
            raise ProtocolError(
                f"{msg.msg_type}.matrix length {len(payload['matrix'])} != {want}"
            )
    for entry in payload.get("scores", []):
        if isinstance(entry, dict) and len(entry.get("values", [])) != entry.get("n"):
            raise ProtocolError("broadcast score vector length mismatch")
    for entry in payload.get("designs", []):
        if isinstance(entry, dict) and len(entry.get("assignments", [])) != entry.get("n"):
            raise ProtocolError("design vector length mismatch")


@dataclass
class TransferLedger:
    """Communication-cost accounting.

    score_values counts every conditional-score value logically delivered to a
    peer designer (each of the m designers receives the other m-1 vectors).
    design_entries counts each candidate design once, when its builder shares
    it with the pool; the evaluation fan-out relays the same entries and is
    not double-counted. balance_entries counts the per-covariate values in
    evaluation reports; transformed-term values are tallied separately."""

    score_values: int = 0
    design_entries: int = 0
    balance_entries: int = 0
    term_entries: int = 0
    messages: int = 0
    step_seconds: dict = field(default_factory=dict)

    def count_message(self, msg: ProtocolMessage, direction: str) -> None:
        self.messages += 1
        if msg.msg_type == SCORES_BROADCAST and direction == "send":
            for entry in msg.payload["scores"]:
                self.score_values += entry["n"]
        elif msg.msg_type == CANDIDATE_DESIGN and direction == "recv":
            self.design_entries += msg.payload["n"]
        elif msg.msg_type == EVAL_REPORT and direction == "recv":
            self.balance_entries += len(msg.payload["entries"])
            self.term_entries += len(msg.payload.get("term_entries", []))

    def time_step(self, name: str):
        return _StepTimer(self, name)


class _StepTimer:
    def __init__(self, ledger: TransferLedger, name: str):
        self.ledger = ledger
        self.name = name

    def __enter__(self):
        self.t0 = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.ledger.step_seconds[self.name] = (
            self.ledger.step_seconds.get(self.name, 0.0) + time.perf_counter() - self.t0
        )
        return False


def expected_counts(n: int, m: int, p: int, k_methods: int) -> dict:
    return {
        "score_values": m * (m - 1) * n,
        "design_entries": m * k_methods * n,
        "balance_entries": p * m * k_methods,
    }


def ledger_check(ledger: TransferLedger, n: int, m: int, p: int, k_methods: int) -> bool:
    """Exact transfer accounting for a completed distributed run."""
    want = expected_counts(n, m, p, k_methods)
    return (
        ledger.score_values == want["score_values"]
        and ledger.design_entries == want["design_entries"]
        and ledger.balance_entries == want["balance_entries"]
    )


# ---------------------------------------------------------------------------
# ndarray <-> JSON payload helpers


def floats_out(a: np.ndarray) -> list:
    return [float(v) for v in a]


def ints_out(a: np.ndarray) -> list:
    return [int(v) for v in a]


def floats_in(values: list) -> np.ndarray:
    return np.asarray(values, dtype=np.float64)


def ints_in(values: list) -> np.ndarray:
    return np.asarray(values, dtype=np.int64)
