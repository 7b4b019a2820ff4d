"""Designer worker: one message-driven session object shared by the in-process
and multi-process transports, plus stdio/TCP serving loops."""

from __future__ import annotations

import socket
import sys

import numpy as np

from . import engine
from .config import EngineConfig
from .designs import DesignVector
from .propensity import ScoreVector
from .protocol import (
    ASSIGN_BLOCK,
    CANDIDATE_DESIGN,
    CONDITIONAL_SCORES,
    ERROR,
    EVAL_REPORT,
    EVAL_REQUEST,
    HELLO,
    SCORES_BROADCAST,
    SELECTION,
    SHUTDOWN,
    ProtocolError,
    ProtocolMessage,
    decode_message,
    encode_message,
    floats_in,
    floats_out,
    ints_in,
    ints_out,
)


def error_payload(exc: Exception) -> dict:
    """Classify a worker-side failure for the coordinator's exit semantics."""
    category = "protocol" if isinstance(exc, ProtocolError) else "numeric"
    return {"message": str(exc), "category": category}


class DesignerSession:
    """Protocol state machine for one designer."""

    def __init__(self):
        self.designer_id = None
        self.state: engine.DesignerState | None = None
        self.designs: list[DesignVector] = []
        self.stopped = False

    def handle(self, msg: ProtocolMessage) -> list[ProtocolMessage]:
        if msg.msg_type == HELLO:
            self.designer_id = msg.payload.get("designer_id")
            return [self._reply(HELLO, {"designer_id": self.designer_id})]
        if msg.msg_type == ASSIGN_BLOCK:
            return [self._on_assign(msg.payload)]
        if msg.msg_type == SCORES_BROADCAST:
            return self._on_broadcast(msg.payload)
        if msg.msg_type == EVAL_REQUEST:
            return [self._on_eval(msg.payload)]
        if msg.msg_type == SELECTION:
            return []
        if msg.msg_type == SHUTDOWN:
            self.stopped = True
            return []
        raise ProtocolError(f"designer cannot handle {msg.msg_type}")

    def _reply(self, msg_type: str, payload: dict) -> ProtocolMessage:
        return ProtocolMessage(msg_type=msg_type, sender=self.designer_id, payload=payload)

    def _on_assign(self, payload: dict) -> ProtocolMessage:
        self.designer_id = payload["designer_id"]
        matrix = np.asarray(payload["matrix"], dtype=np.float64).reshape(
            payload["n"], len(payload["columns"])
        )
        self.state = engine.DesignerState(
            designer_id=self.designer_id,
            columns=tuple(payload["columns"]),
            column_names=tuple(payload["column_names"]),
            column_kinds=tuple(payload["column_kinds"]),
            matrix=matrix,
            treatment=ints_in(payload["treatment"]).astype(np.int8),
            config=EngineConfig.from_payload(payload["config"]),
        )
        scores = engine.conditional_scores(self.state)
        return self._reply(
            CONDITIONAL_SCORES,
            {
                "designer_id": self.designer_id,
                "stage": scores.stage,
                "model_kind": scores.model_kind,
                "n": len(scores),
                "values": floats_out(scores.values),
            },
        )

    def _on_broadcast(self, payload: dict) -> list[ProtocolMessage]:
        shared = [
            ScoreVector(
                values=floats_in(entry["values"]),
                designer_id=entry["designer_id"],
                stage=entry["stage"],
                model_kind=entry["model_kind"],
            )
            for entry in payload["scores"]
        ]
        final = engine.final_scores(self.state, shared)
        self.designs = engine.build_designs(self.state, final)
        return [
            self._reply(
                CANDIDATE_DESIGN,
                {
                    "designer_id": self.designer_id,
                    "method": dv.method,
                    "kind": dv.kind,
                    "n": int(dv.assignments.shape[0]),
                    "assignments": ints_out(dv.assignments),
                    "params": dv.params,
                    "n_retained": dv.n_retained,
                },
            )
            for dv in self.designs
        ]

    def _on_eval(self, payload: dict) -> ProtocolMessage:
        designs = [
            DesignVector(
                assignments=ints_in(entry["assignments"]),
                kind=entry["kind"],
                designer_id=entry["designer_id"],
                method=entry["method"],
                params=entry.get("params", {}),
            )
            for entry in payload["designs"]
        ]
        terms = [tuple(t) for t in payload.get("terms", [])]
        reports = engine.evaluate_designs(self.state, designs, terms)
        entries = []
        term_entries = []
        for report in reports:
            for col, d in report.per_covariate.items():
                entries.append(
                    {
                        "designer_id": report.designer_id,
                        "method": report.method,
                        "column": int(col),
                        "d": float(d),
                    }
                )
            for name, d in report.evaluated_terms.items():
                term_entries.append(
                    {
                        "designer_id": report.designer_id,
                        "method": report.method,
                        "term": name,
                        "d": float(d),
                    }
                )
        return self._reply(
            EVAL_REPORT,
            {"designer_id": self.designer_id, "entries": entries, "term_entries": term_entries},
        )


def serve_stream(reader, writer) -> int:
    """NDJSON request/response loop over binary streams; returns an exit code
    (0 clean shutdown, 4 protocol error)."""
    session = DesignerSession()
    for line in reader:
        if not line.strip():
            continue
        try:
            msg = decode_message(line)
        except ProtocolError as exc:
            writer.write(
                encode_message(ProtocolMessage(ERROR, session.designer_id, error_payload(exc)))
            )
            writer.flush()
            return 4
        try:
            responses = session.handle(msg)
        except Exception as exc:  # engine/domain failure: report and stop
            writer.write(
                encode_message(ProtocolMessage(ERROR, session.designer_id, error_payload(exc)))
            )
            writer.flush()
            return 1
        for response in responses:
            writer.write(encode_message(response))
        writer.flush()
        if session.stopped:
            return 0
    return 0


def serve_stdio() -> int:
    return serve_stream(sys.stdin.buffer, sys.stdout.buffer)


def serve_tcp(host: str, port: int) -> int:
    with socket.create_connection((host, port)) as sock:
        reader = sock.makefile("rb")
        writer = sock.makefile("wb")
        return serve_stream(reader, writer)
