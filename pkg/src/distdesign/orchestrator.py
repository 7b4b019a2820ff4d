"""Coordinator for the four-step distributed design protocol, with an
in-process (threaded) transport and a multi-process (NDJSON over pipes or TCP)
transport, plus the single-designer all-data and oracle baselines."""

from __future__ import annotations

import dataclasses
import queue
import socket
import subprocess
import sys
import threading
from dataclasses import dataclass

import numpy as np

from . import engine
from .balance import (
    BalanceReport,
    SelectionResult,
    aggregate_and_select,
    evaluate_design_block,
    pre_design_report,
)
from .config import EngineConfig
from .data import CovariateBlock, Dataset, PartitionSpec, partition_covariates
from .designs import DesignVector
from .propensity import ScoreVector
from .protocol import (
    ASSIGN_BLOCK,
    CANDIDATE_DESIGN,
    CONDITIONAL_SCORES,
    COORDINATOR,
    ERROR,
    EVAL_REPORT,
    EVAL_REQUEST,
    HELLO,
    SCORES_BROADCAST,
    SELECTION,
    SHUTDOWN,
    ProtocolError,
    ProtocolMessage,
    TransferLedger,
    decode_message,
    encode_message,
    floats_out,
    ints_out,
)
from .worker import DesignerSession, error_payload

IN_PROCESS = "in-process"
MULTI_PROCESS = "multi-process"


class DistributedRunError(RuntimeError):
    def __init__(self, step: str, designer_id, detail: str, category: str = "protocol"):
        self.step = step
        self.designer_id = designer_id
        self.category = category
        super().__init__(f"designer {designer_id} failed during step {step}: {detail}")


@dataclass
class RunResult:
    selection: SelectionResult
    reports: list                    # merged BalanceReports, one per candidate
    pre_design: BalanceReport
    ledger: TransferLedger
    designs: list                    # DesignVector per candidate
    transcript: list | None = None
    final_scores: dict | None = None  # designer_id -> ScoreVector (in-process only)
    partition_covered: bool = True
    unrouted_terms: list | None = None


# ---------------------------------------------------------------------------
# Worker channels


class _ChannelClosed(Exception):
    pass


class _InProcessChannel:
    """Worker thread running the same DesignerSession as remote workers."""

    def __init__(self):
        self.session = DesignerSession()
        self._inbox: queue.Queue = queue.Queue()
        self._outbox: queue.Queue = queue.Queue()
        self._thread = threading.Thread(target=self._run, daemon=True)
        self._thread.start()

    def _run(self):
        while True:
            msg = self._inbox.get()
            try:
                responses = self.session.handle(msg)
            except Exception as exc:
                self._outbox.put(
                    ProtocolMessage(ERROR, self.session.designer_id, error_payload(exc))
                )
                return
            for r in responses:
                self._outbox.put(r)
            if self.session.stopped:
                return

    def send(self, msg: ProtocolMessage):
        self._inbox.put(msg)

    def recv(self, timeout: float) -> ProtocolMessage:
        try:
            return self._outbox.get(timeout=timeout)
        except queue.Empty:
            raise TimeoutError("no worker response within the step timeout") from None

    def close(self):
        pass


class _StreamChannel:
    """Channel over byte streams: decoded messages arrive via a reader thread."""

    def __init__(self, reader, writer, on_close=None):
        self._writer = writer
        self._queue: queue.Queue = queue.Queue()
        self._on_close = on_close
        self._thread = threading.Thread(target=self._drain, args=(reader,), daemon=True)
        self._thread.start()

    def _drain(self, reader):
        try:
            for line in reader:
                if not line.strip():
                    continue
                try:
                    self._queue.put(decode_message(line))
                except ProtocolError as exc:
                    self._queue.put(exc)
                    return
        finally:
            self._queue.put(_ChannelClosed())

    def send(self, msg: ProtocolMessage):
        try:
            self._writer.write(encode_message(msg))
            self._writer.flush()
        except (BrokenPipeError, ValueError, OSError) as exc:
            raise _ChannelClosed(str(exc)) from None

    def recv(self, timeout: float) -> ProtocolMessage:
        try:
            item = self._queue.get(timeout=timeout)
        except queue.Empty:
            raise TimeoutError("no worker response within the step timeout") from None
        if isinstance(item, Exception):
            raise item
        return item

    def close(self):
        if self._on_close:
            self._on_close()


def _spawn_stdio_workers(m: int) -> list:
    channels = []
    for _ in range(m):
        proc = subprocess.Popen(
            [sys.executable, "-m", "distdesign", "worker", "--stdio"],
            stdin=subprocess.PIPE,
            stdout=subprocess.PIPE,
            stderr=subprocess.DEVNULL,
        )

        def closer(p=proc):
            if p.poll() is None:
                p.kill()
            p.wait()

        channels.append(_StreamChannel(proc.stdout, proc.stdin, on_close=closer))
    return channels


def _accept_tcp_workers(m: int, port: int, host: str = "127.0.0.1", timeout: float = 60.0) -> list:
    server = socket.create_server((host, port))
    server.settimeout(timeout)
    channels = []
    try:
        for _ in range(m):
            conn, _addr = server.accept()
            reader = conn.makefile("rb")
            writer = conn.makefile("wb")
            channels.append(_StreamChannel(reader, writer, on_close=conn.close))
    finally:
        server.close()
    return channels


# ---------------------------------------------------------------------------
# Coordinator


class _Coordinator:
    def __init__(self, channels, record_transcript: bool, recv_timeout: float):
        self.channels = channels
        self.ledger = TransferLedger()
        self.transcript = [] if record_transcript else None
        self.recv_timeout = recv_timeout
        self.step = "handshake"

    def send(self, designer_id: int, msg: ProtocolMessage):
        self.ledger.count_message(msg, "send")
        if self.transcript is not None:
            self.transcript.append(
                {
                    "dir": "send",
                    "designer": designer_id,
                    "step": self.step,
                    "type": msg.msg_type,
                    "line": encode_message(msg).decode("utf-8").rstrip("\n"),
                }
            )
        self.channels[designer_id - 1].send(msg)

    def recv(self, designer_id: int, expect: str) -> ProtocolMessage:
        try:
            msg = self.channels[designer_id - 1].recv(self.recv_timeout)
        except (TimeoutError, _ChannelClosed, ProtocolError) as exc:
            raise DistributedRunError(self.step, designer_id, str(exc)) from None
        self.ledger.count_message(msg, "recv")
        if self.transcript is not None:
            self.transcript.append(
                {
                    "dir": "recv",
                    "designer": designer_id,
                    "step": self.step,
                    "type": msg.msg_type,
                    "line": encode_message(msg).decode("utf-8").rstrip("\n"),
                }
            )
        if msg.msg_type == ERROR:
            raise DistributedRunError(
                self.step, designer_id, msg.payload.get("message", ""),
                category=msg.payload.get("category", "protocol"),
            )
        if msg.msg_type != expect:
            raise DistributedRunError(
                self.step, designer_id, f"expected {expect}, got {msg.msg_type}"
            )
        return msg

    def close(self):
        for ch in self.channels:
            ch.close()


def _route_terms(terms, blocks) -> tuple[dict, list]:
    """Send each transformed term to the one designer whose columns cover it;
    terms spanning blocks cannot be evaluated inside the protocol."""
    routed = {b.designer_id: [] for b in blocks}
    unrouted = []
    for term in terms or []:
        cols = set(term[1:])
        owner = next((b.designer_id for b in blocks if cols <= set(b.columns)), None)
        if owner is None:
            unrouted.append(term)
        else:
            routed[owner].append(list(term))
    return routed, unrouted


def run_distributed(
    dataset: Dataset,
    partition: PartitionSpec,
    config: EngineConfig | None = None,
    transport: str = IN_PROCESS,
    extra_terms: list | None = None,
    record_transcript: bool = False,
    recv_timeout: float = 900.0,
    tcp_port: int | None = None,
) -> RunResult:
    """Execute the four-step protocol: distribute blocks, exchange conditional
    scores, build candidate designs in parallel, evaluate every candidate on
    every block, and select the best-balanced design. Subject outcomes never
    enter: the dataset type and the message schemas carry none."""
    config = config or EngineConfig()
    blocks = partition_covariates(dataset, partition)
    m = len(blocks)
    w = dataset.treatment
    leftovers = partition.unassigned(dataset.p)

    if transport == IN_PROCESS:
        channels = [_InProcessChannel() for _ in range(m)]
    elif transport == MULTI_PROCESS:
        channels = (
            _accept_tcp_workers(m, tcp_port) if tcp_port else _spawn_stdio_workers(m)
        )
    else:
        raise ValueError(f"unknown transport {transport!r}")
    coord = _Coordinator(channels, record_transcript, recv_timeout)
    routed_terms, unrouted = _route_terms(extra_terms, blocks)

    try:
        with coord.ledger.time_step("handshake"):
            coord.step = "handshake"
            for b in blocks:
                coord.send(
                    b.designer_id,
                    ProtocolMessage(HELLO, COORDINATOR, {"designer_id": b.designer_id}),
                )
            for b in blocks:
                coord.recv(b.designer_id, HELLO)

        with coord.ledger.time_step("step1-distribute"):
            coord.step = "step1-distribute"
            for b in blocks:
                coord.send(
                    b.designer_id,
                    ProtocolMessage(
                        ASSIGN_BLOCK,
                        COORDINATOR,
                        {
                            "designer_id": b.designer_id,
                            "columns": [int(c) for c in b.columns],
                            "column_names": list(b.column_names),
                            "column_kinds": list(b.column_kinds),
                            "n": dataset.n_subjects,
                            "matrix": floats_out(b.matrix.ravel()),
                            "treatment": ints_out(w),
                            "config": config.to_payload(),
                        },
                    ),
                )

        with coord.ledger.time_step("step2-share-scores"):
            coord.step = "step2-share-scores"
            conditional: dict[int, dict] = {}
            for b in blocks:
                msg = coord.recv(b.designer_id, CONDITIONAL_SCORES)
                conditional[b.designer_id] = msg.payload
            # barrier: every conditional score is in before any broadcast
            for b in blocks:
                others = [
                    {
                        "designer_id": did,
                        "stage": pay["stage"],
                        "model_kind": pay["model_kind"],
                        "n": pay["n"],
                        "values": pay["values"],
                    }
                    for did, pay in sorted(conditional.items())
                    if did != b.designer_id
                ]
                coord.send(
                    b.designer_id,
                    ProtocolMessage(SCORES_BROADCAST, COORDINATOR, {"scores": others}),
                )

        with coord.ledger.time_step("step3-designs"):
            coord.step = "step3-designs"
            designs: list[DesignVector] = []
            design_payloads: list[dict] = []
            for b in blocks:
                for _ in config.methods:
                    msg = coord.recv(b.designer_id, CANDIDATE_DESIGN)
                    pay = msg.payload
                    dv = DesignVector(
                        assignments=np.asarray(pay["assignments"], dtype=np.int64),
                        kind=pay["kind"],
                        designer_id=pay["designer_id"],
                        method=pay["method"],
                        params=pay["params"],
                    )
                    dv.validate(w)
                    designs.append(dv)
                    design_payloads.append(
                        {
                            "designer_id": pay["designer_id"],
                            "method": pay["method"],
                            "kind": pay["kind"],
                            "n": pay["n"],
                            "assignments": pay["assignments"],
                            "params": pay["params"],
                        }
                    )

        with coord.ledger.time_step("step4-evaluate"):
            coord.step = "step4-evaluate"
            for b in blocks:
                coord.send(
                    b.designer_id,
                    ProtocolMessage(
                        EVAL_REQUEST,
                        COORDINATOR,
                        {"designs": design_payloads, "terms": routed_terms[b.designer_id]},
                    ),
                )
            partials: list[BalanceReport] = []
            for b in blocks:
                msg = coord.recv(b.designer_id, EVAL_REPORT)
                partials.extend(_partials_from_report(msg.payload, designs, config))
            if leftovers:
                partials.extend(
                    _evaluate_leftovers(dataset, leftovers, designs, w, config)
                )
            selection, merged = aggregate_and_select(partials, config.selection_criterion)

        with coord.ledger.time_step("selection"):
            coord.step = "selection"
            for b in blocks:
                coord.send(
                    b.designer_id,
                    ProtocolMessage(
                        SELECTION,
                        COORDINATOR,
                        {
                            "winner": list(selection.winner),
                            "criterion": selection.criterion,
                            "threshold": selection.threshold,
                            "table": selection.table,
                        },
                    ),
                )
            for b in blocks:
                coord.send(b.designer_id, ProtocolMessage(SHUTDOWN, COORDINATOR, {}))
    finally:
        coord.close()

    pre_design = pre_design_report(dataset, config.balance_threshold, extra_terms)
    final_scores = None
    if transport == IN_PROCESS:
        final_scores = {
            ch.session.designer_id: ch.session.state.final
            for ch in channels
            if ch.session.state is not None and ch.session.state.final is not None
        }
    return RunResult(
        selection=selection,
        reports=merged,
        pre_design=pre_design,
        ledger=coord.ledger,
        designs=designs,
        transcript=coord.transcript,
        final_scores=final_scores,
        partition_covered=not leftovers,
        unrouted_terms=unrouted or None,
    )


def _partials_from_report(payload: dict, designs, config: EngineConfig):
    by_ref: dict[tuple, dict] = {}
    for entry in payload["entries"]:
        by_ref.setdefault((entry["designer_id"], entry["method"]), {})[entry["column"]] = entry["d"]
    term_by_ref: dict[tuple, dict] = {}
    for entry in payload.get("term_entries", []):
        term_by_ref.setdefault((entry["designer_id"], entry["method"]), {})[entry["term"]] = entry["d"]
    retained = {(d.designer_id, d.method): d.n_retained for d in designs}
    return [
        BalanceReport(
            designer_id=ref[0],
            method=ref[1],
            per_covariate=cols,
            evaluated_terms=term_by_ref.get(ref, {}),
            n_retained=retained.get(ref, 0),
            threshold=config.balance_threshold,
        )
        for ref, cols in sorted(by_ref.items(), key=lambda kv: str(kv[0]))
    ]


def _leftover_block(dataset: Dataset, leftovers) -> CovariateBlock:
    idx = np.asarray(leftovers, dtype=np.intp)
    return CovariateBlock(
        designer_id=0,
        columns=tuple(leftovers),
        matrix=dataset.covariates[:, idx],
        column_names=tuple(dataset.covariate_meta[c].name for c in leftovers),
        column_kinds=tuple(dataset.covariate_meta[c].kind for c in leftovers),
    )


def _evaluate_leftovers(dataset, leftovers, designs, w, config):
    """Columns outside every block are evaluated by the coordinator itself."""
    block = _leftover_block(dataset, leftovers)
    return [
        evaluate_design_block(dv, block, w, threshold=config.balance_threshold)
        for dv in designs
    ]


# ---------------------------------------------------------------------------
# Single-designer baselines


def _single_designer_run(
    dataset: Dataset,
    config: EngineConfig,
    designer_id: str,
    scores: ScoreVector,
    state: engine.DesignerState,
    extra_terms=None,
) -> RunResult:
    designs = engine.build_designs(state, scores)
    routable = [t for t in extra_terms or []]
    partials = engine.evaluate_designs(state, designs, routable)
    partials = [dataclasses.replace(r, baseline=True) for r in partials]
    selection, merged = aggregate_and_select(partials, config.selection_criterion)
    return RunResult(
        selection=selection,
        reports=merged,
        pre_design=pre_design_report(dataset, config.balance_threshold, extra_terms),
        ledger=TransferLedger(),
        designs=designs,
        transcript=None,
        final_scores={designer_id: scores},
        partition_covered=True,
        unrouted_terms=None,
    )


def _full_state(dataset: Dataset, config: EngineConfig, designer_id: str) -> engine.DesignerState:
    return engine.DesignerState(
        designer_id=designer_id,
        columns=tuple(range(dataset.p)),
        column_names=tuple(m.name for m in dataset.covariate_meta),
        column_kinds=tuple(m.kind for m in dataset.covariate_meta),
        matrix=dataset.covariates,
        treatment=dataset.treatment,
        config=config,
    )


def run_all_data(
    dataset: Dataset, config: EngineConfig | None = None, extra_terms=None
) -> RunResult:
    """Baseline: one designer holding every covariate, same methods, with the
    pairwise-interaction budget applied to keep the expansion tractable."""
    config = config or EngineConfig()
    state = _full_state(dataset, config, "all-data")
    scores = engine.single_designer_scores(state)
    return _single_designer_run(dataset, config, "all-data", scores, state, extra_terms)


def run_oracle(
    dataset: Dataset,
    true_scores: ScoreVector | np.ndarray,
    config: EngineConfig | None = None,
    extra_terms=None,
) -> RunResult:
    """Baseline: skip estimation and design directly on supplied scores."""
    config = config or EngineConfig()
    if not isinstance(true_scores, ScoreVector):
        true_scores = ScoreVector(
            values=np.asarray(true_scores, dtype=np.float64),
            designer_id="oracle", stage="true", model_kind="true",
        )
    state = _full_state(dataset, config, "oracle")
    return _single_designer_run(dataset, config, "oracle", true_scores, state, extra_terms)


def write_transcript(transcript: list, path) -> None:
    import json

    with open(path, "w", encoding="utf-8") as fh:
        for rec in transcript:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
