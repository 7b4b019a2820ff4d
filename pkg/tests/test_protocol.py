import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from distdesign.protocol import (
    CANDIDATE_DESIGN,
    CONDITIONAL_SCORES,
    MESSAGE_SCHEMAS,
    PROTOCOL_VERSION,
    ProtocolError,
    ProtocolMessage,
    TransferLedger,
    decode_message,
    encode_message,
    expected_counts,
    ledger_check,
)


def test_scores_roundtrip_bitwise():
    values = [0.1, 1 / 3, math.pi * 1e-8, 0.9999999999999999]
    msg = ProtocolMessage(
        CONDITIONAL_SCORES, 2,
        {"designer_id": 2, "stage": "conditional", "model_kind": "lasso-logistic",
         "n": 4, "values": values},
    )
    back = decode_message(encode_message(msg))
    assert back == msg
    assert all(a == b for a, b in zip(back.payload["values"], values))


def test_truncated_line_rejected():
    line = encode_message(ProtocolMessage("SHUTDOWN", "coordinator", {}))
    with pytest.raises(ProtocolError):
        decode_message(line[: len(line) // 2])
    with pytest.raises(ProtocolError):
        decode_message(b"")


def test_unknown_type_rejected():
    with pytest.raises(ProtocolError, match="unknown message type"):
        decode_message(b'{"version": 1, "type": "NOPE", "sender": 1, "payload": {}}')


def test_version_mismatch_rejected():
    with pytest.raises(ProtocolError, match="version"):
        decode_message(b'{"version": 99, "type": "SHUTDOWN", "sender": 1, "payload": {}}')


def test_length_field_mismatch_rejected():
    with pytest.raises(ProtocolError, match="length"):
        decode_message(
            b'{"version": 1, "type": "CONDITIONAL_SCORES", "sender": 1, '
            b'"payload": {"designer_id": 1, "stage": "conditional", '
            b'"model_kind": "ols", "n": 3, "values": [0.1, 0.2]}}'
        )


def test_unknown_payload_field_rejected():
    with pytest.raises(ProtocolError, match="unknown fields"):
        ProtocolMessage("SHUTDOWN", 1, {"outcome": [1, 2]})


def test_schema_carries_no_outcome_field():
    """No message type has any payload field able to transport outcomes."""
    outcome_words = {"outcome", "outcomes", "y", "y0", "y1", "response", "effect"}
    for msg_type, fields in MESSAGE_SCHEMAS.items():
        assert not outcome_words.intersection(fields), msg_type


_json_scalars = st.one_of(
    st.integers(min_value=-(2**40), max_value=2**40),
    st.floats(allow_nan=False, allow_infinity=False),
    st.text(max_size=12),
    st.booleans(),
    st.none(),
)


@given(
    msg_type=st.sampled_from(["SELECTION", "EVAL_REPORT", "HELLO", "ERROR"]),
    sender=st.one_of(st.integers(min_value=1, max_value=99), st.just("coordinator")),
    data=st.dictionaries(st.text(min_size=1, max_size=8), _json_scalars, max_size=4),
)
@settings(max_examples=300, deadline=None)
def test_fuzzed_roundtrip_identity(msg_type, sender, data):
    allowed = sorted(MESSAGE_SCHEMAS[msg_type])
    payload = {k: v for k, v in zip(allowed, data.values())}
    msg = ProtocolMessage(msg_type, sender, payload)
    assert decode_message(encode_message(msg)) == msg


@given(st.lists(st.floats(allow_nan=False, allow_infinity=False), max_size=40))
@settings(max_examples=200, deadline=None)
def test_float_vectors_roundtrip_exact(values):
    msg = ProtocolMessage(
        CONDITIONAL_SCORES, 1,
        {"designer_id": 1, "stage": "final", "model_kind": "ols",
         "n": len(values), "values": values},
    )
    back = decode_message(encode_message(msg))
    assert back.payload["values"] == values


def test_ledger_expected_counts_formulas():
    want = expected_counts(10, 2, 5, 1)
    assert want["score_values"] == 20
    assert want["design_entries"] == 20
    assert want["balance_entries"] == 10
    want = expected_counts(10000, 6, 120, 4)
    assert want["score_values"] == 300000
    assert want["design_entries"] == 240000
    assert want["balance_entries"] == 2880


def test_ledger_check_counts_messages():
    ledger = TransferLedger()
    n, m, k = 10, 2, 1
    for recipient in range(1, m + 1):
        others = [
            {"designer_id": d, "stage": "conditional", "model_kind": "ols",
             "n": n, "values": [0.5] * n}
            for d in range(1, m + 1) if d != recipient
        ]
        ledger.count_message(
            ProtocolMessage("SCORES_BROADCAST", "coordinator", {"scores": others}), "send"
        )
    for d in range(1, m + 1):
        ledger.count_message(
            ProtocolMessage(
                CANDIDATE_DESIGN, d,
                {"designer_id": d, "method": "nn", "kind": "matched-pairs",
                 "n": n, "assignments": [0] * n, "params": {}, "n_retained": 0},
            ),
            "recv",
        )
        entries = [{"designer_id": e, "method": "nn", "column": c, "d": 0.1}
                   for e in range(1, m + 1) for c in range(5)]
        # each designer evaluates every candidate over its own 5 columns
        ledger.count_message(
            ProtocolMessage("EVAL_REPORT", d,
                            {"designer_id": d, "entries": entries, "term_entries": []}),
            "recv",
        )
    assert ledger_check(ledger, n, m, 10, k)
    assert not ledger_check(ledger, n + 1, m, 10, k)


def test_version_constant_embedded():
    line = encode_message(ProtocolMessage("SHUTDOWN", "coordinator", {}))
    assert f'"version":{PROTOCOL_VERSION}'.encode() in line
