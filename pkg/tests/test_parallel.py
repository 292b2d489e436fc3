import json
import multiprocessing as mp
import threading

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ddelm.messages import Kind, Message, ProtocolError, Stage, decode, encode
from ddelm.parallel import ProcessExecutor, WorkerError, solve_case, worker_main

from .conftest import toy_case

_arrays = st.lists(st.floats(allow_nan=False, width=64), max_size=20).map(np.array)


@given(
    kind=st.sampled_from([Kind.SCATTER, Kind.CONTRIB, Kind.COEFFS, Kind.READY]),
    stage=st.sampled_from(list(Stage)),
    iteration=st.integers(0, 2**31 - 1),
    blocks=st.lists(st.tuples(st.integers(-1, 1000), _arrays), max_size=4),
)
@settings(max_examples=50, deadline=None)
def test_numeric_message_roundtrip(kind, stage, iteration, blocks):
    out = decode(encode(Message(kind, stage, iteration, blocks)))
    assert (out.kind, out.stage, out.iteration) == (kind, stage, iteration)
    assert len(out.blocks) == len(blocks)
    for (s0, a0), (s1, a1) in zip(blocks, out.blocks):
        assert s0 == s1
        np.testing.assert_array_equal(a0, a1)


@given(text=st.text(max_size=200))
@settings(max_examples=30, deadline=None)
def test_text_message_roundtrip(text):
    out = decode(encode(Message(Kind.ERROR, blocks=[(-1, text)])))
    assert out.text == text


def test_wire_layout_is_little_endian():
    raw = encode(Message(Kind.CONTRIB, Stage.FLUX, 7, [(3, np.array([1.0]))]))
    assert raw[:4] == b"DDLM"
    assert raw[4] == Kind.CONTRIB and raw[5] == Stage.FLUX
    assert int.from_bytes(raw[8:12], "little") == 7
    assert raw[-8:] == np.array([1.0], "<f8").tobytes()


def test_malformed_messages():
    good = encode(Message(Kind.SCATTER, Stage.TRACE, 1, [(0, np.arange(3.0))]))
    with pytest.raises(ProtocolError):
        decode(b"XXXX" + good[4:])
    with pytest.raises(ProtocolError):
        decode(good[:5])
    with pytest.raises(ProtocolError):
        decode(good[:-4])
    with pytest.raises(ProtocolError):
        decode(good + b"\0")


def _serve(case_json, sids, requests):
    parent, child = mp.Pipe()
    t = threading.Thread(target=worker_main, args=(child,))
    t.start()
    parent.send_bytes(encode(Message(Kind.CONFIG, blocks=[(-1, json.dumps({"case": case_json, "sids": sids}))])))
    replies = [decode(parent.recv_bytes())]
    for msg in requests:
        parent.send_bytes(encode(msg))
        replies.append(decode(parent.recv_bytes()))
    if replies[-1].kind != Kind.ERROR:
        parent.send_bytes(encode(Message(Kind.DONE)))
    t.join(timeout=30)
    assert not t.is_alive()
    return replies


def test_worker_reports_errors():
    case = toy_case()
    replies = _serve(case.to_json(), [0, 1], [Message(Kind.SCATTER, Stage.NONE, 0)])
    assert replies[0].kind == Kind.READY and [s for s, _ in replies[0].blocks] == [0, 1]
    assert replies[1].kind == Kind.ERROR and "ProtocolError" in replies[1].text


def test_worker_echoes_stage_and_iteration():
    case = toy_case()
    replies = _serve(case.to_json(), [1], [Message(Kind.SCATTER, Stage.RHS, 5)])
    r = replies[1]
    assert (r.kind, r.stage, r.iteration) == (Kind.CONTRIB, Stage.RHS, 5)
    assert r.blocks[0][0] == 1


@pytest.mark.parametrize("workers", [2, 3])
def test_process_executor_matches_serial(workers):
    case = toy_case(grid=(2, 2), n=256, k=5)
    _, _, a, da = solve_case(case, workers=0)
    _, _, b, db = solve_case(case, workers=workers)
    np.testing.assert_array_equal(a.u_gamma, b.u_gamma)
    for ca, cb in zip(a.coeffs, b.coeffs):
        np.testing.assert_array_equal(ca, cb)
    assert da.cg_iterations == db.cg_iterations
    m = db.messages
    assert m["workers"] == workers
    assert m["scatter"] == m["contrib"] == 2 * workers * db.matvecs
    assert m["config"] == m["ready"] == m["solve"] == m["coeffs"] == workers
    assert [d["sid"] for d in db.subdomains] == [0, 1, 2, 3]


def test_executor_validation_and_worker_failure():
    with pytest.raises(ValueError):
        ProcessExecutor(toy_case(), workers=0)
    ex = ProcessExecutor(toy_case(), workers=1)
    assert ex.assignment == [[0, 1]]
    ex.case = toy_case(problem="nope")  # the worker cannot build this case
    with pytest.raises(WorkerError, match="unknown problem"):
        with ex:
            ex.setup()
