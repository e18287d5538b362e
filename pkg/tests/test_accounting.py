import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from wtc import formats, huffman
from wtc.accounting import (
    BREAKDOWN_FIELDS,
    FIXED32,
    SIZE_FIELDS,
    THEORETICAL,
    SizeBreakdown,
    WidthPolicy,
    breakdown_report,
    cr_huffman,
    cr_over_bsr,
    render_rows,
    size_bsr,
    size_dense,
    size_huffman,
    size_rows,
    size_sbsr,
)

from oracles import ceil_log2, random_q16_matrix

matrices = arrays(
    np.int16,
    st.tuples(st.integers(1, 16), st.integers(1, 16)),
    elements=st.sampled_from([0, 0, 0, 1, 2, -3]),
)


def test_bsr_hand_count():
    m = np.zeros((2, 8), np.int16)
    m[0, 0] = 1
    m[0, 5] = 2
    m[1, 2] = 3
    b = formats.to_bsr(m, 1, 4)
    assert b.n_blocks == 3 and b.n_block_rows == 2
    sb = size_bsr(b, FIXED32)
    assert sb["BSR_idx"] == (3 + 3) * 32 == 192
    assert sb["BSR_blocks"] == 3 * 4 * 16 == 192
    assert sb.total_bits == 384


def test_empty_matrix_has_no_block_bits():
    z = np.zeros((4, 6), np.int16)
    assert size_bsr(formats.to_bsr(z, 1, 3))["BSR_blocks"] == 0
    s = size_sbsr(formats.to_sbsr(z, 1, 3))
    assert s["S_unique_blocks"] == s["S_block_pointer"] == s["S_flag"] == 0


def test_sbsr_theoretical_hand_count():
    m = np.tile(np.array([[5, 6]], np.int16), (2, 4))
    s = formats.to_sbsr(m, 1, 2)
    sb = size_sbsr(s, THEORETICAL)
    assert sb["S_flag"] == 8
    assert sb["S_unique_blocks"] == 32
    assert sb["S_block_pointer"] == 7 * 1
    # row_ptr: 3 entries over 9 values -> 4 bits; col_idx: 8 entries over 4 columns -> 2 bits
    assert sb["S_idx"] == 3 * 4 + 8 * 2


def test_no_repeats_matches_bsr_payload(rng):
    m = rng.permutation(np.arange(1, 41, dtype=np.int16)).reshape(5, 8)
    b, s = formats.to_bsr(m, 1, 4), formats.to_sbsr(m, 1, 4)
    ss = size_sbsr(s)
    assert ss["S_block_pointer"] == 0
    assert ss["S_unique_blocks"] == size_bsr(b)["BSR_blocks"]


def test_location_pointer_convention():
    m = np.array([[1, 2, 1, 2, 3, 4, 1, 2]], np.int16)
    s = formats.to_sbsr(m, 1, 2)
    unique = size_sbsr(s, WidthPolicy("theoretical", "unique"))["S_block_pointer"]
    location = size_sbsr(s, WidthPolicy("theoretical", "location"))["S_block_pointer"]
    assert unique == 2 * ceil_log2(2)
    assert location == 2 * ceil_log2(4)


def test_huffman_examples():
    m = np.zeros((2, 10), np.int16)
    m[0] = 7
    sb = size_huffman(huffman.encode_elementwise(m), THEORETICAL)
    assert sb["payload"] == 10
    m = np.array([[4, 4, 9, 1]], np.int16)
    assert size_huffman(huffman.encode_elementwise(m), THEORETICAL)["payload"] == 6


def test_dense_size():
    assert size_dense(4096 * 9216).total_bits / 8 / 2 ** 20 == 144.0


def test_compaction_ratio_examples():
    assert round(cr_over_bsr(83.60, 28.69), 2) == 2.91
    assert round(cr_over_bsr(225.7, 72.51), 2) == 3.11
    a = SizeBreakdown({"x": 10, "y": 30})
    assert cr_over_bsr(a, a) == 1.0
    assert cr_huffman(a, a) == 1.0
    assert cr_huffman(a, SizeBreakdown({"p": 20})) == 2.0
    with pytest.raises(ZeroDivisionError):
        cr_huffman(a, SizeBreakdown({}))


def test_size_breakdown_rejects_negative():
    with pytest.raises(ValueError):
        SizeBreakdown({"x": -1})


def test_breakdown_report():
    rows = breakdown_report([("m", SizeBreakdown({"a": 64, "b": 64}))])
    assert [r["percent"] for r in rows] == [50.0, 50.0]
    assert breakdown_report([]) == []
    assert render_rows([], BREAKDOWN_FIELDS) == "label,component,bits,percent\n"


def test_index_dominates_elementwise_huffman(rng):
    m = random_q16_matrix(rng, 64, 64, 0.8, levels=4)
    sb = size_huffman(huffman.encode_elementwise(m))
    shares = {r["component"]: r["percent"] for r in breakdown_report([("m", sb)])}
    assert max(shares, key=shares.get) == "H_Idx"


def test_size_rows_and_rendering():
    sizes = {
        "bsr": SizeBreakdown({"BSR_idx": 60, "BSR_blocks": 60}),
        "sbsr": SizeBreakdown({"S_idx": 40}),
        "ehuff": SizeBreakdown({"payload": 0}),
    }
    rows = size_rows("fc", sizes)
    totals = {r["format"]: r for r in rows if r["component"] == "total"}
    assert totals["sbsr"]["cr_over_bsr"] == 3.0
    assert totals["sbsr"]["cr_vs_elem_huffman"] is None
    text = render_rows(rows, SIZE_FIELDS)
    assert text.splitlines()[0] == ",".join(SIZE_FIELDS)
    assert "fc,sbsr,total,40,5.0,3.0," in text
    back = json.loads(render_rows(rows, SIZE_FIELDS, "json"))
    assert back[0]["layer"] == "fc" and list(back[0]) == list(SIZE_FIELDS)


@settings(max_examples=150, deadline=None)
@given(matrices, st.integers(1, 5))
def test_fixed32_totals_equal_serialized_bytes(m, w):
    b, s = formats.to_bsr(m, 1, w), formats.to_sbsr(m, 1, w)
    assert size_bsr(b).total_bits == 8 * (len(formats.serialize(b)) - formats.HEADER_BYTES)
    assert size_sbsr(s).total_bits == 8 * (len(formats.serialize(s)) - formats.HEADER_BYTES)
    for e in (huffman.encode_elementwise(m), huffman.encode_vectorwise(m, w)):
        assert size_huffman(e).total_bits == 8 * (len(huffman.serialize(e)) - huffman.HEADER_BYTES)
        assert size_huffman(e, THEORETICAL)["payload"] == e.payload_bits


@settings(max_examples=150, deadline=None)
@given(matrices, st.integers(1, 5))
def test_sharing_invariants(m, w):
    b, s = formats.to_bsr(m, 1, w), formats.to_sbsr(m, 1, w)
    for p in (THEORETICAL, FIXED32):
        sb, ss = size_bsr(b, p), size_sbsr(s, p)
        assert ss.total_bits == sum(ss.components.values())
        assert ss["S_unique_blocks"] <= sb["BSR_blocks"]
        has_dup = s.n_unique < b.n_blocks
        assert (ss["S_unique_blocks"] < sb["BSR_blocks"]) == has_dup
    sb, ss = size_bsr(b, THEORETICAL), size_sbsr(s, THEORETICAL)
    assert ss.total_bits <= sb.total_bits + b.n_blocks
    if b.n_blocks:
        bound = sb["BSR_blocks"] / (sb["BSR_blocks"] + b.n_blocks)
        assert cr_over_bsr(sb, ss) >= bound
