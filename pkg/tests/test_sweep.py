import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from wtc import formats, huffman
from wtc.accounting import FIXED32, THEORETICAL, size_bsr, size_huffman, size_sbsr
from wtc.reduce import PruneSpec, QuantGrid, prune, quantize
from wtc.sweep import analyze_layer, block_histogram, compare_rounding, sweep_block_width
from wtc.tensor import DenseTensor, flatten_to_matrix, synth_planted

from oracles import histogram_bruteforce, random_q16_matrix, sbsr_bits_from_histogram

STEP = 2.0 ** -12


def test_histogram_identical_rows():
    m = np.tile(np.array([[3, 0, -1]], np.int16), (8, 1))
    assert block_histogram(m, 3) == {(3, 0, -1): 8}


def test_histogram_of_zero_matrix_is_empty():
    assert block_histogram(np.zeros((3, 4), np.int16), 2) == {}


def test_histogram_on_planted_matrix():
    t = synth_planted(100, 10, 5, 3, 0.6, seed=2)
    q = quantize(t, QuantGrid(STEP))
    assert len(block_histogram(flatten_to_matrix(q), 5)) <= 3


@settings(max_examples=100, deadline=None)
@given(
    arrays(np.int16, st.tuples(st.integers(1, 12), st.integers(1, 12)), elements=st.sampled_from([0, 0, 1, 2])),
    st.integers(1, 5),
)
def test_histogram_agrees_with_structures(m, w):
    hist = block_histogram(m, w)
    assert hist == dict(histogram_bruteforce(m.tolist(), w))
    s = formats.to_sbsr(m, 1, w)
    assert len(hist) == s.n_unique
    assert sum(hist.values()) == formats.to_bsr(m, 1, w).n_blocks
    assert list(hist) == [tuple(u[0].tolist()) for u in s.unique_blocks]


def test_identical_rows_favour_wider_blocks():
    m = np.tile(np.arange(1, 17, dtype=np.int16), (32, 1))
    for policy in (FIXED32, THEORETICAL):
        res = sweep_block_width(m, [1, 2, 4, 8, 16], policy)
        totals = [c.total_bits for c in res.candidates]
        assert all(a > b for a, b in zip(totals, totals[1:]))
        assert res.best_width == 16


def test_all_distinct_values_gain_nothing_from_sharing(rng):
    m = rng.permutation(np.arange(1, 1 + 16 * 24, dtype=np.int16)).reshape(16, 24)
    res = sweep_block_width(m, [1, 2, 4], THEORETICAL)
    for c in res.candidates:
        assert c.breakdown["S_block_pointer"] == 0
        b = size_bsr(formats.to_bsr(m, 1, c.width), THEORETICAL)
        assert c.total_bits == b.total_bits + c.breakdown["S_flag"]
    idx_cost = {c.width: c.breakdown["S_idx"] + c.breakdown["S_flag"] for c in res.candidates}
    assert res.best_width == min(idx_cost, key=lambda w: (idx_cost[w], w))


def test_single_width_and_duplicates():
    m = np.eye(4, dtype=np.int16)
    assert sweep_block_width(m, [2]).best_width == 2
    assert [c.width for c in sweep_block_width(m, [2, 1, 2]).candidates] == [2, 1]
    with pytest.raises(ValueError):
        sweep_block_width(m, [])


def test_ties_go_to_narrower_width():
    m = np.zeros((2, 4), np.int16)
    assert sweep_block_width(m, [4, 2, 1]).best_width == 1


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10_000), st.sampled_from([FIXED32, THEORETICAL]))
def test_sweep_argmin_and_coverage(seed, policy):
    rng = np.random.default_rng(seed)
    m = random_q16_matrix(rng, 12, 16, rng.random(), levels=2)
    widths = [1, 2, 4, 8, 16]
    res = sweep_block_width(m, widths, policy)
    assert [c.width for c in res.candidates] == widths
    best = next(c for c in res.candidates if c.width == res.best_width)
    assert all(best.total_bits <= c.total_bits for c in res.candidates)
    for c in res.candidates:
        hist = dict(histogram_bruteforce(m.tolist(), c.width))
        assert c.breakdown.components == sbsr_bits_from_histogram(hist, 12, 16, c.width, policy.mode)


def _ft(values, shape=None):
    values = np.asarray(values, dtype=np.float32)
    return DenseTensor("r", shape or (1, values.size), "float32", values)


def test_rounding_on_grid_is_identical(rng):
    t = _ft(rng.integers(-40, 41, 64) * 0.25, (8, 8))
    r = compare_rounding(t, QuantGrid(0.25), 4)
    assert r.ratio == 1.0
    assert r.differing_elements == 0
    assert r.unique_truncate == r.unique_nearest


def test_rounding_at_half_steps_diverges():
    t = _ft([1.5, 3.5, -1.5, 5.5, 1.5, 3.5, -1.5, 5.5], (2, 4))
    r = compare_rounding(t, QuantGrid(1.0), 2)
    assert r.differing_elements == 8
    assert r.total_truncate > 0 and r.total_nearest > 0
    row = r.row()
    assert row["ratio"] == r.total_truncate / r.total_nearest


def test_rounding_gaussian_smoke(rng):
    t = _ft(rng.standard_normal(400), (40, 10))
    r = compare_rounding(t, QuantGrid(0.05), 5)
    assert r.total_truncate > 0 and r.total_nearest > 0


def test_rounding_requires_float32():
    q = quantize(_ft([1.0, 2.0]), QuantGrid(1.0))
    with pytest.raises(ValueError):
        compare_rounding(q, QuantGrid(1.0), 1)


@pytest.mark.parametrize("n_unique, s", [(4, 0.6), (1, 0.4), (30, 0.8)])
def test_lenet_conv2_matches_analytic_ratio(n_unique, s):
    t = synth_planted(5000, 5, 5, n_unique, s, seed=9, shape=(50, 20, 5, 5), layer_kind="convolutional")
    rep = analyze_layer(t, PruneSpec.at_threshold(0.0), QuantGrid(STEP), 5, FIXED32)
    nb = round((1 - s) * 5000)
    idx = 5001 * 32 + nb * 32
    bsr = idx + nb * 5 * 16
    sbsr = -(-nb // 8) * 8 + (nb - n_unique) * 32 + idx + n_unique * 5 * 16
    assert (rep.rows, rep.cols) == (5000, 5)
    assert rep.n_blocks == nb and rep.n_unique == n_unique
    assert rep.sizes["bsr"].total_bits == bsr
    assert rep.sizes["sbsr"].total_bits == sbsr
    assert rep.cr_over_bsr == pytest.approx(bsr / sbsr, rel=1e-12)


def test_analyze_sizes_match_rebuilt_structures(rng):
    t = _ft(rng.standard_normal(600), (30, 20))
    spec, grid = PruneSpec.at_sparsity(0.6), QuantGrid(0.01)
    rep = analyze_layer(t, spec, grid, 4, THEORETICAL)
    m = flatten_to_matrix(quantize(prune(t, spec), grid))
    assert rep.sizes["bsr"] == size_bsr(formats.to_bsr(m, 1, 4), THEORETICAL)
    assert rep.sizes["sbsr"] == size_sbsr(formats.to_sbsr(m, 1, 4), THEORETICAL)
    assert rep.sizes["ehuff"] == size_huffman(huffman.encode_elementwise(m), THEORETICAL)
    assert rep.sizes["vhuff"] == size_huffman(huffman.encode_vectorwise(m, 4), THEORETICAL)
    assert rep.sizes["dense"].total_bits == 600 * 32
    assert rep.sparsity_pruned == pytest.approx(0.6)


def test_analyze_all_zero_layer():
    t = _ft(np.zeros(40), (4, 10))
    rep = analyze_layer(t, PruneSpec.at_threshold(0.0), QuantGrid(1.0), 5)
    assert rep.sizes["bsr"]["BSR_blocks"] == 0
    assert rep.sizes["sbsr"]["S_unique_blocks"] == 0
    assert rep.sizes["ehuff"]["payload"] == 0 and rep.sizes["vhuff"]["H_dict"] == 0
    assert rep.n_blocks == 0
    assert rep.row()["cr_huffman"] is None
