"""Redundancy analysis, block-width sweeps and the per-layer pipeline."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np

from wtc import formats, huffman
from wtc.accounting import (
    FIXED32,
    SizeBreakdown,
    WidthPolicy,
    size_bsr,
    size_dense,
    size_huffman,
    size_sbsr,
)
from wtc.reduce import PruneSpec, QuantGrid, prune, quantize, sparsity
from wtc.tensor import DenseTensor, flatten_to_matrix

DEFAULT_WIDTHS = (1, 2, 4, 8, 16)
DEFAULT_SPARSITIES = (0.4, 0.6, 0.8)
# Huffman coordinates are stored as raw (row, column) pairs, never CSR-compressed.
H_IDX_LAYOUT = "raw_pairs"


def block_histogram(m, width: int) -> dict[tuple[int, ...], int]:
    """Count of every distinct nonzero 1 x width block, in first-appearance order."""
    if width < 1:
        raise ValueError(f"width must be >= 1, got {width}")
    m = formats._as_q16(m)
    tiles = huffman._tile(m, width)
    vecs = tiles[tiles.any(axis=2)]
    if vecs.shape[0] == 0:
        return {}
    uniq, first, counts = np.unique(vecs, axis=0, return_index=True, return_counts=True)
    order = np.argsort(first)
    return {tuple(int(v) for v in uniq[i]): int(counts[i]) for i in order}


@dataclass(frozen=True)
class Candidate:
    width: int
    total_bits: int
    breakdown: SizeBreakdown


@dataclass(frozen=True)
class SweepResult:
    layer: str
    candidates: tuple[Candidate, ...]
    best_width: int

    def rows(self) -> list[dict]:
        return [
            {
                "layer": self.layer,
                "width": c.width,
                "total_bits": c.total_bits,
                "s_idx": c.breakdown["S_idx"],
                "s_flag": c.breakdown["S_flag"],
                "s_ptr": c.breakdown["S_block_pointer"],
                "s_unique": c.breakdown["S_unique_blocks"],
                "best_width": self.best_width,
            }
            for c in self.candidates
        ]


SWEEP_FIELDS = ("layer", "width", "total_bits", "s_idx", "s_flag", "s_ptr", "s_unique", "best_width")


def sweep_block_width(m, widths, policy: WidthPolicy = FIXED32, layer: str = "") -> SweepResult:
    """SBSR size at each block width; the smallest total wins, ties to the narrower width."""
    widths = list(dict.fromkeys(int(w) for w in widths))
    if not widths:
        raise ValueError("no block widths to sweep")
    cands = []
    for w in widths:
        sb = size_sbsr(formats.to_sbsr(m, 1, w), policy)
        cands.append(Candidate(w, sb.total_bits, sb))
    best = min(cands, key=lambda c: (c.total_bits, c.width))
    return SweepResult(layer, tuple(cands), best.width)


@dataclass(frozen=True)
class RoundingReport:
    layer: str
    width: int
    unique_truncate: int
    unique_nearest: int
    total_truncate: int
    total_nearest: int
    differing_elements: int

    @property
    def ratio(self) -> float:
        """Truncate size over nearest size."""
        return self.total_truncate / self.total_nearest if self.total_nearest else float("nan")

    def row(self) -> dict:
        d = dataclasses.asdict(self)
        d["ratio"] = self.ratio
        return d


ROUNDING_FIELDS = (
    "layer", "width", "unique_truncate", "unique_nearest",
    "total_truncate", "total_nearest", "ratio", "differing_elements",
)


def compare_rounding(
    t: DenseTensor, grid: QuantGrid, width: int, policy: WidthPolicy = FIXED32
) -> RoundingReport:
    """Quantize ``t`` with truncation and with rounding; report sharing for both."""
    if t.dtype != "float32":
        raise ValueError(f"{t.name}: compare_rounding expects float32, got {t.dtype}")
    qt = quantize(t, dataclasses.replace(grid, rounding="truncate"))
    qn = quantize(t, dataclasses.replace(grid, rounding="nearest"))
    st = formats.to_sbsr(flatten_to_matrix(qt), 1, width)
    sn = formats.to_sbsr(flatten_to_matrix(qn), 1, width)
    return RoundingReport(
        t.name,
        width,
        st.n_unique,
        sn.n_unique,
        size_sbsr(st, policy).total_bits,
        size_sbsr(sn, policy).total_bits,
        int(np.count_nonzero(qt.values != qn.values)),
    )


@dataclass(frozen=True)
class LayerReport:
    layer: str
    layer_kind: str
    rows: int
    cols: int
    width: int
    sparsity_pruned: float
    sparsity_quantized: float
    n_blocks: int
    n_unique: int
    sizes: dict[str, SizeBreakdown]

    def _cr(self, num: str, den: str) -> float | None:
        d = self.sizes[den].total_bits
        return self.sizes[num].total_bits / d if d else None

    @property
    def cr_over_bsr(self) -> float | None:
        return self._cr("bsr", "sbsr")

    @property
    def cr_huffman(self) -> float | None:
        """Element-wise over vector-wise Huffman."""
        return self._cr("ehuff", "vhuff")

    @property
    def cr_sbsr(self) -> float | None:
        """Element-wise Huffman over SBSR."""
        return self._cr("ehuff", "sbsr")

    def row(self) -> dict:
        out = {
            "layer": self.layer,
            "layer_kind": self.layer_kind,
            "rows": self.rows,
            "cols": self.cols,
            "width": self.width,
            "sparsity_pruned": self.sparsity_pruned,
            "sparsity_quantized": self.sparsity_quantized,
            "n_blocks": self.n_blocks,
            "n_unique": self.n_unique,
        }
        for fmt in ("dense", "bsr", "sbsr", "ehuff", "vhuff"):
            out[f"{fmt}_bytes"] = self.sizes[fmt].total_bits / 8
        out["cr_over_bsr"] = self.cr_over_bsr
        out["cr_huffman"] = self.cr_huffman
        out["cr_sbsr"] = self.cr_sbsr
        out["h_idx"] = H_IDX_LAYOUT
        return out


LAYER_FIELDS = (
    "layer", "layer_kind", "rows", "cols", "width", "sparsity_pruned", "sparsity_quantized",
    "n_blocks", "n_unique", "dense_bytes", "bsr_bytes", "sbsr_bytes", "ehuff_bytes",
    "vhuff_bytes", "cr_over_bsr", "cr_huffman", "cr_sbsr", "h_idx",
)


def analyze_reduced(
    q: DenseTensor, width: int, policy: WidthPolicy = FIXED32, sparsity_pruned: float | None = None
) -> LayerReport:
    """Sizes of every representation of an already pruned and quantized tensor.

    The dense baseline is the float32 original: 32 bits per element.
    """
    if q.dtype != "q16":
        raise ValueError(f"{q.name}: expected a q16 tensor, got {q.dtype}")
    m = flatten_to_matrix(q)
    bsr = formats.to_bsr(m, 1, width)
    sbsr = formats.to_sbsr(m, 1, width)
    sizes = {
        "dense": size_dense(q.size, 32),
        "bsr": size_bsr(bsr, policy),
        "sbsr": size_sbsr(sbsr, policy),
        "ehuff": size_huffman(huffman.encode_elementwise(m), policy),
        "vhuff": size_huffman(huffman.encode_vectorwise(m, width), policy),
    }
    sq = sparsity(q)
    return LayerReport(
        q.name,
        q.layer_kind,
        m.shape[0],
        m.shape[1],
        width,
        sq if sparsity_pruned is None else sparsity_pruned,
        sq,
        bsr.n_blocks,
        sbsr.n_unique,
        sizes,
    )


def analyze_layer(
    t: DenseTensor,
    spec: PruneSpec,
    grid: QuantGrid,
    width: int,
    policy: WidthPolicy = FIXED32,
) -> LayerReport:
    """Prune, quantize, then size dense/BSR/SBSR/element and vector Huffman forms."""
    pruned = prune(t, spec)
    q = quantize(pruned, grid)
    return analyze_reduced(q, width, policy, sparsity(pruned))
