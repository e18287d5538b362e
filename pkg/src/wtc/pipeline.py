"""Container-level drivers shared by the CLI and library callers.

Every function here is deterministic and returns rows in input order even
when layers are processed concurrently (``WTC_THREADS``).
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

from wtc.accounting import FIXED32, WidthPolicy, size_huffman, size_sbsr
from wtc import formats, huffman
from wtc.reduce import PruneSpec, Rounding, quantize, prune, resolve_grid, sparsity
from wtc.sweep import (
    DEFAULT_WIDTHS,
    H_IDX_LAYOUT,
    LayerReport,
    RoundingReport,
    SweepResult,
    analyze_reduced,
    compare_rounding,
    sweep_block_width,
)
from wtc.tensor import DenseTensor, block_width_for, flatten_to_matrix


def thread_count() -> int:
    try:
        return max(1, int(os.environ.get("WTC_THREADS", "1")))
    except ValueError:
        return 1


def _map(fn, items):
    items = list(items)
    n = min(thread_count(), len(items))
    if n <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=n) as pool:
        return list(pool.map(fn, items))


@dataclass(frozen=True)
class Reduction:
    """Prune + quantize settings applied to float32 inputs (q16 inputs pass through)."""

    spec: PruneSpec = field(default_factory=lambda: PruneSpec.at_threshold(0.0))
    bits: int = 16
    rounding: Rounding = "nearest"
    scale: str | float = "auto"

    def grid_for(self, t: DenseTensor):
        return resolve_grid(t, self.bits, self.rounding, self.scale, self.spec)

    def apply(self, t: DenseTensor) -> tuple[DenseTensor, float]:
        """Reduced q16 tensor and its sparsity right after pruning."""
        if t.dtype == "q16":
            return t, sparsity(t)
        pruned = prune(t, self.spec)
        return quantize(pruned, self.grid_for(t)), sparsity(pruned)


def analyze_tensors(
    tensors: list[DenseTensor],
    reduction: Reduction = Reduction(),
    fc_width: int = 4,
    policy: WidthPolicy = FIXED32,
) -> list[LayerReport]:
    def one(t):
        q, sp = reduction.apply(t)
        return analyze_reduced(q, block_width_for(t, fc_width), policy, sp)

    return _map(one, tensors)


def sweep_tensors(
    tensors: list[DenseTensor],
    reduction: Reduction = Reduction(),
    widths=DEFAULT_WIDTHS,
    policy: WidthPolicy = FIXED32,
    fc_only: bool = False,
) -> list[SweepResult]:
    """Block-width sweep per layer; conv layers only try their kernel width."""
    chosen = [t for t in tensors if not fc_only or t.layer_kind == "fully_connected"]

    def one(t):
        q, _ = reduction.apply(t)
        ws = [t.shape[-1]] if t.layer_kind == "convolutional" else widths
        return sweep_block_width(flatten_to_matrix(q), ws, policy, layer=t.name)

    return _map(one, chosen)


def rounding_tensors(
    tensors: list[DenseTensor],
    reduction: Reduction = Reduction(),
    fc_width: int = 4,
    policy: WidthPolicy = FIXED32,
) -> list[RoundingReport]:
    def one(t):
        if t.dtype != "float32":
            raise ValueError(f"{t.name}: compare-rounding needs float32 weights")
        pruned = prune(t, reduction.spec)
        return compare_rounding(pruned, reduction.grid_for(t), block_width_for(t, fc_width), policy)

    return _map(one, tensors)


HUFFMAN_FIELDS = (
    "layer", "width", "ehuff_bits", "vhuff_bits", "sbsr_bits", "cr_huffman", "cr_sbsr", "h_idx",
)


def huffman_tensors(
    tensors: list[DenseTensor],
    reduction: Reduction = Reduction(),
    widths=(2, 4),
    policy: WidthPolicy = FIXED32,
) -> list[dict]:
    """Element-wise vs vector-wise Huffman vs SBSR, one row per layer and width.

    Conv layers use their kernel width only.
    """

    def one(t):
        q, _ = reduction.apply(t)
        m = flatten_to_matrix(q)
        e = size_huffman(huffman.encode_elementwise(m), policy).total_bits
        ws = [t.shape[-1]] if t.layer_kind == "convolutional" else list(dict.fromkeys(widths))
        rows = []
        for w in ws:
            v = size_huffman(huffman.encode_vectorwise(m, w), policy).total_bits
            s = size_sbsr(formats.to_sbsr(m, 1, w), policy).total_bits
            rows.append(
                {
                    "layer": t.name,
                    "width": w,
                    "ehuff_bits": e,
                    "vhuff_bits": v,
                    "sbsr_bits": s,
                    "cr_huffman": e / v if v else None,
                    "cr_sbsr": e / s if s else None,
                    "h_idx": H_IDX_LAYOUT,
                }
            )
        return rows

    return [r for rows in _map(one, tensors) for r in rows]
