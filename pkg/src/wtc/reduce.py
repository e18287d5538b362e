"""Magnitude pruning and fixed-point quantization."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Literal

import numpy as np

from wtc.tensor import DenseTensor

Rounding = Literal["truncate", "nearest"]


@dataclass(frozen=True)
class PruneSpec:
    """Either an absolute-value ``threshold`` or a ``target_sparsity`` fraction."""

    mode: Literal["threshold", "target_sparsity"]
    threshold: float = 0.0
    target_sparsity: float = 0.0

    def __post_init__(self):
        if self.mode not in ("threshold", "target_sparsity"):
            raise ValueError(f"unknown prune mode {self.mode!r}")
        if not self.threshold >= 0:
            raise ValueError(f"threshold must be >= 0, got {self.threshold}")
        if not 0.0 <= self.target_sparsity <= 1.0:
            raise ValueError(f"target_sparsity must lie in [0, 1], got {self.target_sparsity}")

    @classmethod
    def at_threshold(cls, threshold: float) -> "PruneSpec":
        return cls("threshold", threshold=threshold)

    @classmethod
    def at_sparsity(cls, target: float) -> "PruneSpec":
        return cls("target_sparsity", target_sparsity=target)


@dataclass(frozen=True)
class QuantGrid:
    """Signed fixed-point grid: value = k * scale, k in [-(2^(bits-1)), 2^(bits-1) - 1].

    ``scale`` is rounded to float32 on construction so it survives the
    container round trip bit-exactly.
    """

    scale: float
    bits: int = 16
    rounding: Rounding = "nearest"

    def __post_init__(self):
        if not 2 <= self.bits <= 16:
            raise ValueError(f"bits must lie in [2, 16] for q16 storage, got {self.bits}")
        if self.rounding not in ("truncate", "nearest"):
            raise ValueError(f"unknown rounding mode {self.rounding!r}")
        scale = float(np.float32(self.scale))
        if not (scale > 0 and math.isfinite(scale)):
            raise ValueError(f"scale must be a positive finite float32, got {self.scale}")
        object.__setattr__(self, "scale", scale)

    @property
    def qmin(self) -> int:
        return -(1 << (self.bits - 1))

    @property
    def qmax(self) -> int:
        return (1 << (self.bits - 1)) - 1


def _pruned_count(target: float, n: int) -> int:
    # round() first so e.g. 0.7 * 10 does not ceil to 8
    return min(n, math.ceil(round(target * n, 9)))


def prune(t: DenseTensor, spec: PruneSpec) -> DenseTensor:
    """Zero small-magnitude weights; surviving values are untouched."""
    if t.dtype != "float32":
        raise ValueError(f"{t.name}: prune expects float32, got {t.dtype}")
    values = t.values.copy()
    if spec.mode == "threshold":
        values[np.abs(values) < spec.threshold] = 0
    else:
        k = _pruned_count(spec.target_sparsity, values.size)
        # stable sort: equal magnitudes are pruned in flat-index order
        order = np.argsort(np.abs(values), kind="stable")
        values[order[:k]] = 0
    return t.replace(values=values)


def effective_threshold(t: DenseTensor, spec: PruneSpec) -> float:
    """Magnitude cutoff that ``spec`` applied to ``t``.

    For target-sparsity pruning this is the smallest surviving magnitude
    (0.0 if nothing survives).
    """
    if spec.mode == "threshold":
        return spec.threshold
    pruned = prune(t, spec).values
    alive = np.abs(pruned[pruned != 0])
    return float(alive.min()) if alive.size else 0.0


def default_scale(t: DenseTensor, bits: int = 16) -> float:
    if t.size == 0:
        raise ValueError(f"{t.name}: empty tensor")
    peak = float(np.max(np.abs(t.real_values())))
    if peak == 0:
        return 1.0
    return peak / ((1 << (bits - 1)) - 1)


def resolve_grid(
    t: DenseTensor,
    bits: int = 16,
    rounding: Rounding = "nearest",
    scale: str | float = "auto",
    spec: PruneSpec | None = None,
) -> QuantGrid:
    """Build the grid for ``t`` from a scale choice: "auto", "threshold" or a number.

    "threshold" ties the grid step to the pruning cutoff; it falls back to
    the auto scale when the cutoff is zero.
    """
    if scale == "auto":
        step = default_scale(t, bits)
    elif scale == "threshold":
        if spec is None:
            raise ValueError("scale='threshold' needs a prune spec")
        step = effective_threshold(t, spec) if t.dtype == "float32" else 0.0
        if step <= 0:
            step = default_scale(t, bits)
    else:
        step = float(scale)
    return QuantGrid(step, bits, rounding)


def quantize(t: DenseTensor, grid: QuantGrid) -> DenseTensor:
    """Map every value onto ``grid``; returns a q16 tensor carrying ``grid.scale``.

    truncate rounds toward zero, nearest rounds half to even. Values whose
    grid index falls outside the representable range raise ``ValueError``.
    """
    if t.dtype == "q16" and t.scale == grid.scale:
        k = t.values.astype(np.float64)
    else:
        ratio = t.real_values() / grid.scale
        k = np.trunc(ratio) if grid.rounding == "truncate" else np.rint(ratio)
    bad = ~np.isfinite(k) | (k < grid.qmin) | (k > grid.qmax)
    if bad.any():
        idx = np.flatnonzero(bad)
        shown = ", ".join(str(i) for i in idx[:10]) + (" ..." if idx.size > 10 else "")
        raise ValueError(
            f"{t.name}: {idx.size} values overflow the {grid.bits}-bit grid "
            f"(scale {grid.scale:g}) at flat indices {shown}"
        )
    return t.replace(dtype="q16", values=k.astype(np.int16), scale=grid.scale)


def reduce_tensor(t: DenseTensor, spec: PruneSpec, grid: QuantGrid) -> DenseTensor:
    """Prune then quantize (retraining is not modelled)."""
    return quantize(prune(t, spec), grid)


def sparsity(t: DenseTensor) -> float:
    return float(np.count_nonzero(t.values == 0)) / t.size
