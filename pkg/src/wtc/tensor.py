"""Weight tensor data model, matrix flattening and synthetic generators."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Literal, Sequence

import numpy as np

DTypeName = Literal["float32", "q16"]
LayerKind = Literal["convolutional", "fully_connected"]

NUMPY_DTYPES = {"float32": np.dtype("<f4"), "q16": np.dtype("<i2")}


@dataclass(frozen=True, eq=False)
class DenseTensor:
    """A named weight tensor.

    ``values`` is a flat row-major array: float32 for ``dtype="float32"``,
    int16 grid indices for ``dtype="q16"`` (real value = index * scale).
    """

    name: str
    shape: tuple[int, ...]
    dtype: DTypeName
    values: np.ndarray
    layer_kind: LayerKind = "fully_connected"
    scale: float = 1.0

    def __post_init__(self):
        shape = tuple(int(s) for s in self.shape)
        if not shape or any(s < 1 for s in shape):
            raise ValueError(f"{self.name}: extents must be >= 1, got {shape}")
        if self.dtype not in NUMPY_DTYPES:
            raise ValueError(f"{self.name}: unknown dtype {self.dtype!r}")
        if self.layer_kind not in ("convolutional", "fully_connected"):
            raise ValueError(f"{self.name}: unknown layer kind {self.layer_kind!r}")
        values = np.ascontiguousarray(self.values, dtype=NUMPY_DTYPES[self.dtype]).reshape(-1)
        if values.size != int(np.prod(shape)):
            raise ValueError(
                f"{self.name}: shape {shape} needs {int(np.prod(shape))} values, got {values.size}"
            )
        values.flags.writeable = False
        scale = float(np.float32(self.scale))
        if self.dtype == "q16" and not scale > 0:
            raise ValueError(f"{self.name}: q16 scale must be positive")
        object.__setattr__(self, "shape", shape)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "scale", scale)

    def __eq__(self, other):
        if not isinstance(other, DenseTensor):
            return NotImplemented
        return (
            self.name == other.name
            and self.shape == other.shape
            and self.dtype == other.dtype
            and self.layer_kind == other.layer_kind
            and np.float32(self.scale).tobytes() == np.float32(other.scale).tobytes()
            and self.values.tobytes() == other.values.tobytes()
        )

    __hash__ = None

    @property
    def size(self) -> int:
        return self.values.size

    def real_values(self) -> np.ndarray:
        """Values as float64 reals (dequantized for q16)."""
        if self.dtype == "q16":
            return self.values.astype(np.float64) * self.scale
        return self.values.astype(np.float64)

    def replace(self, **changes) -> "DenseTensor":
        fields = dict(
            name=self.name,
            shape=self.shape,
            dtype=self.dtype,
            values=self.values,
            layer_kind=self.layer_kind,
            scale=self.scale,
        )
        fields.update(changes)
        return DenseTensor(**fields)


def infer_layer_kind(shape: Sequence[int]) -> LayerKind:
    return "convolutional" if len(shape) == 4 else "fully_connected"


def matrix_shape(t: DenseTensor) -> tuple[int, int]:
    if len(t.shape) < 2:
        raise ValueError(f"{t.name}: cannot flatten a {len(t.shape)}-D tensor to a matrix")
    cols = t.shape[-1]
    return t.size // cols, cols


def flatten_to_matrix(t: DenseTensor) -> np.ndarray:
    """2-D row-major view: conv kernels become one row per kernel row.

    A ``[out, in, kh, kw]`` tensor maps to ``(out*in*kh, kw)``; a 2-D tensor
    is returned as is.
    """
    return t.values.reshape(matrix_shape(t))


def block_width_for(t: DenseTensor, fc_width: int) -> int:
    """Sharing granularity: kernel width for conv layers, ``fc_width`` otherwise."""
    if t.layer_kind == "convolutional":
        return t.shape[-1]
    return fc_width


# Distinct pattern values are drawn from this many integer levels (both signs),
# scaled so weights land in [-1, 1] and stay exactly representable in float32.
_SYNTH_LEVELS = 4096


def synth_planted(
    rows: int,
    cols: int,
    block_w: int,
    n_unique: int,
    sparsity: float,
    seed: int,
    name: str = "synth",
    shape: Sequence[int] | None = None,
    layer_kind: LayerKind | None = None,
) -> DenseTensor:
    """Random matrix whose nonzero 1 x block_w blocks use exactly ``n_unique`` patterns.

    About ``sparsity`` of the blocks (hence elements) are all zero. Every
    pattern is fully nonzero, and each of them is placed at least once when
    there are enough nonzero blocks. ``shape`` reshapes the result, e.g. to a
    conv tensor whose flattened matrix is ``rows x cols``.
    """
    if rows < 1 or cols < 1 or block_w < 1 or n_unique < 1:
        raise ValueError("rows, cols, block_w and n_unique must be positive")
    if cols % block_w:
        raise ValueError(f"block_w={block_w} does not divide cols={cols}")
    if not 0.0 <= sparsity <= 1.0:
        raise ValueError(f"sparsity must lie in [0, 1], got {sparsity}")
    n_blocks = rows * cols // block_w
    if n_unique > n_blocks:
        raise ValueError(f"n_unique={n_unique} exceeds the {n_blocks} available blocks")
    if block_w == 1 and n_unique > 2 * _SYNTH_LEVELS:
        raise ValueError(f"at most {2 * _SYNTH_LEVELS} distinct scalar patterns")

    rng = np.random.default_rng(seed)
    patterns: list[tuple[int, ...]] = []
    seen: set[tuple[int, ...]] = set()
    while len(patterns) < n_unique:
        mags = rng.integers(1, _SYNTH_LEVELS + 1, size=block_w)
        signs = rng.choice(np.array([-1, 1]), size=block_w)
        p = tuple(int(v) for v in mags * signs)
        if p not in seen:
            seen.add(p)
            patterns.append(p)
    pattern_arr = np.array(patterns, dtype=np.float64) / _SYNTH_LEVELS

    n_nonzero = int(round((1.0 - sparsity) * n_blocks))
    slots = rng.permutation(n_blocks)[:n_nonzero]
    first = rng.permutation(n_unique)[: min(n_unique, n_nonzero)]
    rest = rng.integers(0, n_unique, size=n_nonzero - first.size)
    choice = np.concatenate([first, rest])
    rng.shuffle(choice)

    blocks = np.zeros((n_blocks, block_w), dtype=np.float32)
    blocks[slots] = pattern_arr[choice]
    values = blocks.reshape(rows, cols)
    if shape is None:
        shape = (rows, cols)
    if layer_kind is None:
        layer_kind = infer_layer_kind(shape)
    return DenseTensor(name, tuple(shape), "float32", values.reshape(-1), layer_kind)


def synth_conv(
    shape: Sequence[int], n_unique: int, sparsity: float, seed: int, name: str = "conv"
) -> DenseTensor:
    """Conv tensor ``[out, in, kh, kw]`` with planted kernel-row patterns."""
    out_c, in_c, kh, kw = shape
    return synth_planted(out_c * in_c * kh, kw, kw, n_unique, sparsity, seed, name=name, shape=shape)


# conv1, conv2, fc3, fc4 of the classic LeNet-5 (Caffe variant)
LENET_SHAPES: dict[str, tuple[int, ...]] = {
    "conv1": (20, 1, 5, 5),
    "conv2": (50, 20, 5, 5),
    "fc3": (500, 800),
    "fc4": (10, 500),
}


def synth_lenet(n_unique: int, sparsity: float, seed: int, fc_width: int = 4) -> list[DenseTensor]:
    out = []
    for i, (name, shape) in enumerate(LENET_SHAPES.items()):
        layer_seed = seed + i
        if len(shape) == 4:
            u = min(n_unique, shape[0] * shape[1] * shape[2])
            out.append(synth_conv(shape, u, sparsity, layer_seed, name=name))
        else:
            u = min(n_unique, shape[0] * shape[1] // fc_width)
            out.append(synth_planted(shape[0], shape[1], fc_width, u, sparsity, layer_seed, name=name))
    return out


@dataclass
class SynthParams:
    rows: int = 64
    cols: int = 64
    block_w: int = 4
    n_unique: int = 16
    sparsity: float = 0.6
    seed: int = 0
    layers: int = 1
    names: list[str] = field(default_factory=list)


def synth_layers(p: SynthParams) -> list[DenseTensor]:
    """``p.layers`` planted FC matrices; layer ``i`` uses seed ``p.seed + i``."""
    names = p.names or [f"layer{i}" for i in range(p.layers)]
    return [
        synth_planted(p.rows, p.cols, p.block_w, p.n_unique, p.sparsity, p.seed + i, name=names[i])
        for i in range(p.layers)
    ]
