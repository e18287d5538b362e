"""Block sparse row (BSR) and shared-block sparse row (SBSR) matrices.

Matrices hold q16 grid indices (int16). Edge blocks are zero padded; a block
is stored only if it has at least one nonzero. SBSR keeps BSR's row pointers
and column indices and adds, per stored block, a first/repeat flag. First
appearances contribute their payload to ``unique_blocks``; repeats carry a
reference into that store.

Serialized section layout (little-endian)::

    header   32 bytes: magic (b"BSR1" | b"SBR1"), then u32 rows, cols,
             block_h, block_w, n_blocks, n_unique, n_refs
    row_ptr  u32 x (n_block_rows + 1)
    col_idx  u32 x n_blocks
    flags    SBSR only: ceil(n_blocks / 8) bytes, 1 = first, MSB-first
    refs     SBSR only: u32 x n_refs
    blocks   int16 x (count * block_h * block_w), row-major per block
             (all stored blocks for BSR, the unique store for SBSR)
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from functools import cached_property

import numpy as np

HEADER = struct.Struct("<4s7I")
HEADER_BYTES = HEADER.size
BSR_MAGIC = b"BSR1"
SBSR_MAGIC = b"SBR1"


class FormatError(ValueError):
    pass


def _as_q16(m) -> np.ndarray:
    m = np.asarray(m)
    if m.ndim != 2:
        raise ValueError(f"expected a 2-D matrix, got shape {m.shape}")
    if m.dtype != np.int16:
        if not np.issubdtype(m.dtype, np.integer) or m.size and (m.min() < -32768 or m.max() > 32767):
            raise ValueError("matrix entries must be int16 grid indices")
        m = m.astype(np.int16)
    return m


@dataclass(frozen=True, eq=False)
class BsrMatrix:
    rows: int
    cols: int
    block_h: int
    block_w: int
    row_ptr: np.ndarray
    col_idx: np.ndarray
    blocks: np.ndarray  # (n_blocks, block_h, block_w) int16

    @property
    def n_block_rows(self) -> int:
        return -(-self.rows // self.block_h)

    @property
    def n_block_cols(self) -> int:
        return -(-self.cols // self.block_w)

    @property
    def n_blocks(self) -> int:
        return int(self.col_idx.size)

    @cached_property
    def block_row_of(self) -> np.ndarray:
        return np.repeat(np.arange(self.n_block_rows), np.diff(self.row_ptr))

    def payloads(self) -> np.ndarray:
        return self.blocks


@dataclass(frozen=True, eq=False)
class SbsrMatrix:
    rows: int
    cols: int
    block_h: int
    block_w: int
    row_ptr: np.ndarray
    col_idx: np.ndarray
    flags: np.ndarray  # bool per stored block, True = first appearance
    unique_blocks: np.ndarray  # (n_unique, block_h, block_w) int16
    refs: np.ndarray  # unique-store index per repeat, in storage order
    touches: int = 0  # blocks visited while building (one per stored block)

    @property
    def n_block_rows(self) -> int:
        return -(-self.rows // self.block_h)

    @property
    def n_block_cols(self) -> int:
        return -(-self.cols // self.block_w)

    @property
    def n_blocks(self) -> int:
        return int(self.col_idx.size)

    @property
    def n_unique(self) -> int:
        return int(self.unique_blocks.shape[0])

    @cached_property
    def block_row_of(self) -> np.ndarray:
        return np.repeat(np.arange(self.n_block_rows), np.diff(self.row_ptr))

    @cached_property
    def slot(self) -> np.ndarray:
        """Per stored block: index into ``unique_blocks`` (F) or ``refs`` (R)."""
        f = np.cumsum(self.flags) - 1
        r = np.cumsum(~self.flags) - 1
        return np.where(self.flags, f, r)

    @cached_property
    def uid(self) -> np.ndarray:
        """Per stored block: the unique-store index holding its payload."""
        out = self.slot.copy()
        out[~self.flags] = self.refs
        return out

    def payloads(self) -> np.ndarray:
        return self.unique_blocks[self.uid]


def _tiles(m: np.ndarray, bh: int, bw: int) -> np.ndarray:
    rows, cols = m.shape
    nbr, nbc = -(-rows // bh), -(-cols // bw)
    padded = np.zeros((nbr * bh, nbc * bw), dtype=np.int16)
    padded[:rows, :cols] = m
    return padded.reshape(nbr, bh, nbc, bw).transpose(0, 2, 1, 3)


def to_bsr(m, block_h: int, block_w: int) -> BsrMatrix:
    if block_h < 1 or block_w < 1:
        raise ValueError(f"block extents must be >= 1, got {block_h}x{block_w}")
    m = _as_q16(m)
    tiles = _tiles(m, block_h, block_w)
    stored = tiles.any(axis=(2, 3))
    br, bc = np.nonzero(stored)
    row_ptr = np.zeros(stored.shape[0] + 1, dtype=np.int64)
    np.cumsum(stored.sum(axis=1), out=row_ptr[1:])
    blocks = np.ascontiguousarray(tiles[br, bc])
    return BsrMatrix(m.shape[0], m.shape[1], block_h, block_w, row_ptr, bc.astype(np.int64), blocks)


def block_keys(blocks: np.ndarray) -> list[bytes]:
    """Exact byte identity of each block payload."""
    n = blocks.shape[0]
    if n == 0:
        return []
    flat = np.ascontiguousarray(blocks.reshape(n, -1), dtype="<i2")
    return flat.view(np.dtype((np.void, flat.shape[1] * 2))).ravel().tolist()


def to_sbsr(m, block_h: int, block_w: int) -> SbsrMatrix:
    """BSR with global deduplication of identical blocks, built in one scan."""
    b = to_bsr(m, block_h, block_w)
    seen: dict[bytes, int] = {}
    flags = np.zeros(b.n_blocks, dtype=bool)
    first: list[int] = []
    refs: list[int] = []
    touches = 0
    for pos, key in enumerate(block_keys(b.blocks)):
        touches += 1
        uid = seen.get(key)
        if uid is None:
            seen[key] = len(first)
            first.append(pos)
            flags[pos] = True
        else:
            refs.append(uid)
    unique = b.blocks[np.array(first, dtype=np.int64)]
    return SbsrMatrix(
        b.rows,
        b.cols,
        b.block_h,
        b.block_w,
        b.row_ptr,
        b.col_idx,
        flags,
        unique,
        np.array(refs, dtype=np.int64),
        touches,
    )


def validate(s: BsrMatrix | SbsrMatrix) -> None:
    """Raise ``FormatError`` on any structural inconsistency."""
    if min(s.rows, s.cols, s.block_h, s.block_w) < 1:
        raise FormatError("extents and block dims must be >= 1")
    nbr, nbc, nb = s.n_block_rows, s.n_block_cols, s.n_blocks
    rp, ci = s.row_ptr, s.col_idx
    if rp.shape != (nbr + 1,):
        raise FormatError(f"row_ptr has {rp.size} entries, expected {nbr + 1}")
    if rp[0] != 0 or rp[-1] != nb or np.any(np.diff(rp) < 0):
        raise FormatError("row_ptr must start at 0, be non-decreasing and end at the block count")
    if nb and (ci.min() < 0 or ci.max() >= nbc):
        raise FormatError(f"column index out of range [0, {nbc})")
    step = np.diff(ci)
    same_row = np.diff(s.block_row_of) == 0
    if np.any(step[same_row] <= 0):
        raise FormatError("column indices must be strictly increasing within a block row")
    shape = (s.block_h, s.block_w)
    if isinstance(s, BsrMatrix):
        if s.blocks.shape != (nb, *shape):
            raise FormatError(f"blocks have shape {s.blocks.shape}, expected {(nb, *shape)}")
        payload = s.blocks
    else:
        flags = s.flags
        if flags.shape != (nb,):
            raise FormatError(f"{flags.size} flags for {nb} stored blocks")
        n_first = int(flags.sum())
        if s.unique_blocks.shape != (n_first, *shape):
            raise FormatError(
                f"unique store has shape {s.unique_blocks.shape}, expected {(n_first, *shape)}"
            )
        if s.refs.shape != (nb - n_first,):
            raise FormatError(f"{s.refs.size} refs for {nb - n_first} repeat blocks")
        seen_before = (np.cumsum(flags) - flags)[~flags]
        bad = (s.refs < 0) | (s.refs >= seen_before)
        if np.any(bad):
            p = int(np.flatnonzero(~flags)[np.argmax(bad)])
            raise FormatError(f"ref at stored block {p} does not point to an earlier unique block")
        if len(set(block_keys(s.unique_blocks))) != n_first:
            raise FormatError("unique store holds duplicate payloads")
        payload = s.unique_blocks
    if payload.shape[0] and not payload.reshape(payload.shape[0], -1).any(axis=1).all():
        raise FormatError("stored block without any nonzero")


def decode(s: BsrMatrix | SbsrMatrix) -> np.ndarray:
    """Dense int16 matrix with padding stripped."""
    validate(s)
    tiles = np.zeros((s.n_block_rows, s.n_block_cols, s.block_h, s.block_w), dtype=np.int16)
    tiles[s.block_row_of, s.col_idx] = s.payloads()
    dense = tiles.transpose(0, 2, 1, 3).reshape(s.n_block_rows * s.block_h, s.n_block_cols * s.block_w)
    return np.ascontiguousarray(dense[: s.rows, : s.cols])


def _locate(s: BsrMatrix | SbsrMatrix, block_row: int, block_col: int) -> int | None:
    if not (0 <= block_row < s.n_block_rows and 0 <= block_col < s.n_block_cols):
        raise IndexError(
            f"block ({block_row}, {block_col}) outside {s.n_block_rows}x{s.n_block_cols} block grid"
        )
    lo, hi = int(s.row_ptr[block_row]), int(s.row_ptr[block_row + 1])
    pos = lo + int(np.searchsorted(s.col_idx[lo:hi], block_col))
    if pos < hi and s.col_idx[pos] == block_col:
        return pos
    return None


def get_block(s: BsrMatrix | SbsrMatrix, block_row: int, block_col: int) -> np.ndarray:
    """Payload of one block; repeats resolve through a single reference."""
    pos = _locate(s, block_row, block_col)
    if pos is None:
        return np.zeros((s.block_h, s.block_w), dtype=np.int16)
    if isinstance(s, BsrMatrix):
        return s.blocks[pos].copy()
    k = s.slot[pos]
    if s.flags[pos]:
        return s.unique_blocks[k].copy()
    return s.unique_blocks[s.refs[k]].copy()


def _canonical(s: SbsrMatrix, uid: np.ndarray, store: np.ndarray) -> SbsrMatrix:
    """Re-derive flags/refs/store from per-block unique ids.

    Renumbers the store into first-appearance order and drops payloads no
    longer referenced by any block.
    """
    n = uid.size
    if n == 0:
        return SbsrMatrix(s.rows, s.cols, s.block_h, s.block_w, s.row_ptr, s.col_idx,
                          np.zeros(0, bool), store[:0], np.zeros(0, np.int64))
    used, first_pos = np.unique(uid, return_index=True)
    order = np.argsort(first_pos)
    remap = np.empty(int(used.max()) + 1, dtype=np.int64)
    remap[used[order]] = np.arange(used.size)
    new_uid = remap[uid]
    flags = np.zeros(n, dtype=bool)
    flags[first_pos] = True
    return SbsrMatrix(
        s.rows, s.cols, s.block_h, s.block_w, s.row_ptr, s.col_idx,
        flags, np.ascontiguousarray(store[used[order]]), new_uid[~flags],
    )


def update_block(s: SbsrMatrix, block_row: int, block_col: int, new_payload) -> SbsrMatrix:
    """Return a copy of ``s`` with one stored block's payload replaced.

    A payload already in the unique store is shared; a new one is stored.
    Payloads left without any user are dropped, and a first appearance that
    was overwritten hands its F flag to its earliest remaining sharer.
    """
    pos = _locate(s, block_row, block_col)
    if pos is None:
        raise KeyError(f"block ({block_row}, {block_col}) is not stored; insertion is unsupported")
    payload = np.asarray(new_payload)
    if payload.shape != (s.block_h, s.block_w):
        raise ValueError(f"payload shape {payload.shape} != block shape {(s.block_h, s.block_w)}")
    payload = _as_q16(payload)
    if not payload.any():
        raise ValueError("an all-zero payload would remove the block from the sparsity pattern")
    uid = s.uid.copy()
    hit = np.flatnonzero((s.unique_blocks == payload).all(axis=(1, 2)))
    store = s.unique_blocks
    if hit.size:
        uid[pos] = int(hit[0])
    else:
        uid[pos] = store.shape[0]
        store = np.concatenate([store, payload[None]])
    return _canonical(s, uid, store)


def spmv(s: BsrMatrix | SbsrMatrix, x, scale: float = 1.0) -> np.ndarray:
    """``scale * (A @ x)`` in float64.

    Each output row is the correctly rounded sum (``math.fsum``) of its
    products, so the result does not depend on block order or format.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (s.cols,):
        raise ValueError(f"vector of length {x.size} for a matrix with {s.cols} columns")
    xp = np.zeros(s.n_block_cols * s.block_w)
    xp[: s.cols] = x
    xb = xp.reshape(s.n_block_cols, s.block_w)
    prods = s.payloads().astype(np.float64) * xb[s.col_idx][:, None, :]
    row_of = (s.block_row_of[:, None] * s.block_h + np.arange(s.block_h))[:, :, None]
    row_of = np.broadcast_to(row_of, prods.shape).ravel()
    prods = prods.ravel()
    keep = (prods != 0) & (row_of < s.rows)
    row_of, prods = row_of[keep], prods[keep]
    order = np.argsort(row_of, kind="stable")
    row_of, prods = row_of[order], prods[order]
    bounds = np.searchsorted(row_of, np.arange(s.rows + 1))
    vals = prods.tolist()
    y = np.array([math.fsum(vals[bounds[r] : bounds[r + 1]]) for r in range(s.rows)])
    return y * scale


def serialize(s: BsrMatrix | SbsrMatrix) -> bytes:
    sbsr = isinstance(s, SbsrMatrix)
    n_unique = s.n_unique if sbsr else 0
    n_refs = int(s.refs.size) if sbsr else 0
    parts = [
        HEADER.pack(SBSR_MAGIC if sbsr else BSR_MAGIC, s.rows, s.cols, s.block_h, s.block_w,
                    s.n_blocks, n_unique, n_refs),
        s.row_ptr.astype("<u4").tobytes(),
        s.col_idx.astype("<u4").tobytes(),
    ]
    if sbsr:
        parts.append(np.packbits(s.flags).tobytes())
        parts.append(s.refs.astype("<u4").tobytes())
        parts.append(s.unique_blocks.astype("<i2").tobytes())
    else:
        parts.append(s.blocks.astype("<i2").tobytes())
    return b"".join(parts)


def deserialize(data: bytes) -> BsrMatrix | SbsrMatrix:
    if len(data) < HEADER_BYTES:
        raise FormatError(f"section of {len(data)} bytes is shorter than its header")
    magic, rows, cols, bh, bw, nb, nu, nr = HEADER.unpack_from(data)
    if magic not in (BSR_MAGIC, SBSR_MAGIC):
        raise FormatError(f"unknown section magic {magic!r}")
    if min(rows, cols, bh, bw) < 1:
        raise FormatError("extents and block dims must be >= 1")
    nbr = -(-rows // bh)
    sbsr = magic == SBSR_MAGIC
    pos = HEADER_BYTES

    def take(count: int, dtype: str) -> np.ndarray:
        nonlocal pos
        width = np.dtype(dtype).itemsize
        end = pos + count * width
        if end > len(data):
            raise FormatError(f"section truncated at byte {len(data)}, needed {end}")
        out = np.frombuffer(data, dtype=dtype, count=count, offset=pos).astype(
            np.int16 if dtype == "<i2" else np.int64
        )
        pos = end
        return out

    row_ptr = take(nbr + 1, "<u4")
    col_idx = take(nb, "<u4")
    if sbsr:
        n_flag_bytes = -(-nb // 8)
        if pos + n_flag_bytes > len(data):
            raise FormatError(f"section truncated in flags at byte {len(data)}")
        flags = np.unpackbits(np.frombuffer(data, np.uint8, n_flag_bytes, pos), count=nb).astype(bool)
        pos += n_flag_bytes
        refs = take(nr, "<u4")
        unique = take(nu * bh * bw, "<i2").reshape(nu, bh, bw)
        out = SbsrMatrix(rows, cols, bh, bw, row_ptr, col_idx, flags, unique, refs)
    else:
        blocks = take(nb * bh * bw, "<i2").reshape(nb, bh, bw)
        out = BsrMatrix(rows, cols, bh, bw, row_ptr, col_idx, blocks)
    if pos != len(data):
        raise FormatError(f"{len(data) - pos} trailing bytes after section")
    validate(out)
    return out
