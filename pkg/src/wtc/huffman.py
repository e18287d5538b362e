"""Canonical Huffman coding of nonzero matrix elements or 1 x width vectors.

Serialized section layout (little-endian)::

    header   32 bytes: magic b"HUF1", u8 kind (0 element, 1 vector), 3 pad
             bytes, then u32 rows, cols, width, n_dict, n_coords, payload_bits
    lengths  u8 x n_dict, code length per dictionary entry (canonical order)
    symbols  int16 x (n_dict * width)
    codes    dictionary codes back to back, MSB-first, padded to a byte
    coords   u32 x (2 * n_coords): (row, column) or (row, block column)
    payload  ceil(payload_bits / 8) bytes of concatenated codes, MSB-first
"""

from __future__ import annotations

import struct
from collections.abc import Hashable, Mapping, Sequence
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Literal

import numpy as np

HEADER = struct.Struct("<4sB3x6I")
HEADER_BYTES = HEADER.size
MAGIC = b"HUF1"
_TABLE_BITS = 16
_CHUNK_BITS = 1 << 20


class HuffmanError(ValueError):
    pass


@dataclass(frozen=True)
class Codebook:
    """Symbols in canonical (length, symbol) order with their codes."""

    symbols: tuple
    lengths: tuple[int, ...]
    codes: tuple[int, ...]
    kind: Literal["element", "vector"] = "element"
    width: int = 1
    index: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "index", {s: i for i, s in enumerate(self.symbols)})

    def __len__(self) -> int:
        return len(self.symbols)

    def code_of(self, symbol) -> str:
        i = self.index[symbol]
        return format(self.codes[i], f"0{self.lengths[i]}b")

    def as_dict(self) -> dict:
        return {s: self.code_of(s) for s in self.symbols}

    def kraft_sum(self) -> Fraction:
        return sum((Fraction(1, 1 << n) for n in self.lengths), Fraction(0))

    @property
    def max_length(self) -> int:
        return max(self.lengths, default=0)

    @classmethod
    def from_lengths(cls, lengths: Mapping[Hashable, int], kind="element", width=1) -> "Codebook":
        """Assign canonical codes: ascending (length, symbol), consecutive integers."""
        symbols = sorted(lengths)
        return cls.from_ranked(symbols, [lengths[s] for s in symbols], kind, width)

    @classmethod
    def from_ranked(cls, symbols: Sequence, lengths: Sequence[int], kind="element", width=1) -> "Codebook":
        """Canonical codebook for ``symbols`` already in ascending order."""
        lens = np.asarray(lengths, dtype=np.int64)
        order = np.argsort(lens, kind="stable")
        lens = lens[order]
        lmax = int(lens[-1]) if lens.size else 0
        if lmax <= 63:
            # Left-aligned codes are the running Kraft sum; shift back to length.
            step = np.left_shift(np.uint64(1), (lmax - lens).astype(np.uint64))
            left = np.concatenate([[np.uint64(0)], np.cumsum(step[:-1], dtype=np.uint64)])
            codes = (left >> (lmax - lens).astype(np.uint64)).tolist()
        else:
            codes, acc = [], 0
            for n in lens.tolist():
                codes.append(acc >> (lmax - n))
                acc += 1 << (lmax - n)
        return cls(tuple(symbols[i] for i in order.tolist()), tuple(lens.tolist()), tuple(codes), kind, width)


def _ranked_lengths(counts: Sequence[int]) -> list[int]:
    """Huffman code lengths for positive counts listed in symbol order.

    Two-queue merge: leaves sorted by (count, rank), internal nodes in
    creation order (their weights never decrease). Taking the smaller
    (weight, id) front each time is the order a heap keyed on (weight, id)
    would give, since internal ids n, n+1, ... exceed every leaf rank.
    """
    n = len(counts)
    if n == 1:
        return [1]
    leaves = np.argsort(np.asarray(counts, dtype=np.int64), kind="stable").tolist()
    leaf_w = [int(counts[i]) for i in leaves]
    node_w: list[int] = []
    parent = [0] * (2 * n - 1)
    li = ni = 0
    for next_id in range(n, 2 * n - 1):
        if ni < next_id - n and (li == n or node_w[ni] < leaf_w[li]):
            w1, x = node_w[ni], n + ni
            ni += 1
        else:
            w1, x = leaf_w[li], leaves[li]
            li += 1
        if ni < next_id - n and (li == n or node_w[ni] < leaf_w[li]):
            w2, y = node_w[ni], n + ni
            ni += 1
        else:
            w2, y = leaf_w[li], leaves[li]
            li += 1
        parent[x] = parent[y] = next_id
        node_w.append(w1 + w2)
    depth = [0] * (2 * n - 1)
    for node in range(2 * n - 3, -1, -1):
        depth[node] = depth[parent[node]] + 1
    return depth[:n]


def code_lengths(freqs: Mapping[Hashable, int]) -> dict:
    """Huffman code length per symbol.

    Merges the two lightest subtrees first; equal weights prefer leaves in
    symbol order, then older internal nodes. A lone symbol gets length 1.
    """
    if not freqs:
        raise HuffmanError("cannot build a code for an empty alphabet")
    symbols = sorted(freqs)
    for s in symbols:
        if freqs[s] <= 0:
            raise HuffmanError(f"symbol {s!r} has non-positive count {freqs[s]}")
    return dict(zip(symbols, _ranked_lengths([freqs[s] for s in symbols])))


def build_codebook(freqs: Mapping[Hashable, int], kind="element", width=1) -> Codebook:
    return Codebook.from_lengths(code_lengths(freqs), kind, width)


def payload_bits(cb: Codebook, freqs: Mapping[Hashable, int]) -> int:
    return sum(cb.lengths[cb.index[s]] * c for s, c in freqs.items())


@dataclass(frozen=True, eq=False)
class EncodedTensor:
    kind: Literal["element", "vector"]
    rows: int
    cols: int
    width: int
    codebook: Codebook
    coords: np.ndarray  # (n, 2): row, column (element) or block column (vector)
    payload: bytes
    payload_bits: int

    @property
    def n_codes(self) -> int:
        return int(self.coords.shape[0])

    @property
    def n_block_cols(self) -> int:
        return -(-self.cols // self.width)


def _pack_codes(codes: np.ndarray, lengths: np.ndarray) -> tuple[bytes, int]:
    total = int(lengths.sum())
    if total == 0:
        return b"", 0
    lmax = int(lengths.max())
    if lmax > 63:
        bits = "".join(format(int(c), f"0{int(n)}b") for c, n in zip(codes, lengths))
        return _pack_str(bits), total
    chunks = []
    step = max(1, _CHUNK_BITS // lmax)
    j = np.arange(lmax)
    for lo in range(0, codes.size, step):
        c = codes[lo : lo + step].astype(np.uint64)[:, None]
        n = lengths[lo : lo + step].astype(np.int64)[:, None]
        shift = n - 1 - j
        bits = (c >> np.maximum(shift, 0).astype(np.uint64)) & np.uint64(1)
        chunks.append(bits[shift >= 0].astype(np.uint8))
    return np.packbits(np.concatenate(chunks)).tobytes(), total


def _pack_str(bits: str) -> bytes:
    arr = np.frombuffer(bits.encode("ascii"), dtype=np.uint8) - ord("0")
    return np.packbits(arr).tobytes()


def _tile(m: np.ndarray, width: int) -> np.ndarray:
    rows, cols = m.shape
    nbc = -(-cols // width)
    padded = np.zeros((rows, nbc * width), dtype=np.int16)
    padded[:, :cols] = m
    return padded.reshape(rows, nbc, width)


def _encode(m, width: int, kind) -> EncodedTensor:
    from wtc.formats import _as_q16

    if width < 1:
        raise ValueError(f"width must be >= 1, got {width}")
    m = _as_q16(m)
    tiles = _tile(m, width)
    r, c = np.nonzero(tiles.any(axis=2))
    coords = np.stack([r, c], axis=1).astype(np.int64)
    vecs = tiles[r, c]
    if vecs.shape[0] == 0:
        cb = Codebook((), (), (), kind, width)
        return EncodedTensor(kind, m.shape[0], m.shape[1], width, cb, coords, b"", 0)
    if width == 1:
        uniq, inverse, counts = np.unique(vecs[:, 0], return_inverse=True, return_counts=True)
        uniq = uniq[:, None]
    else:
        uniq, inverse, counts = np.unique(vecs, axis=0, return_inverse=True, return_counts=True)
    inverse = inverse.reshape(-1)
    # np.unique sorts rows lexicographically, which is tuple order, so the
    # rows are already in symbol rank order.
    syms = list(map(tuple, uniq.tolist()))
    lengths = _ranked_lengths(counts.tolist())
    cb = Codebook.from_ranked(syms, lengths, kind, width)
    pos = np.empty(len(syms), dtype=np.int64)
    pos[np.argsort(np.asarray(lengths), kind="stable")] = np.arange(len(syms))
    code_arr = np.array(cb.codes, dtype=object if cb.max_length > 63 else np.uint64)
    len_arr = np.array(cb.lengths, dtype=np.int64)
    payload, nbits = _pack_codes(code_arr[pos[inverse]], len_arr[pos[inverse]])
    return EncodedTensor(kind, m.shape[0], m.shape[1], width, cb, coords, payload, nbits)


def encode_elementwise(m) -> EncodedTensor:
    """One code per nonzero element; positions kept as (row, col) pairs."""
    return _encode(m, 1, "element")


def encode_vectorwise(m, width: int) -> EncodedTensor:
    """One code per nonzero 1 x width vector (right edge zero padded)."""
    return _encode(m, width, "vector")


def _decode_symbols(cb: Codebook, payload: bytes, nbits: int, count: int) -> np.ndarray:
    """Dictionary positions of the ``count`` codes packed into ``nbits`` bits."""
    if len(payload) * 8 < nbits:
        raise HuffmanError(f"payload holds {len(payload) * 8} bits, header claims {nbits}")
    if count == 0:
        if nbits:
            raise HuffmanError(f"{nbits} payload bits but no coordinates")
        return np.zeros(0, dtype=np.int64)
    bits = np.unpackbits(np.frombuffer(payload, dtype=np.uint8), count=nbits)
    if cb.max_length <= _TABLE_BITS:
        return _decode_with_table(cb, bits, nbits, count)
    return _decode_bitwise(cb, bits, nbits, count)


def _decode_with_table(cb: Codebook, bits: np.ndarray, nbits: int, count: int) -> np.ndarray:
    lmax = cb.max_length
    # Indexed by the next lmax bits: dictionary position and code length.
    # Left-aligned canonical codes increase, so each index falls in the
    # interval of the last code start at or below it (if that code covers it).
    lens = np.array(cb.lengths, dtype=np.int64)
    lo = np.array(cb.codes, dtype=np.int64) << (lmax - lens)
    t = np.arange(1 << lmax, dtype=np.int64)
    owner = np.searchsorted(lo, t, side="right") - 1
    covered = t < lo[owner] + (1 << (lmax - lens[owner]))
    table_sym = np.where(covered, owner, -1)
    table_len = np.where(covered, lens[owner], nbits + lmax + 1)
    padded = np.concatenate([bits, np.zeros(lmax, dtype=np.uint8)]).astype(np.int64)
    # Per chunk, look up the code starting at every bit offset at once, then
    # follow offset -> offset + length by pointer doubling: after k rounds the
    # path holds the first 2^k code starts and ``jump`` skips 2^k codes.
    starts = []
    parts = []
    pos = 0
    found = 0
    while pos < nbits and found <= count:
        base = pos
        end = min(nbits, base + _CHUNK_BITS)
        size = end - base
        win = np.zeros(size, dtype=np.int64)
        for j in range(lmax):
            win = (win << 1) | padded[base + j : end + j]
        step = np.arange(size) + table_len[win]
        jump = np.append(np.minimum(step, size), size)
        path = np.array([pos - base], dtype=np.int64)
        while path[-1] < size:
            path = np.concatenate([path, jump[path]])
            jump = jump[jump]
        path = path[path < size]
        pos = base + int(step[path[-1]])
        starts.append(path + base)
        parts.append(table_sym[win[path]])
        found += path.size
    syms = np.concatenate(parts)
    offsets = np.concatenate(starts)
    bad = np.flatnonzero(syms < 0)
    if bad.size:
        raise HuffmanError(f"no code matches the bits at offset {offsets[bad[0]]}")
    if pos > nbits:
        raise HuffmanError("payload truncated in the middle of a code")
    if syms.size < count:
        raise HuffmanError(f"payload exhausted after {syms.size} of {count} codes")
    if syms.size > count:
        raise HuffmanError(f"{nbits - offsets[count]} undecoded bits after the last code")
    return syms


def _decode_bitwise(cb: Codebook, bits: np.ndarray, nbits: int, count: int) -> np.ndarray:
    """Slow path for codes too long for a lookup table."""
    lookup = {(n, c): i for i, (c, n) in enumerate(zip(cb.codes, cb.lengths))}
    blist = bits.tolist()
    out = []
    pos = 0
    for _ in range(count):
        code = n = 0
        while True:
            if pos >= nbits:
                raise HuffmanError(f"payload exhausted after {len(out)} of {count} codes" if n == 0
                                   else "payload truncated in the middle of a code")
            code = (code << 1) | blist[pos]
            pos += 1
            n += 1
            hit = lookup.get((n, code))
            if hit is not None:
                out.append(hit)
                break
            if n > cb.max_length:
                raise HuffmanError(f"no code matches the bits before offset {pos}")
    if pos != nbits:
        raise HuffmanError(f"{nbits - pos} undecoded bits after the last code")
    return np.array(out, dtype=np.int64)


def decode(e: EncodedTensor) -> np.ndarray:
    """Rebuild the dense int16 matrix from codes and coordinates."""
    coords = np.asarray(e.coords, dtype=np.int64).reshape(-1, 2)
    if coords.size and (
        coords[:, 0].min() < 0 or coords[:, 0].max() >= e.rows
        or coords[:, 1].min() < 0 or coords[:, 1].max() >= e.n_block_cols
    ):
        raise HuffmanError("coordinate outside the matrix")
    if len(e.codebook) == 0 and coords.shape[0]:
        raise HuffmanError(f"{coords.shape[0]} coordinates but an empty dictionary")
    idx = _decode_symbols(e.codebook, e.payload, e.payload_bits, coords.shape[0])
    tiles = np.zeros((e.rows, e.n_block_cols, e.width), dtype=np.int16)
    if idx.size:
        table = np.array(e.codebook.symbols, dtype=np.int16).reshape(len(e.codebook), e.width)
        tiles[coords[:, 0], coords[:, 1]] = table[idx]
    return np.ascontiguousarray(tiles.reshape(e.rows, -1)[:, : e.cols])


def dictionary_code_bits(cb: Codebook) -> int:
    return sum(cb.lengths)


def serialize(e: EncodedTensor) -> bytes:
    cb = e.codebook
    if cb.max_length > 255:
        raise HuffmanError("code lengths above 255 bits cannot be serialized")
    codes_bytes, _ = _pack_codes(
        np.array(cb.codes, dtype=object if cb.max_length > 63 else np.uint64),
        np.array(cb.lengths, dtype=np.int64),
    )
    parts = [
        HEADER.pack(MAGIC, 0 if e.kind == "element" else 1, e.rows, e.cols, e.width,
                    len(cb), e.n_codes, e.payload_bits),
        np.array(cb.lengths, dtype=np.uint8).tobytes(),
        np.array(cb.symbols, dtype="<i2").reshape(-1).tobytes(),
        codes_bytes,
        np.asarray(e.coords).astype("<u4").reshape(-1).tobytes(),
        e.payload,
    ]
    return b"".join(parts)


def deserialize(data: bytes) -> EncodedTensor:
    if len(data) < HEADER_BYTES:
        raise HuffmanError(f"section of {len(data)} bytes is shorter than its header")
    magic, kind, rows, cols, width, nd, nc, nbits = HEADER.unpack_from(data)
    if magic != MAGIC:
        raise HuffmanError(f"unknown section magic {magic!r}")
    if kind not in (0, 1) or min(rows, cols, width) < 1:
        raise HuffmanError("invalid header fields")
    pos = HEADER_BYTES

    def take(nbytes: int) -> bytes:
        nonlocal pos
        if pos + nbytes > len(data):
            raise HuffmanError(f"section truncated at byte {len(data)}, needed {pos + nbytes}")
        chunk = data[pos : pos + nbytes]
        pos += nbytes
        return chunk

    lengths = np.frombuffer(take(nd), dtype=np.uint8).astype(np.int64).tolist()
    sym_arr = np.frombuffer(take(2 * nd * width), dtype="<i2").reshape(nd, width)
    symbols = [tuple(int(v) for v in row) for row in sym_arr]
    if len(set(symbols)) != nd or any(n < 1 for n in lengths):
        raise HuffmanError("dictionary has duplicate symbols or zero-length codes")
    code_bits = sum(lengths)
    stored_codes = take(-(-code_bits // 8))
    kind_name = "element" if kind == 0 else "vector"
    cb = Codebook.from_lengths(dict(zip(symbols, lengths)), kind_name, width)
    if list(cb.symbols) != symbols:
        raise HuffmanError("dictionary is not in canonical order")
    expect, _ = _pack_codes(
        np.array(cb.codes, dtype=object if cb.max_length > 63 else np.uint64),
        np.array(cb.lengths, dtype=np.int64),
    )
    if expect != stored_codes or (nd > 1 and cb.kraft_sum() > 1):
        raise HuffmanError("dictionary codes are not a canonical prefix code")
    coords = np.frombuffer(take(8 * nc), dtype="<u4").astype(np.int64).reshape(nc, 2)
    payload = take(-(-nbits // 8))
    if pos != len(data):
        raise HuffmanError(f"{len(data) - pos} trailing bytes after section")
    return EncodedTensor(kind_name, rows, cols, width, cb, coords, payload, nbits)
