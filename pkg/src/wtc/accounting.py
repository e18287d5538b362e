"""Bit-exact storage sizes for dense, BSR, SBSR and Huffman representations.

Two width policies:

``theoretical``
    each index, reference or coordinate field costs ``ceil(log2(domain))``
    bits (at least 1); flags cost 1 bit each and Huffman payloads their exact
    bit length.
``fixed32``
    every index, reference and coordinate is a u32; bit-packed fields
    (flags, dictionary codes, Huffman payload) are rounded up to whole bytes.
    Totals equal the serialized section size in bits, header excluded.

Component keys: BSR ``BSR_idx``, ``BSR_blocks``; SBSR ``S_flag``,
``S_block_pointer``, ``S_idx``, ``S_unique_blocks``; Huffman ``H_Idx``,
``H_dict``, ``payload``; dense ``dense``.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from typing import Literal, Sequence

from wtc.formats import BsrMatrix, SbsrMatrix
from wtc.huffman import EncodedTensor

VALUE_BITS = 16
LENGTH_FIELD_BITS = 8
MIB = 1 << 20


@dataclass(frozen=True)
class WidthPolicy:
    """How many bits each index/pointer/coordinate field costs.

    ``pointer`` picks what a repeat reference addresses: the unique-block
    store (``unique``) or the stored-block position of the first appearance
    (``location``). Only the width changes; the structure is the same.
    """

    mode: Literal["theoretical", "fixed32"] = "fixed32"
    pointer: Literal["unique", "location"] = "unique"

    def __post_init__(self):
        if self.mode not in ("theoretical", "fixed32"):
            raise ValueError(f"unknown width policy {self.mode!r}")
        if self.pointer not in ("unique", "location"):
            raise ValueError(f"unknown pointer convention {self.pointer!r}")

    def field_bits(self, domain: int) -> int:
        """Bits for a field taking ``domain`` distinct values."""
        if self.mode == "fixed32":
            return 32
        return max(1, (max(domain, 1) - 1).bit_length())

    def packed_bits(self, nbits: int) -> int:
        if self.mode == "fixed32":
            return -(-nbits // 8) * 8
        return nbits


THEORETICAL = WidthPolicy("theoretical")
FIXED32 = WidthPolicy("fixed32")


@dataclass(frozen=True)
class SizeBreakdown:
    components: dict[str, int] = field(default_factory=dict)

    def __post_init__(self):
        for k, v in self.components.items():
            if v < 0:
                raise ValueError(f"negative size for component {k!r}")

    @property
    def total_bits(self) -> int:
        return sum(self.components.values())

    @property
    def total_bytes(self) -> float:
        return self.total_bits / 8

    def __getitem__(self, key: str) -> int:
        return self.components[key]


def index_bits(s: BsrMatrix | SbsrMatrix, p: WidthPolicy) -> int:
    """Row pointers plus column indices."""
    rp = (s.n_block_rows + 1) * p.field_bits(s.n_blocks + 1)
    ci = s.n_blocks * p.field_bits(s.n_block_cols)
    return rp + ci


def size_dense(n_elements: int, element_bits: int = 32) -> SizeBreakdown:
    return SizeBreakdown({"dense": n_elements * element_bits})


def size_bsr(b: BsrMatrix, p: WidthPolicy = FIXED32) -> SizeBreakdown:
    block_bits = b.block_h * b.block_w * VALUE_BITS
    return SizeBreakdown({"BSR_idx": index_bits(b, p), "BSR_blocks": b.n_blocks * block_bits})


def ref_bits(s: SbsrMatrix, p: WidthPolicy) -> int:
    domain = s.n_unique if p.pointer == "unique" else s.n_blocks
    return p.field_bits(domain)


def size_sbsr(s: SbsrMatrix, p: WidthPolicy = FIXED32) -> SizeBreakdown:
    block_bits = s.block_h * s.block_w * VALUE_BITS
    n_refs = int(s.refs.size)
    return SizeBreakdown(
        {
            "S_flag": p.packed_bits(s.n_blocks),
            "S_block_pointer": n_refs * ref_bits(s, p) if n_refs else 0,
            "S_idx": index_bits(s, p),
            "S_unique_blocks": s.n_unique * block_bits,
        }
    )


def coord_bits(e: EncodedTensor, p: WidthPolicy) -> int:
    return p.field_bits(max(e.rows, e.n_block_cols))


def dict_bits(e: EncodedTensor, p: WidthPolicy) -> int:
    """Per entry: symbol payload, the code itself, an 8-bit length field."""
    n = len(e.codebook)
    fixed = n * (VALUE_BITS * e.width + LENGTH_FIELD_BITS)
    return fixed + p.packed_bits(sum(e.codebook.lengths))


def size_huffman(e: EncodedTensor, p: WidthPolicy = FIXED32) -> SizeBreakdown:
    return SizeBreakdown(
        {
            "H_Idx": e.n_codes * coord_bits(e, p) * 2,
            "H_dict": dict_bits(e, p),
            "payload": p.packed_bits(e.payload_bits),
        }
    )


def _total(x) -> float:
    return x.total_bits if isinstance(x, SizeBreakdown) else float(x)


def _ratio(num, den) -> float:
    n, d = _total(num), _total(den)
    if d <= 0:
        raise ZeroDivisionError("compaction ratio with a zero-size denominator")
    return n / d


def cr_over_bsr(bsr, sbsr) -> float:
    """BSR size over SBSR size (breakdowns or plain numbers in the same unit)."""
    return _ratio(bsr, sbsr)


def cr_huffman(elem, other) -> float:
    """Element-wise Huffman size over ``other`` (vector-wise Huffman or SBSR)."""
    return _ratio(elem, other)


BREAKDOWN_FIELDS = ("label", "component", "bits", "percent")


def breakdown_report(items: Sequence[tuple[str, SizeBreakdown]]) -> list[dict]:
    """One row per (item, component) with its share of the item total."""
    rows = []
    for label, sb in items:
        total = sb.total_bits
        for comp, bits in sb.components.items():
            pct = 100.0 * bits / total if total else 0.0
            rows.append({"label": label, "component": comp, "bits": bits, "percent": pct})
    return rows


SIZE_FIELDS = ("layer", "format", "component", "bits", "bytes", "cr_over_bsr", "cr_vs_elem_huffman")


def size_rows(layer: str, sizes: dict[str, SizeBreakdown]) -> list[dict]:
    """Long-form rows: every component of every format plus a ``total`` row.

    Ratios are against the ``bsr`` and ``ehuff`` entries of ``sizes`` and are
    left empty when either is missing or zero.
    """
    bsr = sizes.get("bsr")
    ehuff = sizes.get("ehuff")
    rows = []
    for fmt, sb in sizes.items():
        total = sb.total_bits
        cr_b = bsr.total_bits / total if bsr is not None and total and bsr.total_bits else None
        cr_e = ehuff.total_bits / total if ehuff is not None and total and ehuff.total_bits else None
        entries = list(sb.components.items()) + [("total", total)]
        for comp, bits in entries:
            rows.append(
                {
                    "layer": layer,
                    "format": fmt,
                    "component": comp,
                    "bits": bits,
                    "bytes": bits / 8,
                    "cr_over_bsr": cr_b,
                    "cr_vs_elem_huffman": cr_e,
                }
            )
    return rows


def _cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(round(v, 6))
    return str(v)


def render_rows(rows: Sequence[dict], fields: Sequence[str], fmt: str = "csv") -> str:
    """Serialize report rows with a stable column order."""
    if fmt == "json":
        return json.dumps([{k: r.get(k) for k in fields} for r in rows], indent=2) + "\n"
    if fmt != "csv":
        raise ValueError(f"unknown report format {fmt!r}")
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(fields)
    for r in rows:
        w.writerow([_cell(r.get(k)) for k in fields])
    return buf.getvalue()
