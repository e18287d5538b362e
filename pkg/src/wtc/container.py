"""The WTC1 container: a length-prefixed JSON manifest followed by raw payloads.

Layout (all integers little-endian)::

    offset 0   4 bytes   magic b"WTC1"
    offset 4   8 bytes   u64 manifest length M
    offset 12  M bytes   UTF-8 JSON manifest
    offset 12+M          payload area; manifest offsets are relative to here

Each manifest entry carries ``name``, ``shape``, ``dtype``, ``layer_kind``,
``encoding``, ``offset`` and ``length``. Payload per encoding:

* ``raw`` float32: ``prod(shape)`` little-endian float32 values.
* ``raw`` q16: one float32 scale, then ``prod(shape)`` int16 grid indices.
* ``bsr`` / ``sbsr`` / ``ehuff`` / ``vhuff`` (q16 only): one float32 scale,
  then the serialized section of the flattened matrix (see ``wtc.formats``
  and ``wtc.huffman``).
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from wtc.tensor import NUMPY_DTYPES, DenseTensor, matrix_shape

MAGIC = b"WTC1"
VERSION = 1
PREAMBLE = struct.Struct("<4sQ")
ENCODINGS = ("raw", "bsr", "sbsr", "ehuff", "vhuff")


class ContainerError(ValueError):
    pass


@dataclass(frozen=True)
class Record:
    """One manifest entry plus its payload bytes."""

    name: str
    shape: tuple[int, ...]
    dtype: str
    layer_kind: str
    encoding: str
    payload: bytes


def _raw_payload(t: DenseTensor) -> bytes:
    body = t.values.astype(NUMPY_DTYPES[t.dtype], copy=False).tobytes()
    if t.dtype == "q16":
        return struct.pack("<f", t.scale) + body
    return body


def tensor_record(t: DenseTensor, encoding: str = "raw", block_w: int | None = None) -> Record:
    """Serialize ``t``; encoded forms pack the flattened q16 matrix."""
    if encoding == "raw":
        payload = _raw_payload(t)
    else:
        if t.dtype != "q16":
            raise ContainerError(f"{t.name}: encoding {encoding!r} requires a q16 tensor")
        from wtc import formats, huffman
        from wtc.tensor import flatten_to_matrix

        m = flatten_to_matrix(t)
        w = block_w or 1
        if encoding == "bsr":
            section = formats.serialize(formats.to_bsr(m, 1, w))
        elif encoding == "sbsr":
            section = formats.serialize(formats.to_sbsr(m, 1, w))
        elif encoding == "ehuff":
            section = huffman.serialize(huffman.encode_elementwise(m))
        elif encoding == "vhuff":
            section = huffman.serialize(huffman.encode_vectorwise(m, w))
        else:
            raise ContainerError(f"{t.name}: unknown encoding {encoding!r}")
        payload = struct.pack("<f", t.scale) + section
    return Record(t.name, t.shape, t.dtype, t.layer_kind, encoding, payload)


def write_records(records: list[Record], path) -> None:
    names = [r.name for r in records]
    dupes = sorted({n for n in names if names.count(n) > 1})
    if dupes:
        raise ContainerError(f"duplicate tensor names: {', '.join(dupes)}")
    entries = []
    offset = 0
    for r in records:
        entries.append(
            {
                "name": r.name,
                "shape": list(r.shape),
                "dtype": r.dtype,
                "layer_kind": r.layer_kind,
                "encoding": r.encoding,
                "offset": offset,
                "length": len(r.payload),
            }
        )
        offset += len(r.payload)
    manifest = json.dumps(
        {"version": VERSION, "endianness": "little", "tensors": entries},
        separators=(",", ":"),
    ).encode("utf-8")
    with open(path, "wb") as f:
        f.write(PREAMBLE.pack(MAGIC, len(manifest)))
        f.write(manifest)
        for r in records:
            f.write(r.payload)


def save_container(tensors: list[DenseTensor], path) -> None:
    write_records([tensor_record(t) for t in tensors], path)


def read_records(path) -> list[Record]:
    data = Path(path).read_bytes()
    if len(data) < PREAMBLE.size:
        raise ContainerError(f"{path}: file too short for header ({len(data)} bytes)")
    magic, mlen = PREAMBLE.unpack_from(data)
    if magic != MAGIC:
        raise ContainerError(f"{path}: bad magic {magic!r} at byte 0")
    base = PREAMBLE.size + mlen
    if base > len(data):
        raise ContainerError(f"{path}: manifest of {mlen} bytes runs past end of file at byte {PREAMBLE.size}")
    try:
        manifest = json.loads(data[PREAMBLE.size:base].decode("utf-8"))
        entries = manifest["tensors"]
    except (UnicodeDecodeError, json.JSONDecodeError, KeyError, TypeError) as e:
        raise ContainerError(f"{path}: malformed manifest at byte {PREAMBLE.size}: {e}") from None
    if manifest.get("version") != VERSION:
        raise ContainerError(f"{path}: unsupported version {manifest.get('version')!r}")
    if manifest.get("endianness", "little") != "little":
        raise ContainerError(f"{path}: unsupported endianness {manifest.get('endianness')!r}")

    records = []
    seen = set()
    spans = []
    for i, e in enumerate(entries):
        name = e.get("name", f"#{i}") if isinstance(e, dict) else f"#{i}"
        try:
            shape = tuple(int(s) for s in e["shape"])
            dtype = e["dtype"]
            offset = int(e["offset"])
            length = int(e["length"])
            encoding = e.get("encoding", "raw")
            layer_kind = e.get("layer_kind", "fully_connected")
        except (KeyError, TypeError, ValueError) as err:
            raise ContainerError(f"{path}: tensor {name!r}: malformed manifest entry ({err})") from None
        pos = base + offset
        if name in seen:
            raise ContainerError(f"{path}: duplicate tensor name {name!r}")
        seen.add(name)
        if dtype not in NUMPY_DTYPES:
            raise ContainerError(f"{path}: tensor {name!r} at byte {pos}: unknown dtype {dtype!r}")
        if encoding not in ENCODINGS:
            raise ContainerError(f"{path}: tensor {name!r} at byte {pos}: unknown encoding {encoding!r}")
        if offset < 0 or length < 0 or pos + length > len(data):
            raise ContainerError(
                f"{path}: tensor {name!r}: payload [{pos}, {pos + length}) exceeds file size {len(data)}"
            )
        spans.append((offset, offset + length, name))
        records.append(Record(name, shape, dtype, layer_kind, encoding, data[pos : pos + length]))
    spans.sort()
    for (_, end, a), (start, _, b) in zip(spans, spans[1:]):
        if start < end:
            raise ContainerError(f"{path}: payloads of {a!r} and {b!r} overlap at byte {base + start}")
    return records


def record_to_tensor(r: Record, where: str = "") -> DenseTensor:
    prefix = f"{where}: " if where else ""
    n = int(np.prod(r.shape)) if r.shape else 0
    try:
        if r.encoding == "raw":
            itemsize = NUMPY_DTYPES[r.dtype].itemsize
            head = 4 if r.dtype == "q16" else 0
            expect = head + n * itemsize
            if len(r.payload) != expect:
                raise ContainerError(
                    f"{prefix}tensor {r.name!r}: shape {list(r.shape)} needs {expect} payload bytes, "
                    f"found {len(r.payload)}"
                )
            scale = struct.unpack_from("<f", r.payload)[0] if head else 1.0
            values = np.frombuffer(r.payload, dtype=NUMPY_DTYPES[r.dtype], offset=head)
            return DenseTensor(r.name, r.shape, r.dtype, values.copy(), r.layer_kind, scale)

        from wtc import formats, huffman

        if len(r.payload) < 4:
            raise ContainerError(f"{prefix}tensor {r.name!r}: truncated {r.encoding} payload")
        scale = struct.unpack_from("<f", r.payload)[0]
        section = r.payload[4:]
        if r.encoding in ("bsr", "sbsr"):
            m = formats.decode(formats.deserialize(section))
        else:
            m = huffman.decode(huffman.deserialize(section))
        probe = DenseTensor(r.name, r.shape, "q16", np.zeros(n, np.int16), r.layer_kind, scale)
        if m.shape != matrix_shape(probe):
            raise ContainerError(
                f"{prefix}tensor {r.name!r}: section decodes to {m.shape}, manifest shape {list(r.shape)}"
            )
        return DenseTensor(r.name, r.shape, "q16", m.reshape(-1), r.layer_kind, scale)
    except ContainerError:
        raise
    except ValueError as e:
        raise ContainerError(f"{prefix}tensor {r.name!r}: {e}") from None


def load_container(path) -> list[DenseTensor]:
    """Read every tensor, decoding packed sections back to q16 tensors."""
    return [record_to_tensor(r, str(path)) for r in read_records(path)]
