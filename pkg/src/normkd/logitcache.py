"""Binary logit-cache files.

Little-endian layout, independent of host byte order:

    offset 0   magic  b"NKDL"
    offset 4   u32    version (= 1)
    offset 8   u32    N (record count)
    offset 12  u32    C (class count)
    offset 16  N records of: u32 sample_id, u32 label, C float32 logits

Total size is exactly 16 + N*(8 + 4*C) bytes.  Logits are stored as
float32 (the serialization boundary); reading widens them to float64
exactly, so write-read-write reproduces the file byte for byte.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import ContractError, FileFormatError
from .ioutil import atomic_write_bytes
from .logitstats import LogitRecord

MAGIC = b"NKDL"
VERSION = 1
_HEADER = struct.Struct("<4sIII")


def write_logit_cache(path: Path | str, records: list[LogitRecord]) -> None:
    if not records:
        raise ContractError("refusing to write an empty logit cache")
    c = records[0].logits.shape[0]
    parts = [_HEADER.pack(MAGIC, VERSION, len(records), c)]
    for i, rec in enumerate(records):
        if rec.logits.shape[0] != c:
            raise ContractError(
                f"record {i} has {rec.logits.shape[0]} classes, expected {c}"
            )
        parts.append(struct.pack("<II", rec.sample_id, rec.label))
        parts.append(rec.logits.astype("<f4").tobytes())
    atomic_write_bytes(path, b"".join(parts))


def read_logit_cache(path: Path | str) -> list[LogitRecord]:
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise FileFormatError(f"cannot read cache {path}: {exc}") from exc
    if len(data) < _HEADER.size:
        raise FileFormatError(
            f"{path}: truncated header, expected {_HEADER.size} bytes, got {len(data)}"
        )
    magic, version, n, c = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise FileFormatError(f"{path}: bad magic {magic!r} at offset 0")
    if version != VERSION:
        raise FileFormatError(f"{path}: unsupported version {version} at offset 4")
    if c < 1:
        raise FileFormatError(f"{path}: class count must be positive, got {c}")
    expected = _HEADER.size + n * (8 + 4 * c)
    if len(data) != expected:
        raise FileFormatError(
            f"{path}: expected {expected} bytes for {n} records of {c} classes, "
            f"got {len(data)}"
        )
    rec_dtype = np.dtype(
        [("sample_id", "<u4"), ("label", "<u4"), ("logits", "<f4", (c,))]
    )
    raw = np.frombuffer(data, dtype=rec_dtype, count=n, offset=_HEADER.size)
    records = []
    for i in range(n):
        try:
            records.append(
                LogitRecord(
                    int(raw["sample_id"][i]),
                    int(raw["label"][i]),
                    raw["logits"][i].astype(np.float64),
                )
            )
        except ContractError as exc:
            offset = _HEADER.size + i * (8 + 4 * c)
            raise FileFormatError(f"{path}: bad record {i} at offset {offset}: {exc}") from exc
    return records
