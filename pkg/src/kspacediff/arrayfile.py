"""Portable complex array files, PGM export and metric tables.

File layout: one line of UTF-8 JSON header, a ``\\n``, then the payload of
interleaved little-endian float32 ``(re, im)`` pairs, row-major within a
grid, coil-major within an item, item-major across a dataset.
"""

from __future__ import annotations

import csv
import json
import os
import re
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable

import numpy as np

ARRAY_FORMAT = "kspacediff-array"
ARRAY_VERSION = 1
METRIC_COLUMNS = ["image_id", "pattern", "R", "method", "psnr_db", "ssim", "mse"]


class ArrayFileError(ValueError):
    pass


@dataclass
class ArrayFile:
    """``data`` has shape ``(count, coils, H, W)``; extra header keys ride along in ``meta``."""

    data: np.ndarray
    domain: str = "kspace"
    meta: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        data = np.asarray(self.data)
        if data.ndim == 2:
            data = data[None, None]
        elif data.ndim == 3:
            data = data[None]
        if data.ndim != 4:
            raise ArrayFileError(f"expected up to 4 dims (count, coils, H, W), got {data.shape}")
        if self.domain not in ("kspace", "image"):
            raise ArrayFileError(f"unknown domain {self.domain!r}")
        self.data = data.astype(np.complex64)

    @property
    def count(self) -> int:
        return self.data.shape[0]

    @property
    def dims(self) -> list[int]:
        return list(self.data.shape[1:])

    def header(self) -> dict[str, Any]:
        head = dict(self.meta)
        head.update({"format": ARRAY_FORMAT, "version": ARRAY_VERSION, "dims": self.dims, "dtype": "c64",
                     "domain": self.domain, "endianness": "little", "count": self.count})
        return head


def atomic_write_bytes(path: str | Path, payload: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def encode_array(af: ArrayFile) -> bytes:
    head = json.dumps(af.header(), sort_keys=True).encode()
    return head + b"\n" + af.data.astype("<c8").tobytes(order="C")


def write_array(path: str | Path, af: ArrayFile) -> None:
    atomic_write_bytes(path, encode_array(af))


def decode_array(raw: bytes) -> ArrayFile:
    head, sep, payload = raw.partition(b"\n")
    if not sep:
        raise ArrayFileError("missing header terminator")
    try:
        header = json.loads(head)
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise ArrayFileError(f"malformed header: {exc}") from None
    if not isinstance(header, dict) or header.get("format", ARRAY_FORMAT) != ARRAY_FORMAT:
        raise ArrayFileError("not a kspacediff array file")
    if header.get("endianness") != "little":
        raise ArrayFileError(f"unsupported endianness {header.get('endianness')!r}; only little-endian is read")
    if header.get("dtype") != "c64":
        raise ArrayFileError(f"unsupported dtype {header.get('dtype')!r}; expected 'c64'")
    dims = header.get("dims")
    if not (isinstance(dims, list) and len(dims) == 3 and all(isinstance(d, int) and d > 0 for d in dims)):
        raise ArrayFileError(f"bad dims {dims!r}")
    count = header.get("count", 1)
    if not isinstance(count, int) or count < 1:
        raise ArrayFileError(f"bad count {count!r}")
    expected = count * dims[0] * dims[1] * dims[2] * 8
    if len(payload) != expected:
        raise ArrayFileError(f"payload has {len(payload)} bytes, header implies {expected}")
    data = np.frombuffer(payload, dtype="<c8").reshape(count, *dims)
    meta = {k: v for k, v in header.items()
            if k not in ("format", "version", "dims", "dtype", "domain", "endianness", "count")}
    return ArrayFile(data.copy(), domain=header.get("domain", "kspace"), meta=meta)


def read_array(path: str | Path) -> ArrayFile:
    return decode_array(Path(path).read_bytes())


def write_pgm(path: str | Path, image: np.ndarray) -> None:
    """8-bit binary PGM, min-max normalized. For viewing only."""
    img = np.asarray(image, dtype=float)
    if img.ndim != 2:
        raise ValueError("PGM export needs a 2D real image")
    lo, hi = float(img.min()), float(img.max())
    scaled = np.zeros_like(img) if hi == lo else (img - lo) / (hi - lo)
    pix = np.clip(np.round(scaled * 255), 0, 255).astype(np.uint8)
    h, w = pix.shape
    atomic_write_bytes(path, f"P5\n{w} {h}\n255\n".encode() + pix.tobytes())


def read_pgm(path: str | Path) -> np.ndarray:
    raw = Path(path).read_bytes()
    m = re.match(rb"P5\s+(\d+)\s+(\d+)\s+(\d+)\s", raw)
    if m is None:
        raise ValueError("not a binary PGM")
    w, h, maxval = (int(g) for g in m.groups())
    if maxval != 255:
        raise ValueError("only 8-bit PGM supported")
    return np.frombuffer(raw, dtype=np.uint8, count=w * h, offset=m.end()).reshape(h, w)


def write_metrics_csv(path: str | Path, rows: Iterable[dict[str, Any]]) -> None:
    write_csv(path, METRIC_COLUMNS, rows)


def write_csv(path: str | Path, columns: list[str], rows: Iterable[dict[str, Any]]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with tempfile.NamedTemporaryFile("w", dir=path.parent, delete=False, newline="", suffix=".tmp") as fh:
        writer = csv.DictWriter(fh, fieldnames=columns)
        writer.writeheader()
        for row in rows:
            writer.writerow({k: row[k] for k in columns})
        tmp = fh.name
    os.replace(tmp, path)
