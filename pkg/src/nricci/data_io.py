"""Dataset loading, model serialization, and report persistence.

MNIST is read from the classic IDX files (gzip-compressed files are
accepted transparently). Models round-trip bit-exactly through a small
binary container: a magic tag, a format version, a JSON architecture
header, then the raw float64 parameter payload. All writers go through
an atomic temp-file-and-rename path so a crashed run never leaves a
half-written artifact behind.
"""

from __future__ import annotations

import gzip
import json
import os
import struct
import tempfile
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

MODEL_MAGIC = b"NRCM"
MODEL_VERSION = 1

# 12 significant digits everywhere a float lands in a CSV
FLOAT_FMT = "%.12g"

_IDX_IMAGES_MAGIC = 2051
_IDX_LABELS_MAGIC = 2049

_SPLIT_PREFIX = {"train": "train", "test": "t10k"}


@dataclass(frozen=True)
class Dataset:
    """An image-classification split: flattened images plus labels.

    images: float64 array of shape (n, d) with values in [0, 1]
    labels: int64 array of shape (n,)
    split:  which split this came from ("train" or "test")
    """

    images: np.ndarray
    labels: np.ndarray
    split: str

    def __post_init__(self):
        if self.images.ndim != 2:
            raise ValueError(f"images must be 2-d, got shape {self.images.shape}")
        if self.labels.ndim != 1:
            raise ValueError(f"labels must be 1-d, got shape {self.labels.shape}")
        if self.images.shape[0] != self.labels.shape[0]:
            raise ValueError(
                f"images/labels count mismatch: {self.images.shape[0]} images "
                f"vs {self.labels.shape[0]} labels"
            )

    @property
    def n(self) -> int:
        return self.images.shape[0]


def _read_bytes(path: Path) -> bytes:
    """Read a file fully, decompressing if it is gzip (by suffix or header)."""
    raw = path.read_bytes()
    if raw[:2] == b"\x1f\x8b":
        return gzip.decompress(raw)
    return raw


def _resolve_idx(data_dir: Path, stem: str) -> Path:
    for name in (stem, stem + ".gz"):
        p = data_dir / name
        if p.is_file():
            return p
    raise FileNotFoundError(
        f"IDX file not found: {data_dir / stem} (also tried .gz); "
        f"expected the standard MNIST files under {data_dir}"
    )


def _parse_idx_images(path: Path) -> np.ndarray:
    buf = _read_bytes(path)
    if len(buf) < 16:
        raise ValueError(f"{path}: truncated IDX image file ({len(buf)} bytes)")
    magic, count, rows, cols = struct.unpack(">iiii", buf[:16])
    if magic != _IDX_IMAGES_MAGIC:
        raise ValueError(
            f"{path}: bad IDX magic {magic}, expected {_IDX_IMAGES_MAGIC} for images"
        )
    expect = 16 + count * rows * cols
    if len(buf) != expect:
        raise ValueError(
            f"{path}: payload size mismatch, header promises {expect} bytes "
            f"but file has {len(buf)}"
        )
    pixels = np.frombuffer(buf, dtype=np.uint8, offset=16)
    return pixels.reshape(count, rows * cols)


def _parse_idx_labels(path: Path) -> np.ndarray:
    buf = _read_bytes(path)
    if len(buf) < 8:
        raise ValueError(f"{path}: truncated IDX label file ({len(buf)} bytes)")
    magic, count = struct.unpack(">ii", buf[:8])
    if magic != _IDX_LABELS_MAGIC:
        raise ValueError(
            f"{path}: bad IDX magic {magic}, expected {_IDX_LABELS_MAGIC} for labels"
        )
    if len(buf) != 8 + count:
        raise ValueError(
            f"{path}: payload size mismatch, header promises {8 + count} bytes "
            f"but file has {len(buf)}"
        )
    return np.frombuffer(buf, dtype=np.uint8, offset=8)


def load_mnist(data_dir, split: str = "test") -> Dataset:
    """Load one MNIST split from ``data_dir``.

    Pixels are scaled to [0, 1] as float64 and flattened row-major to
    (n, 784). ``split`` is "train" or "test". Plain and .gz files are both
    accepted; a missing file, a wrong magic number, or an image/label
    count mismatch raises with the offending path in the message.
    """
    if split not in _SPLIT_PREFIX:
        raise ValueError(f"unknown split {split!r}, expected 'train' or 'test'")
    data_dir = Path(data_dir)
    prefix = _SPLIT_PREFIX[split]
    img_path = _resolve_idx(data_dir, f"{prefix}-images-idx3-ubyte")
    lab_path = _resolve_idx(data_dir, f"{prefix}-labels-idx1-ubyte")
    pixels = _parse_idx_images(img_path)
    labels = _parse_idx_labels(lab_path)
    if pixels.shape[0] != labels.shape[0]:
        raise ValueError(
            f"image/label count mismatch: {img_path} has {pixels.shape[0]} "
            f"images but {lab_path} has {labels.shape[0]} labels"
        )
    images = pixels.astype(np.float64) / 255.0
    return Dataset(images=images, labels=labels.astype(np.int64), split=split)


# ---------------------------------------------------------------------------
# atomic writes


def atomic_write_bytes(path, data: bytes) -> None:
    """Write bytes to ``path`` atomically (temp file in the same dir + rename)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except OSError:
            pass
        raise


def atomic_write_text(path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


# ---------------------------------------------------------------------------
# model container


def save_model(network, path) -> None:
    """Serialize a network to ``path``.

    Layout: magic, uint32 version, uint32 header length, JSON header
    (architecture description, per-array shapes, and the network's meta
    dict — training regime, seed, hyperparameters), then every parameter
    array appended as little-endian float64 in header order. Float64 in,
    float64 out, so load_model(save_model(x)) is bit-exact.
    """
    arrays = network.parameter_arrays()
    header = {
        "arch": network.arch_description(),
        "shapes": [list(arr.shape) for arr in arrays],
        "meta": network.meta,
    }
    head = json.dumps(header, sort_keys=True).encode("utf-8")
    parts = [MODEL_MAGIC, struct.pack("<II", MODEL_VERSION, len(head)), head]
    for arr in arrays:
        parts.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    atomic_write_bytes(path, b"".join(parts))


def load_model(path):
    """Load a network saved by :func:`save_model`."""
    from .network import network_from_description

    path = Path(path)
    buf = path.read_bytes()
    if len(buf) < 12 or buf[:4] != MODEL_MAGIC:
        raise ValueError(f"{path}: not a model file (magic mismatch)")
    version, head_len = struct.unpack("<II", buf[4:12])
    if version != MODEL_VERSION:
        raise ValueError(
            f"{path}: unsupported model format version {version}, "
            f"this build reads version {MODEL_VERSION}"
        )
    if len(buf) < 12 + head_len:
        raise ValueError(f"{path}: truncated model header")
    header = json.loads(buf[12 : 12 + head_len].decode("utf-8"))
    shapes = [tuple(s) for s in header["shapes"]]
    need = sum(int(np.prod(s)) for s in shapes)
    payload = np.frombuffer(buf, dtype="<f8", offset=12 + head_len)
    if payload.size != need:
        raise ValueError(
            f"{path}: parameter payload has {payload.size} float64 values, "
            f"header promises {need}"
        )
    arrays = []
    pos = 0
    for s in shapes:
        cnt = int(np.prod(s))
        arrays.append(payload[pos : pos + cnt].reshape(s).astype(np.float64))
        pos += cnt
    net = network_from_description(header["arch"])
    net.set_parameter_arrays(arrays)
    net.meta = dict(header.get("meta", {}))
    return net


# ---------------------------------------------------------------------------
# tabular reports


def format_float(x: float) -> str:
    """Render a float with 12 significant digits."""
    return FLOAT_FMT % float(x)


def write_csv(path, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    """Write a CSV report; floats get 12 significant digits.

    Values that are already strings pass through untouched; ints stay
    ints; everything float-like goes through :data:`FLOAT_FMT`.
    """
    lines = [",".join(header)]
    for row in rows:
        cells = []
        for v in row:
            if isinstance(v, str):
                cells.append(v)
            elif isinstance(v, (bool, np.bool_)):
                cells.append("true" if v else "false")
            elif isinstance(v, (int, np.integer)):
                cells.append(str(int(v)))
            else:
                cells.append(format_float(v))
        lines.append(",".join(cells))
    atomic_write_text(path, "\n".join(lines) + "\n")


def read_csv(path):
    """Read a CSV written by :func:`write_csv`: (header, list of row lists)."""
    text = Path(path).read_text(encoding="utf-8")
    lines = [ln for ln in text.splitlines() if ln]
    if not lines:
        raise ValueError(f"{path}: empty CSV")
    header = lines[0].split(",")
    return header, [ln.split(",") for ln in lines[1:]]


def write_json(path, obj) -> None:
    """Write a JSON document (full float round-trip precision)."""
    atomic_write_text(path, json.dumps(obj, indent=2, sort_keys=True) + "\n")


def read_json(path):
    return json.loads(Path(path).read_text(encoding="utf-8"))


def write_report(rows, path, format: str = "csv", header: Optional[Sequence[str]] = None) -> None:
    """Write a uniform-schema report as CSV (default) or a JSON array.

    Rows may be dicts (shared key set; ``header`` defaults to the first
    row's keys, and is required for an empty CSV so the header line can
    still be emitted) or plain sequences (``header`` required for CSV).
    """
    rows = list(rows)
    if format == "json":
        out = []
        for row in rows:
            if isinstance(row, dict):
                out.append(row)
            else:
                if header is None:
                    raise ValueError("header required for sequence rows")
                out.append(dict(zip(header, row)))
        write_json(path, out)
        return
    if format != "csv":
        raise ValueError(f"unknown report format {format!r}")
    if header is None:
        if not rows:
            raise ValueError("header required to write an empty CSV report")
        if not isinstance(rows[0], dict):
            raise ValueError("header required for sequence rows")
        header = list(rows[0].keys())
    seq_rows = []
    for row in rows:
        if isinstance(row, dict):
            if set(row.keys()) != set(header):
                raise ValueError("report rows do not share one schema")
            seq_rows.append([row[k] for k in header])
        else:
            seq_rows.append(list(row))
    write_csv(path, header, seq_rows)
