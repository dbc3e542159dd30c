"""Data ingestion, binary-class selection, disjoint partitions and artifact files.

Array container format (``.bin``, used for weights and datasets)::

    bytes 0..3   magic b"DRA1"
    bytes 4..7   uint32 little-endian header length H
    bytes 8..8+H UTF-8 JSON header: {"arrays": [[name, [shape...]], ...], ...metadata}
    rest         the arrays, in header order, as little-endian float64, C order

The JSON header is written with sorted keys, so equal content gives equal bytes.
"""

from __future__ import annotations

import hashlib
import json
import os
import struct
from pathlib import Path

import numpy as np

from .errors import DataFormatError, ShapeError
from .model import Dataset
from .numcore import RngStream

CIFAR_RECORD = 3073
CIFAR_PIXELS = 3072
MAGIC = b"DRA1"


# ---------------------------------------------------------------------------
# CIFAR-10 binary batches
# ---------------------------------------------------------------------------

def load_cifar10(paths) -> tuple[np.ndarray, np.ndarray]:
    """Read CIFAR-10 binary batch files.

    Each record is one label byte followed by 3072 pixel bytes (1024 red,
    1024 green, 1024 blue, each a 32x32 row-major plane).  Returns
    ``(images, labels)`` with images scaled to [0, 1] in the stored
    channel-planar order and integer labels.
    """
    if isinstance(paths, (str, os.PathLike)):
        paths = [paths]
    images, labels = [], []
    for path in paths:
        raw = np.fromfile(path, dtype=np.uint8)
        if raw.size % CIFAR_RECORD:
            raise DataFormatError(f"{path}: {raw.size} bytes is not a multiple of {CIFAR_RECORD}")
        recs = raw.reshape(-1, CIFAR_RECORD)
        lab = recs[:, 0]
        if np.any(lab > 9):
            bad = int(np.argmax(lab > 9))
            raise DataFormatError(f"{path}: record {bad} has label byte {int(lab[bad])} > 9")
        labels.append(lab.astype(np.int64))
        images.append(recs[:, 1:].astype(np.float64) / 255.0)
    if not images:
        return np.empty((0, CIFAR_PIXELS)), np.empty(0, dtype=np.int64)
    return np.concatenate(images), np.concatenate(labels)


def select_binary(images, labels, class_a: int, class_b: int, per_class: int, seed: int = 0) -> Dataset:
    """Pick ``per_class`` images of each class; class_a -> +1, class_b -> -1."""
    if class_a == class_b:
        raise ValueError("the two classes must differ")
    gen = RngStream(seed).child("select_binary").generator()
    rows = []
    for cls in (class_a, class_b):
        idx = np.flatnonzero(labels == cls)
        if idx.size < per_class:
            raise ValueError(f"class {cls} has {idx.size} samples, {per_class} requested")
        rows.append(np.sort(gen.choice(idx, size=per_class, replace=False)))
    order = np.concatenate(rows)
    y = np.concatenate([np.ones(per_class), -np.ones(per_class)])
    return Dataset(images[order], y, {"source_rows": order.tolist(), "classes": [class_a, class_b]})


def partition_disjoint(data: Dataset, fraction: float, seed: int = 0,
                       stratified: bool = False) -> tuple[Dataset, Dataset]:
    """Shuffle rows and split into ``floor(fraction*N)`` / remainder.

    With ``stratified`` the floor rule is applied per label, so both sides keep
    the class balance (the first side then has the sum of per-class floors).
    """
    if not 0 < fraction < 1:
        raise ValueError("fraction must lie strictly between 0 and 1")
    gen = RngStream(seed).child("partition").generator()
    if stratified:
        first, second = [], []
        for lab in np.unique(data.labels):
            idx = np.flatnonzero(data.labels == lab)
            idx = idx[gen.permutation(idx.size)]
            cut = int(np.floor(fraction * idx.size))
            first.append(idx[:cut])
            second.append(idx[cut:])
        a, b = np.sort(np.concatenate(first)), np.sort(np.concatenate(second))
    else:
        perm = gen.permutation(data.n)
        cut = int(np.floor(fraction * data.n))
        a, b = np.sort(perm[:cut]), np.sort(perm[cut:])
    if a.size == 0 or b.size == 0:
        raise ValueError(f"partition of {data.n} rows at {fraction} leaves one side empty")
    return (Dataset(data.inputs[a], data.labels[a], {"rows": a.tolist()}),
            Dataset(data.inputs[b], data.labels[b], {"rows": b.tolist()}))


def synth_dataset(n: int, k: int, separation: float = 1.0, seed: int = 0, sigma: float = 0.1) -> Dataset:
    """Two Gaussian blobs in [0,1]^k with labels +1 / -1.

    Blob means sit at 0.5 +- (separation/2) u for a random unit vector u, the
    per-pixel standard deviation is ``sigma``, and samples are clipped to the
    unit box.  Rows alternate +1, -1, +1, ...
    """
    if n < 2 or n % 2 or k < 1:
        raise ValueError("need an even n >= 2 and k >= 1")
    if not separation > 0 or not sigma > 0:
        raise ValueError("separation and sigma must be positive")
    gen = RngStream(seed).child("synth").generator()
    u = gen.normal(size=k)
    u /= np.linalg.norm(u)
    y = np.tile([1.0, -1.0], n // 2)
    means = 0.5 + 0.5 * separation * y[:, None] * u[None, :]
    x = np.clip(means + sigma * gen.normal(size=(n, k)), 0.0, 1.0)
    return Dataset(x, y, {"direction": u.tolist()})


def fingerprint(*arrays) -> str:
    h = hashlib.sha256()
    for a in arrays:
        a = np.ascontiguousarray(a, dtype="<f8")
        h.update(repr(a.shape).encode())
        h.update(a.tobytes())
    return h.hexdigest()


# ---------------------------------------------------------------------------
# array container
# ---------------------------------------------------------------------------

def write_arrays(path, arrays: dict, meta: dict | None = None) -> Path:
    path = Path(path)
    header = dict(meta or {})
    header["arrays"] = [[name, list(np.shape(a))] for name, a in arrays.items()]
    hbytes = json.dumps(header, sort_keys=True).encode()
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(hbytes)))
        fh.write(hbytes)
        for a in arrays.values():
            fh.write(np.ascontiguousarray(a, dtype="<f8").tobytes())
    return path


def read_arrays(path) -> tuple[dict, dict]:
    blob = Path(path).read_bytes()
    if blob[:4] != MAGIC or len(blob) < 8:
        raise DataFormatError(f"{path}: not an array container")
    (hlen,) = struct.unpack("<I", blob[4:8])
    try:
        header = json.loads(blob[8:8 + hlen].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise DataFormatError(f"{path}: bad header") from exc
    pos = 8 + hlen
    arrays = {}
    for name, shape in header["arrays"]:
        count = int(np.prod(shape)) if shape else 1
        end = pos + 8 * count
        if end > len(blob):
            raise DataFormatError(f"{path}: truncated array {name!r}")
        arrays[name] = np.frombuffer(blob[pos:end], dtype="<f8").astype(np.float64).reshape(shape)
        pos = end
    if pos != len(blob):
        raise DataFormatError(f"{path}: {len(blob) - pos} trailing bytes")
    return header, arrays


# ---------------------------------------------------------------------------
# images
# ---------------------------------------------------------------------------

def _to_hwc(row, h, w, c):
    # CIFAR stores channel planes; PPM wants interleaved RGB
    return row.reshape(c, h, w).transpose(1, 2, 0)


def export_images(x, geometry, out_dir, prefix: str = "img") -> dict:
    """Write each row of ``x`` as a binary PPM (P6) plus an ``index.json`` manifest.

    Rows are interpreted in channel-planar order (as in CIFAR-10); a single
    channel is replicated to grey RGB.  Values are clamped to [0,1] and
    rounded to 8 bits.
    """
    x = np.asarray(x, dtype=np.float64)
    h, w, c = geometry
    if x.ndim != 2 or h * w * c != x.shape[1]:
        raise ShapeError(f"geometry {geometry} does not match row length {x.shape[-1]}")
    if c not in (1, 3):
        raise ShapeError("only 1 or 3 channels can be written as PPM")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    files = []
    for i, row in enumerate(x):
        img = _to_hwc(row, h, w, c)
        if c == 1:
            img = np.repeat(img, 3, axis=2)
        data = np.rint(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8)
        name = f"{prefix}_{i:04d}.ppm"
        with open(out_dir / name, "wb") as fh:
            fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
            fh.write(data.tobytes())
        files.append(name)
    manifest = {"geometry": [h, w, c], "count": len(files), "files": files}
    (out_dir / "index.json").write_text(json.dumps(manifest, indent=1, sort_keys=True))
    return manifest


def read_ppm(path, channels: int = 3) -> np.ndarray:
    """Read a P6 file written by :func:`export_images` back into a flat planar row."""
    blob = Path(path).read_bytes()
    parts = blob.split(b"\n", 3)
    if len(parts) < 4 or parts[0] != b"P6" or parts[2] != b"255":
        raise DataFormatError(f"{path}: unsupported PPM header")
    w, h = (int(t) for t in parts[1].split())
    pix = np.frombuffer(parts[3], dtype=np.uint8)
    if pix.size != h * w * 3:
        raise DataFormatError(f"{path}: expected {h * w * 3} pixel bytes, found {pix.size}")
    img = pix.reshape(h, w, 3).astype(np.float64) / 255.0
    if channels == 1:
        img = img[:, :, :1]
    return img.transpose(2, 0, 1).reshape(-1)


def geometry_for(k: int) -> tuple[int, int, int]:
    """A plausible (h, w, c) for a flat row of length k."""
    if k % 3 == 0 and int(round(np.sqrt(k // 3))) ** 2 == k // 3:
        s = int(round(np.sqrt(k // 3)))
        return s, s, 3
    s = int(round(np.sqrt(k)))
    if s * s == k:
        return s, s, 1
    return 1, k, 1
