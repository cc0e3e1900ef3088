"""Byte-level file formats: PPM/PGM images, PFM float maps, DNMC checkpoints, CSV reports.

DNMC checkpoint layout (all integers little-endian)::

    b"DNMC"                      magic
    u32   format version (1)
    u32   model kind (6 or 12)
    u32   input_channels, base_filters, encoder_depth, out_channels
    f64   d_max_frac
    i64   seed
    u32   tensor count
    per tensor:
        u32 name length, name (UTF-8), u32 rank, rank x u32 extents,
        prod(extents) x f64 values (C order)

Tensor names are prefixed ``L.`` (CNN-L) or ``R.`` (CNN-R).
"""
from __future__ import annotations

import csv
import json
import re
import struct
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .dualnet import DualModel, NetworkConfig, NetworkParams
from .evaluation import METRIC_FIELDS, MetricsReport

CHECKPOINT_MAGIC = b"DNMC"
CHECKPOINT_VERSION = 1


class FormatError(ValueError):
    """A file does not conform to its format."""


class BadMagicError(FormatError):
    pass


class TruncatedError(FormatError):
    pass


class MaxvalError(FormatError):
    pass


class EndiannessError(FormatError):
    pass


# PPM / PGM ---------------------------------------------------------------

_TOKEN = re.compile(rb"(?:\s|#[^\n]*\n?)*(\S+)")


def _read_header(data: bytes, count: int) -> tuple[list[bytes], int]:
    tokens, pos = [], 0
    for _ in range(count):
        m = _TOKEN.match(data, pos)
        if m is None:
            raise TruncatedError("header ended early")
        tokens.append(m.group(1))
        pos = m.end()
    if pos >= len(data) or not data[pos : pos + 1].isspace():
        raise TruncatedError("missing whitespace after header")
    return tokens, pos + 1


def decode_pnm(data: bytes) -> np.ndarray:
    """Decode binary P5/P6 bytes into a (c, h, w) array of ``byte / 255``."""
    if data[:2] not in (b"P5", b"P6"):
        raise BadMagicError(f"expected P5 or P6, got {data[:2]!r}")
    channels = 3 if data[:2] == b"P6" else 1
    (_, w, h, maxval), offset = _read_header(data, 4)
    w, h, maxval = int(w), int(h), int(maxval)
    if maxval != 255:
        raise MaxvalError(f"only maxval 255 is supported, got {maxval}")
    n = w * h * channels
    payload = data[offset : offset + n]
    if len(payload) != n:
        raise TruncatedError(f"expected {n} pixel bytes, found {len(payload)}")
    arr = np.frombuffer(payload, dtype=np.uint8).reshape(h, w, channels)
    return arr.transpose(2, 0, 1).astype(np.float64) / 255.0


def encode_pnm(image: np.ndarray) -> bytes:
    """Encode a (c, h, w) image in [0, 1]; c = 1 gives P5, c = 3 gives P6."""
    image = np.asarray(image, dtype=np.float64)
    if image.ndim == 2:
        image = image[None]
    c, h, w = image.shape
    if c not in (1, 3):
        raise ValueError(f"images need 1 or 3 channels, got {c}")
    q = np.floor(np.clip(image, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)
    magic = b"P6" if c == 3 else b"P5"
    return magic + f"\n{w} {h}\n255\n".encode() + q.transpose(1, 2, 0).tobytes()


def load_image(path) -> np.ndarray:
    return decode_pnm(Path(path).read_bytes())


def save_image(image: np.ndarray, path) -> None:
    Path(path).write_bytes(encode_pnm(image))


# PFM ---------------------------------------------------------------------

def encode_pfm(values: np.ndarray) -> bytes:
    """Single-channel little-endian PFM; rows are written bottom to top."""
    values = np.asarray(values)
    if values.ndim != 2:
        raise ValueError(f"PFM maps are 2-D, got shape {values.shape}")
    h, w = values.shape
    header = f"Pf\n{w} {h}\n-1.0\n".encode()
    return header + np.ascontiguousarray(values[::-1], dtype="<f4").tobytes()


def decode_pfm(data: bytes) -> np.ndarray:
    if data[:2] != b"Pf":
        raise BadMagicError(f"expected a single-channel 'Pf' map, got {data[:2]!r}")
    (_, w, h, scale), offset = _read_header(data, 4)
    w, h, scale = int(w), int(h), float(scale)
    if scale > 0:
        raise EndiannessError("big-endian PFM (positive scale) is not supported")
    n = w * h * 4
    payload = data[offset:]
    if len(payload) != n:
        raise TruncatedError(f"header says {w}x{h} ({n} bytes) but payload has {len(payload)} bytes")
    return np.frombuffer(payload, dtype="<f4").reshape(h, w)[::-1].astype(np.float64)


def save_pfm(values: np.ndarray, path) -> None:
    Path(path).write_bytes(encode_pfm(values))


def load_pfm(path) -> np.ndarray:
    return decode_pfm(Path(path).read_bytes())


# checkpoints -------------------------------------------------------------

def encode_checkpoint(model: DualModel) -> bytes:
    cfg = model.cfg
    out = [
        CHECKPOINT_MAGIC,
        struct.pack("<II", CHECKPOINT_VERSION, model.kind),
        struct.pack("<IIII", cfg.input_channels, cfg.base_filters, cfg.encoder_depth, cfg.out_channels),
        struct.pack("<dq", cfg.d_max_frac, cfg.seed),
    ]
    tensors = [(f"{net}.{name}", arr) for net, p in model.networks().items() for name, arr in p.arrays.items()]
    out.append(struct.pack("<I", len(tensors)))
    for name, arr in tensors:
        raw = name.encode()
        out.append(struct.pack("<I", len(raw)) + raw)
        out.append(struct.pack(f"<I{arr.ndim}I", arr.ndim, *arr.shape))
        out.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    return b"".join(out)


class _Reader:
    def __init__(self, data: bytes):
        self.data, self.pos = data, 0

    def take(self, n: int) -> bytes:
        chunk = self.data[self.pos : self.pos + n]
        if len(chunk) != n:
            raise TruncatedError("checkpoint ended early")
        self.pos += n
        return chunk

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def decode_checkpoint(data: bytes) -> DualModel:
    r = _Reader(data)
    if r.take(4) != CHECKPOINT_MAGIC:
        raise BadMagicError("not a DNMC checkpoint")
    version, kind = r.unpack("<II")
    if version != CHECKPOINT_VERSION:
        raise FormatError(f"unsupported checkpoint version {version}")
    ic, bf, depth, oc = r.unpack("<IIII")
    d_max, seed = r.unpack("<dq")
    cfg = NetworkConfig(ic, bf, depth, oc, d_max, seed)
    (count,) = r.unpack("<I")
    arrays: dict[str, dict[str, np.ndarray]] = {"L": {}, "R": {}}
    for _ in range(count):
        (n,) = r.unpack("<I")
        name = r.take(n).decode()
        (rank,) = r.unpack("<I")
        shape = r.unpack(f"<{rank}I")
        size = int(np.prod(shape)) if rank else 1
        values = np.frombuffer(r.take(8 * size), dtype="<f8").reshape(shape).astype(np.float64)
        net, _, pname = name.partition(".")
        if net not in arrays:
            raise FormatError(f"tensor {name!r} does not belong to CNN-L or CNN-R")
        arrays[net][pname] = values
    if r.pos != len(data):
        raise FormatError("trailing bytes after checkpoint")
    return DualModel(kind, cfg, NetworkParams(cfg, arrays["L"]), NetworkParams(cfg, arrays["R"]))


def save_checkpoint(model: DualModel, path) -> None:
    Path(path).write_bytes(encode_checkpoint(model))


def load_checkpoint(path) -> DualModel:
    return decode_checkpoint(Path(path).read_bytes())


# CSV ---------------------------------------------------------------------

def _fmt(v: float) -> str:
    return repr(float(v))


def write_loss_history(path, records: Sequence, columns: Sequence[str] | None = None) -> None:
    """One row per step: step, lr, C, then every component column."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        if columns is None:
            columns = records[0].breakdown.columns() if records else []
        writer.writerow(["step", "lr", "C", *columns])
        for rec in records:
            writer.writerow([rec.step, _fmt(rec.lr), _fmt(rec.breakdown.total), *map(_fmt, rec.breakdown.row())])


def write_metrics(path, rows: Iterable[tuple[str, MetricsReport]]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["method", *METRIC_FIELDS])
        for method, report in rows:
            writer.writerow([method, *map(_fmt, report.values())])


def read_metrics(path) -> list[tuple[str, MetricsReport]]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        return [(row["method"], MetricsReport(**{k: float(row[k]) for k in METRIC_FIELDS})) for row in reader]


# scene directories -------------------------------------------------------

SCENE_INDEX = "scenes.json"


def save_scene_set(samples: Sequence, directory, rig=None) -> list[str]:
    """Write pairs as PPM/PGM plus ground truth as ``<id>.disp.pfm`` in pixels, indexed by scenes.json."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    ext = ".ppm" if samples[0].left.shape[0] == 3 else ".pgm"
    entries = []
    for i, s in enumerate(samples):
        sid = f"{i:04d}"
        entry = {"id": sid, "left": f"{sid}_left{ext}", "right": f"{sid}_right{ext}"}
        save_image(s.left, directory / entry["left"])
        save_image(s.right, directory / entry["right"])
        if s.gt_disparity is not None:
            entry["gt"] = f"{sid}.disp.pfm"
            save_pfm(s.gt_disparity[0] * s.left.shape[-1], directory / entry["gt"])
        entries.append(entry)
    index = {"rig": None if rig is None else {"focal_px": rig.focal_px, "baseline_m": rig.baseline_m}, "scenes": entries}
    (directory / SCENE_INDEX).write_text(json.dumps(index, indent=2) + "\n")
    return [e["id"] for e in entries]


def load_scene_set(directory):
    """Inverse of :func:`save_scene_set`; returns (ids, samples, rig or None)."""
    from .evaluation import CameraRig
    from .trainer import StereoSample

    directory = Path(directory)
    index_path = directory / SCENE_INDEX
    if not index_path.exists():
        raise FileNotFoundError(f"{index_path} not found")
    index = json.loads(index_path.read_text())
    rig = CameraRig(**index["rig"]) if index.get("rig") else None
    ids, samples = [], []
    for e in index["scenes"]:
        left = load_image(directory / e["left"])
        right = load_image(directory / e["right"])
        gt = None
        if e.get("gt"):
            gt = (load_pfm(directory / e["gt"]) / left.shape[-1])[None]
        ids.append(e["id"])
        samples.append(StereoSample(left, right, gt, rig))
    return ids, samples, rig
