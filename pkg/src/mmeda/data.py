"""Datasets, synthetic generation, splitting and binary file formats.

MMTF tensor file (all little endian)::

    b"MMTF" | u32 version=1 | u32 ndim | ndim × u32 extents
    | prod(extents) × f64 payload (row major) | u32 CRC32(payload)

MMDL model bundle::

    b"MMDL" | u32 version=1 | u32 len | descriptor JSON (UTF-8)
    | u32 count | count × (u32 len | name UTF-8 | MMTF block)
    | u32 CRC32(everything before it)
"""

from __future__ import annotations

import io
import json
import math
import struct
import zlib
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .models import build_model, descriptor
from .nn import Module, make_rng

__all__ = [
    "FormatError",
    "ChecksumError",
    "MultiModalDataset",
    "SynthSpec",
    "Split",
    "generate_synthetic",
    "cosine_basis",
    "split",
    "encode_tensor",
    "decode_tensor",
    "write_tensor",
    "read_tensor",
    "save_dataset",
    "load_dataset",
    "save_model",
    "load_model",
]

TENSOR_MAGIC = b"MMTF"
MODEL_MAGIC = b"MMDL"
FORMAT_VERSION = 1


class FormatError(ValueError):
    """Malformed or truncated file."""


class ChecksumError(FormatError):
    pass


@dataclass
class MultiModalDataset:
    m0: np.ndarray  # N×C×H×W image view
    m1: np.ndarray  # N×n2 feature view
    labels: np.ndarray | None = None
    targets: np.ndarray | None = None
    entity_ids: list[str] = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        n = self.m0.shape[0]
        if self.m0.ndim != 4:
            raise ValueError(f"image view must be N×C×H×W, got shape {self.m0.shape}")
        if self.m1.ndim != 2 or self.m1.shape[0] != n:
            raise ValueError(f"feature view must be {n}×n2, got shape {self.m1.shape}")
        for name in ("labels", "targets"):
            v = getattr(self, name)
            if v is not None and v.shape != (n,):
                raise ValueError(f"{name} must have shape ({n},), got {v.shape}")
        if self.labels is not None and not np.all((self.labels == 0) | (self.labels == 1)):
            raise ValueError("labels must be binary (0/1)")
        if not self.entity_ids:
            self.entity_ids = [f"e{i}" for i in range(n)]
        if len(self.entity_ids) != n:
            raise ValueError(f"{len(self.entity_ids)} entity ids for {n} rows")

    @property
    def n(self) -> int:
        return self.m0.shape[0]

    @property
    def image_shape(self) -> tuple[int, int, int]:
        return tuple(self.m0.shape[1:])

    @property
    def n2(self) -> int:
        return self.m1.shape[1]

    def image_matrix(self) -> np.ndarray:
        """Image view flattened to N×(C·H·W)."""
        return self.m0.reshape(self.n, -1)


# -- synthetic data ----------------------------------------------------------


@dataclass
class SynthSpec:
    n: int = 256
    rank: int = 8
    image_shape: tuple[int, int, int] = (1, 16, 16)
    n2: int = 32
    sigma: float = 0.05
    seed: int = 0
    # use the label direction for the regression target as well
    shared_direction: bool = False

    def __post_init__(self):
        self.image_shape = tuple(int(v) for v in self.image_shape)
        c, h, w = self.image_shape
        if self.n < 1 or self.rank < 1:
            raise ValueError("n and rank must be positive")
        if self.rank > min(self.n2, c * h * w):
            raise ValueError(
                f"rank {self.rank} exceeds min(text dim {self.n2}, image size {c * h * w})"
            )
        if self.sigma < 0:
            raise ValueError(f"sigma must be non-negative, got {self.sigma}")


def cosine_basis(count: int, image_shape: tuple[int, int, int]) -> np.ndarray:
    """``count`` orthonormal 2-D DCT-II modes, lowest frequencies first, excluding DC.

    Modes cycle over channels when C > 1. Returns count×C×H×W.
    """
    c, h, w = image_shape
    freqs = sorted(
        ((p, q) for p in range(h) for q in range(w) if (p, q) != (0, 0)),
        key=lambda pq: (pq[0] + pq[1], pq[0]),
    )
    freqs.append((0, 0))  # DC last, only reached for very high ranks
    out = np.zeros((count, c, h, w))
    ys = (np.arange(h) + 0.5) / h
    xs = (np.arange(w) + 0.5) / w
    for k in range(count):
        p, q = freqs[(k // c) % len(freqs)]
        mode = np.outer(np.cos(np.pi * p * ys), np.cos(np.pi * q * xs))
        out[k, k % c] = mode / np.linalg.norm(mode)
    return out


def generate_synthetic(spec: SynthSpec) -> MultiModalDataset:
    """Two views and two supervision signals, all driven by one latent ``Z``.

    ``M1 = Z A + noise``; each image is a latent-weighted sum of smooth
    cosine modes plus noise; labels are ``Z w > 0``; targets are ``Z v`` plus
    noise. Directions ``w`` and ``v`` are unit vectors.
    """
    rng = make_rng(spec.seed)
    n, r, s = spec.n, spec.rank, spec.sigma
    c, h, w = spec.image_shape
    z = rng.standard_normal((n, r))
    a = rng.standard_normal((r, spec.n2)) / math.sqrt(r)
    wdir = rng.standard_normal(r)
    wdir /= np.linalg.norm(wdir)
    vdir = rng.standard_normal(r)
    vdir /= np.linalg.norm(vdir)
    if spec.shared_direction:
        vdir = wdir
    m1 = z @ a + s * rng.standard_normal((n, spec.n2))
    basis = cosine_basis(r, spec.image_shape).reshape(r, -1)
    # per-pixel variance ~ 1 regardless of image size
    img = (z @ basis) * math.sqrt(c * h * w / r)
    m0 = (img + s * rng.standard_normal(img.shape)).reshape(n, c, h, w)
    labels = (z @ wdir > 0).astype(np.float64)
    targets = z @ vdir + s * rng.standard_normal(n)
    meta = {"generator": asdict(spec), "seed": spec.seed, "latent": z}
    return MultiModalDataset(m0, m1, labels, targets, [f"e{i}" for i in range(n)], meta)


# -- splitting ---------------------------------------------------------------


@dataclass
class Split:
    train: np.ndarray
    test: np.ndarray
    ratio: float
    seed: int


def split(n_or_dataset, ratio: float = 0.8, seed: int = 0) -> Split:
    """Seeded permutation, first ``round(ratio·N)`` indices train, the rest test."""
    if not 0.0 < ratio < 1.0:
        raise ValueError(f"ratio must lie in (0, 1), got {ratio}")
    n = n_or_dataset if isinstance(n_or_dataset, int) else n_or_dataset.n
    perm = make_rng(seed).permutation(n)
    k = int(round(ratio * n))
    return Split(np.sort(perm[:k]), np.sort(perm[k:]), ratio, seed)


# -- MMTF tensors -------------------------------------------------------------


def encode_tensor(t: np.ndarray) -> bytes:
    # asarray, not ascontiguousarray: the latter promotes 0-d to 1-d
    arr = np.asarray(t, dtype="<f8")
    payload = arr.tobytes(order="C")
    head = TENSOR_MAGIC + struct.pack("<II", FORMAT_VERSION, arr.ndim)
    head += struct.pack(f"<{arr.ndim}I", *arr.shape)
    return head + payload + struct.pack("<I", zlib.crc32(payload))


def _read_exact(buf: io.BytesIO, k: int, what: str) -> bytes:
    pos = buf.tell()
    chunk = buf.read(k)
    if len(chunk) != k:
        raise FormatError(f"truncated file: expected {k} bytes of {what} at offset {pos}")
    return chunk


def _decode_tensor(buf: io.BytesIO) -> np.ndarray:
    start = buf.tell()
    magic = _read_exact(buf, 4, "magic")
    if magic != TENSOR_MAGIC:
        raise FormatError(f"bad tensor header at offset {start}: magic {magic!r} != b'MMTF'")
    version, ndim = struct.unpack("<II", _read_exact(buf, 8, "header"))
    if version != FORMAT_VERSION:
        raise FormatError(f"unsupported MMTF version {version}")
    shape = struct.unpack(f"<{ndim}I", _read_exact(buf, 4 * ndim, "extents"))
    count = math.prod(shape)
    payload = _read_exact(buf, 8 * count, "payload")
    (crc,) = struct.unpack("<I", _read_exact(buf, 4, "checksum"))
    if zlib.crc32(payload) != crc:
        raise ChecksumError(f"tensor payload checksum mismatch at offset {start}")
    return np.frombuffer(payload, dtype="<f8").astype(np.float64).reshape(shape)


def decode_tensor(data: bytes) -> np.ndarray:
    buf = io.BytesIO(data)
    t = _decode_tensor(buf)
    if buf.tell() != len(data):
        raise FormatError(f"{len(data) - buf.tell()} trailing bytes after tensor")
    return t


def write_tensor(path, t: np.ndarray) -> None:
    Path(path).write_bytes(encode_tensor(t))


def read_tensor(path) -> np.ndarray:
    return decode_tensor(Path(path).read_bytes())


# -- dataset directories ------------------------------------------------------


def save_dataset(path, ds: MultiModalDataset, spec: SynthSpec | None = None) -> Path:
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    write_tensor(root / "m0.mmtf", ds.m0)
    write_tensor(root / "m1.mmtf", ds.m1)
    manifest = {
        "n": ds.n,
        "views": {
            "m0": {"file": "m0.mmtf", "shape": list(ds.m0.shape)},
            "m1": {"file": "m1.mmtf", "shape": list(ds.m1.shape)},
        },
        "labels": None,
        "targets": None,
        "seed": spec.seed if spec else None,
        "generator": asdict(spec) if spec else None,
        "entity_ids": list(ds.entity_ids),
    }
    for name in ("labels", "targets"):
        v = getattr(ds, name)
        if v is not None:
            write_tensor(root / f"{name}.mmtf", v)
            manifest[name] = f"{name}.mmtf"
    (root / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return root


def load_dataset(path) -> MultiModalDataset:
    root = Path(path)
    try:
        manifest = json.loads((root / "manifest.json").read_text())
    except json.JSONDecodeError as e:
        raise FormatError(f"bad manifest in {root}: {e}") from e
    views = {}
    for key in ("m0", "m1"):
        entry = manifest["views"][key]
        t = read_tensor(root / entry["file"])
        if list(t.shape) != list(entry["shape"]):
            raise FormatError(f"{key}: manifest shape {entry['shape']} but file has {list(t.shape)}")
        views[key] = t
    extras = {
        name: read_tensor(root / manifest[name]) if manifest.get(name) else None
        for name in ("labels", "targets")
    }
    meta = {"generator": manifest.get("generator"), "seed": manifest.get("seed")}
    return MultiModalDataset(
        views["m0"], views["m1"], extras["labels"], extras["targets"],
        list(manifest.get("entity_ids") or []), meta,
    )


# -- model bundles -------------------------------------------------------------


def _pack_str(s: str) -> bytes:
    b = s.encode("utf-8")
    return struct.pack("<I", len(b)) + b


def encode_model(model: Module) -> bytes:
    body = bytearray(MODEL_MAGIC + struct.pack("<I", FORMAT_VERSION))
    body += _pack_str(json.dumps(descriptor(model), sort_keys=True))
    params = list(model.named_parameters())
    body += struct.pack("<I", len(params))
    for name, p in params:
        body += _pack_str(name) + encode_tensor(p.value)
    return bytes(body) + struct.pack("<I", zlib.crc32(body))


def decode_model(data: bytes, expect_kind: str | None = None) -> Module:
    if len(data) < 12 or data[:4] != MODEL_MAGIC:
        raise FormatError(f"not a model bundle: magic {data[:4]!r} != b'MMDL'")
    (crc,) = struct.unpack("<I", data[-4:])
    if zlib.crc32(data[:-4]) != crc:
        raise ChecksumError("model bundle checksum mismatch")
    buf = io.BytesIO(data[:-4])
    buf.seek(4)
    (version,) = struct.unpack("<I", _read_exact(buf, 4, "version"))
    if version != FORMAT_VERSION:
        raise FormatError(f"unsupported bundle version {version} (expected {FORMAT_VERSION})")

    def read_str(what):
        (k,) = struct.unpack("<I", _read_exact(buf, 4, what + " length"))
        return _read_exact(buf, k, what).decode("utf-8")

    desc = json.loads(read_str("descriptor"))
    if expect_kind is not None and desc["kind"] != expect_kind:
        raise FormatError(f"architecture kind mismatch: bundle holds {desc['kind']!r}, expected {expect_kind!r}")
    model = build_model(desc)
    own = dict(model.named_parameters())
    (count,) = struct.unpack("<I", _read_exact(buf, 4, "parameter count"))
    if count != len(own):
        raise FormatError(f"bundle has {count} parameters, architecture needs {len(own)}")
    for _ in range(count):
        name = read_str("parameter name")
        t = _decode_tensor(buf)
        if name not in own:
            raise FormatError(f"unknown parameter {name!r}")
        if own[name].value.shape != t.shape:
            raise FormatError(f"{name}: shape {t.shape} but architecture needs {own[name].value.shape}")
        own[name].value = t.copy()
        own[name].grad = np.zeros_like(t)
    return model


def save_model(path, model: Module) -> None:
    Path(path).write_bytes(encode_model(model))


def load_model(path, expect_kind: str | None = None) -> Module:
    return decode_model(Path(path).read_bytes(), expect_kind)
