"""Unit-sphere cluster datasets with injected closed-set and open-set label noise.

Binary layout (all little-endian)::

    b"RPFD" | version u16 | N u64 | C u32 | d_in u32
    N x (d_in f32 features | noisy_label u32 | true_label u32 | flipped u8)
    CRC32 u32 of the record payload

``true_label == OPEN`` (0xFFFFFFFF) marks an open-set outlier.
"""

from __future__ import annotations

import math
import struct
import zlib
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, NamedTuple

import numpy as np

from .errors import (
    ChecksumError,
    ConfigError,
    DatasetValidationError,
    GenerationError,
    HeaderError,
    TruncatedFileError,
)

OPEN = 0xFFFFFFFF
MAGIC = b"RPFD"
VERSION = 1
MIN_PROTOTYPE_ANGLE = 0.3
_HEADER = struct.Struct("<4sHQII")
_MAX_PROTOTYPE_DRAWS = 10_000


@dataclass(frozen=True)
class DatasetSpec:
    num_classes: int
    n_per_class: int
    d_in: int
    concentration: float = 5.0
    closed_noise_ratio: float = 0.0
    open_noise_ratio: float = 0.0
    n_open_prototypes: int = 10
    seed: int = 0
    n_holdout_per_class: int = 20

    def __post_init__(self):
        if self.num_classes < 2:
            raise ConfigError(f"num_classes must be >= 2, got {self.num_classes}")
        if self.n_per_class < 2:
            raise ConfigError(f"n_per_class must be >= 2, got {self.n_per_class}")
        if self.d_in < 2:
            raise ConfigError(f"d_in must be >= 2, got {self.d_in}")
        if not self.concentration > 0:
            raise ConfigError("concentration must be positive")
        for name in ("closed_noise_ratio", "open_noise_ratio"):
            v = getattr(self, name)
            if not 0 <= v < 1:
                raise ConfigError(f"{name} must lie in [0, 1), got {v}")
        if self.closed_noise_ratio + self.open_noise_ratio >= 1:
            raise ConfigError("closed_noise_ratio + open_noise_ratio must be < 1")
        if self.open_noise_ratio > 0 and self.n_open_prototypes < 1:
            raise ConfigError("open-set noise needs n_open_prototypes >= 1")
        if not 0 <= self.seed < 2**64:
            raise ConfigError("seed must be an unsigned 64-bit integer")

    @property
    def n_samples(self) -> int:
        return self.num_classes * self.n_per_class


class NoisySample(NamedTuple):
    features: np.ndarray
    noisy_label: int
    true_label: int
    flipped: bool


@dataclass(eq=False)
class NoisyDataset:
    """Column-oriented sample store; iterating yields ``NoisySample`` rows."""

    features: np.ndarray  # (N, d_in) float32
    noisy_labels: np.ndarray  # (N,) uint32
    true_labels: np.ndarray  # (N,) uint32, OPEN for outliers
    flipped: np.ndarray  # (N,) bool
    num_classes: int

    def __len__(self):
        return len(self.noisy_labels)

    def __getitem__(self, i) -> NoisySample:
        return NoisySample(self.features[i], int(self.noisy_labels[i]), int(self.true_labels[i]),
                           bool(self.flipped[i]))

    def __iter__(self) -> Iterator[NoisySample]:
        return (self[i] for i in range(len(self)))

    def __eq__(self, other):
        if not isinstance(other, NoisyDataset):
            return NotImplemented
        return (self.num_classes == other.num_classes
                and self.features.shape == other.features.shape
                and self.features.tobytes() == other.features.tobytes()
                and np.array_equal(self.noisy_labels, other.noisy_labels)
                and np.array_equal(self.true_labels, other.true_labels)
                and np.array_equal(self.flipped, other.flipped))

    @property
    def d_in(self) -> int:
        return self.features.shape[1]

    @property
    def is_open(self) -> np.ndarray:
        return self.true_labels == OPEN


def round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def _streams(seed: int):
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(4)]


def sample_prototypes(n: int, dim: int, rng, existing=None, min_angle=MIN_PROTOTYPE_ANGLE):
    """Rejection-sample ``n`` unit directions with pairwise angle >= min_angle."""
    max_cos = math.cos(min_angle)
    protos = [] if existing is None else list(existing)
    start = len(protos)
    draws = 0
    while len(protos) - start < n:
        if draws >= _MAX_PROTOTYPE_DRAWS * n:
            raise GenerationError(
                f"could not place {n} prototypes in {dim} dims at min angle {min_angle} rad"
            )
        draws += 1
        v = rng.standard_normal(dim)
        v /= np.linalg.norm(v)
        if protos and np.max(np.asarray(protos) @ v) > max_cos:
            continue
        protos.append(v)
    return np.asarray(protos[start:])


def _draw_around(protos, which, concentration, rng):
    x = protos[which] + rng.standard_normal((len(which), protos.shape[1])) / concentration
    x /= np.linalg.norm(x, axis=1, keepdims=True)
    # quantise once so the in-memory data equals what the file stores
    return x.astype(np.float32)


def class_prototypes(spec: DatasetSpec):
    """(class prototypes, open-set prototypes), fixed by ``spec.seed``."""
    rng = _streams(spec.seed)[0]
    protos = sample_prototypes(spec.num_classes, spec.d_in, rng)
    n_open = spec.n_open_prototypes if spec.open_noise_ratio > 0 else 0
    open_protos = sample_prototypes(n_open, spec.d_in, rng, existing=protos) if n_open else None
    return protos, open_protos


def _per_class_counts(total, C, rng):
    counts = np.full(C, total // C)
    counts[rng.permutation(C)[: total % C]] += 1
    return counts


def generate(spec: DatasetSpec) -> NoisyDataset:
    protos, open_protos = class_prototypes(spec)
    _, rng_x, rng_noise, _ = _streams(spec.seed)
    C, n = spec.num_classes, spec.n_per_class
    true = np.repeat(np.arange(C), n)
    feats = _draw_around(protos, true, spec.concentration, rng_x)
    noisy = true.astype(np.uint32).copy()
    true_out = true.astype(np.uint32).copy()
    flipped = np.zeros(C * n, dtype=bool)

    n_closed = round_half_up(spec.closed_noise_ratio * C * n)
    n_open = round_half_up(spec.open_noise_ratio * C * n)
    closed_counts = _per_class_counts(n_closed, C, rng_noise)
    open_counts = _per_class_counts(n_open, C, rng_noise)
    if np.any(closed_counts + open_counts > n):
        raise GenerationError("noise ratios leave some class without enough samples")
    for c in range(C):
        members = c * n + rng_noise.permutation(n)
        closed = members[: closed_counts[c]]
        opened = members[closed_counts[c]: closed_counts[c] + open_counts[c]]
        # uniform over the other C - 1 classes
        noisy[closed] = (c + rng_noise.integers(1, C, size=len(closed))) % C
        flipped[closed] = True
        if len(opened):
            which = rng_noise.integers(0, len(open_protos), size=len(opened))
            feats[opened] = _draw_around(open_protos, which, spec.concentration, rng_noise)
            noisy[opened] = rng_noise.integers(0, C, size=len(opened))
            true_out[opened] = OPEN
            flipped[opened] = True
    return NoisyDataset(feats, noisy, true_out, flipped, C)


def generate_holdout(spec: DatasetSpec, n_per_class: int | None = None) -> NoisyDataset:
    """Noise-free samples drawn around the same class prototypes."""
    n_per_class = spec.n_holdout_per_class if n_per_class is None else n_per_class
    protos, _ = class_prototypes(spec)
    rng = _streams(spec.seed)[3]
    true = np.repeat(np.arange(spec.num_classes), n_per_class)
    feats = _draw_around(protos, true, spec.concentration, rng)
    labels = true.astype(np.uint32)
    return NoisyDataset(feats, labels, labels.copy(), np.zeros(len(true), bool), spec.num_classes)


def _record_dtype(d_in: int) -> np.dtype:
    return np.dtype([("x", "<f4", (d_in,)), ("noisy", "<u4"), ("true", "<u4"), ("flipped", "u1")])


def dataset_bytes(ds: NoisyDataset) -> bytes:
    rec = np.zeros(len(ds), dtype=_record_dtype(ds.d_in))
    rec["x"] = ds.features
    rec["noisy"] = ds.noisy_labels
    rec["true"] = ds.true_labels
    rec["flipped"] = ds.flipped
    payload = rec.tobytes()
    header = _HEADER.pack(MAGIC, VERSION, len(ds), ds.num_classes, ds.d_in)
    return header + payload + struct.pack("<I", zlib.crc32(payload))


def write_dataset(ds: NoisyDataset, path) -> None:
    Path(path).write_bytes(dataset_bytes(ds))


def parse_dataset(buf: bytes) -> NoisyDataset:
    if len(buf) < _HEADER.size:
        raise HeaderError(f"file too short for header ({len(buf)} < {_HEADER.size} bytes)")
    magic, version, n, C, d_in = _HEADER.unpack_from(buf)
    if magic != MAGIC:
        raise HeaderError(f"bad magic {magic!r}")
    if version != VERSION:
        raise HeaderError(f"unsupported version {version}")
    if C < 2 or d_in < 1:
        raise HeaderError(f"implausible header: C={C}, d_in={d_in}")
    dt = _record_dtype(d_in)
    body = len(buf) - _HEADER.size - 4
    expected = n * dt.itemsize
    if body != expected:
        if body >= 0 and body % dt.itemsize == 0 and body > 0:
            raise DatasetValidationError(
                f"header declares {n} records but payload holds {body // dt.itemsize}"
            )
        if body < expected:
            raise TruncatedFileError(f"payload truncated: {max(body, 0)} of {expected} bytes")
        raise DatasetValidationError(f"{body - expected} unexpected trailing bytes")
    payload = buf[_HEADER.size: _HEADER.size + expected]
    (crc,) = struct.unpack_from("<I", buf, _HEADER.size + expected)
    if crc != zlib.crc32(payload):
        raise ChecksumError(f"CRC32 mismatch: stored {crc:#010x}, computed {zlib.crc32(payload):#010x}")
    rec = np.frombuffer(payload, dtype=dt)
    ds = NoisyDataset(
        np.array(rec["x"], dtype=np.float32).reshape(n, d_in),
        np.array(rec["noisy"], dtype=np.uint32),
        np.array(rec["true"], dtype=np.uint32),
        np.array(rec["flipped"], dtype=bool),
        int(C),
    )
    if np.any(ds.noisy_labels >= C):
        raise DatasetValidationError("noisy label out of range")
    if np.any((ds.true_labels >= C) & (ds.true_labels != OPEN)):
        raise DatasetValidationError("true label out of range")
    consistent = (ds.noisy_labels != ds.true_labels) | ds.is_open
    if not np.array_equal(consistent, ds.flipped):
        raise DatasetValidationError("flipped flags disagree with labels")
    return ds


def read_dataset(path) -> NoisyDataset:
    return parse_dataset(Path(path).read_bytes())
