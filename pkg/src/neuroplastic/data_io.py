"""Embedding datasets on disk, synthetic clusters, filename labels."""

from __future__ import annotations

import csv
import io
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .fileio import FormatError, atomic_write_bytes, atomic_write_text

MAGIC = b"NPEB"
VERSION = 1
_HEADER = struct.Struct("<4sIQIHB")


class InfeasibleSpecError(ValueError):
    pass


@dataclass
class EmbeddingDataset:
    vectors: np.ndarray
    labels: np.ndarray
    n_classes: int

    def __post_init__(self):
        self.vectors = np.asarray(self.vectors, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64).reshape(-1)
        if self.vectors.ndim != 2:
            raise ValueError(f"vectors must be 2-D, got shape {self.vectors.shape}")
        if self.vectors.shape[0] != self.labels.shape[0]:
            raise ValueError(f"{self.vectors.shape[0]} vectors but {self.labels.shape[0]} labels")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.n_classes):
            raise ValueError(f"labels must lie in [0, {self.n_classes})")
        if not np.all(np.isfinite(self.vectors)):
            raise ValueError("vectors contain non-finite values")

    @property
    def n(self) -> int:
        return self.vectors.shape[0]

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def __len__(self) -> int:
        return self.n

    def subset(self, idx) -> "EmbeddingDataset":
        return EmbeddingDataset(self.vectors[idx], self.labels[idx], self.n_classes)


# binary -------------------------------------------------------------------


def to_binary_bytes(ds: EmbeddingDataset, with_labels: bool = True) -> bytes:
    buf = io.BytesIO()
    buf.write(_HEADER.pack(MAGIC, VERSION, ds.n, ds.dim, ds.n_classes, 1 if with_labels else 0))
    buf.write(ds.vectors.astype("<f4").tobytes())
    if with_labels:
        buf.write(ds.labels.astype("<u2").tobytes())
    return buf.getvalue()


def from_binary_bytes(data: bytes) -> EmbeddingDataset:
    if len(data) < _HEADER.size:
        raise FormatError("dataset truncated in header", offset=len(data))
    magic, version, n, d, c, has_labels = _HEADER.unpack_from(data, 0)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {MAGIC!r}", offset=0)
    if version != VERSION:
        raise FormatError(f"unsupported dataset version {version}", offset=4)
    off = _HEADER.size
    need = off + 4 * n * d + (2 * n if has_labels else 0)
    if len(data) < need:
        raise FormatError(f"dataset truncated: expected {need} bytes, got {len(data)}", offset=len(data))
    if len(data) > need:
        raise FormatError(f"{len(data) - need} trailing bytes after dataset", offset=need)
    vecs = np.frombuffer(data, dtype="<f4", count=n * d, offset=off).astype(np.float64).reshape(n, d)
    off += 4 * n * d
    if has_labels:
        labels = np.frombuffer(data, dtype="<u2", count=n, offset=off).astype(np.int64)
    else:
        labels = np.zeros(n, dtype=np.int64)
    if labels.size and labels.max() >= c:
        raise FormatError(f"label {int(labels.max())} >= class_count {c}", offset=off)
    if not np.all(np.isfinite(vecs)):
        raise FormatError("non-finite vector values", offset=_HEADER.size)
    return EmbeddingDataset(vecs, labels, max(int(c), 1))


def write_binary(ds: EmbeddingDataset, path) -> None:
    atomic_write_bytes(Path(path), to_binary_bytes(ds))


def read_binary(path) -> EmbeddingDataset:
    return from_binary_bytes(Path(path).read_bytes())


# csv ----------------------------------------------------------------------


def write_csv(ds: EmbeddingDataset, path) -> None:
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(["label", *(f"f{j}" for j in range(ds.dim))])
    for y, row in zip(ds.labels, ds.vectors):
        w.writerow([int(y), *(repr(float(v)) for v in row)])
    atomic_write_text(Path(path), out.getvalue())


def parse_csv_rows(text: str, require_label: bool = True) -> tuple[np.ndarray, np.ndarray | None, int]:
    """Parse ``label,f0..`` (or ``f0..`` when labels are optional) CSV text.

    Returns (vectors, labels or None, dim). Errors carry 1-based line numbers.
    """
    reader = csv.reader(io.StringIO(text))
    try:
        header = next(reader)
    except StopIteration:
        raise FormatError("empty CSV: missing header") from None
    has_label = bool(header) and header[0].strip() == "label"
    if require_label and not has_label:
        raise FormatError(f"line 1: expected first column 'label', got {header[:1]}")
    feat_cols = header[1:] if has_label else header
    dim = len(feat_cols)
    vecs, labels = [], []
    for lineno, row in enumerate(reader, start=2):
        if not row:
            continue
        if len(row) != len(header):
            raise FormatError(f"line {lineno}: expected {len(header)} columns, got {len(row)}")
        if has_label:
            try:
                labels.append(int(row[0]))
            except ValueError:
                raise FormatError(f"line {lineno}, column 'label': not an integer: {row[0]!r}") from None
        values = []
        for name, cell in zip(feat_cols, row[1:] if has_label else row):
            try:
                values.append(float(cell))
            except ValueError:
                raise FormatError(f"line {lineno}, column {name!r}: not a number: {cell!r}") from None
        vecs.append(values)
    arr = np.array(vecs, dtype=np.float64).reshape(len(vecs), dim)
    return arr, (np.array(labels, dtype=np.int64) if has_label else None), dim


def read_csv(path, n_classes: int | None = None) -> EmbeddingDataset:
    vecs, labels, _ = parse_csv_rows(Path(path).read_text(encoding="utf-8"))
    if labels.size and labels.min() < 0:
        raise FormatError("negative label in CSV")
    c = n_classes if n_classes is not None else (int(labels.max()) + 1 if labels.size else 1)
    return EmbeddingDataset(vecs, labels, c)


def read_dataset(path) -> EmbeddingDataset:
    """Pick the reader by extension: ``.csv`` for text, anything else binary."""
    p = Path(path)
    return read_csv(p) if p.suffix.lower() == ".csv" else read_binary(p)


def write_dataset(ds: EmbeddingDataset, path, fmt: str | None = None) -> None:
    fmt = fmt or ("csv" if Path(path).suffix.lower() == ".csv" else "bin")
    if fmt == "csv":
        write_csv(ds, path)
    elif fmt == "bin":
        write_binary(ds, path)
    else:
        raise ValueError(f"unknown format {fmt!r}")


# synthetic ----------------------------------------------------------------


@dataclass(frozen=True)
class SyntheticSpec:
    classes: int
    dim: int
    per_class: int
    radius: float = 5.0
    noise_std: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.classes < 1 or self.dim < 1 or self.per_class < 0:
            raise ValueError("classes and dim must be >= 1, per_class >= 0")
        if self.noise_std <= 0 or self.radius <= 0:
            raise ValueError("radius and noise_std must be positive")


MAX_REJECTIONS = 10_000


def cluster_centers(spec: SyntheticSpec, rng: np.random.Generator) -> np.ndarray:
    """Uniform points on the radius-r sphere, pairwise at least r apart."""
    centers: list[np.ndarray] = []
    rejections = 0
    while len(centers) < spec.classes:
        g = rng.standard_normal(spec.dim)
        norm = np.linalg.norm(g)
        if norm == 0.0:
            continue
        c = spec.radius * g / norm
        if all(np.linalg.norm(c - o) >= spec.radius for o in centers):
            centers.append(c)
            continue
        rejections += 1
        if rejections >= MAX_REJECTIONS:
            raise InfeasibleSpecError(
                f"could not place {spec.classes} centers in dim {spec.dim} after "
                f"{MAX_REJECTIONS} rejections; raise radius or lower classes"
            )
    return np.stack(centers)


def gen_synthetic(spec: SyntheticSpec) -> EmbeddingDataset:
    """Gaussian clusters around well-separated centers, class-major order.

    Values are rounded to float32 so in-memory data match what the binary
    format stores.
    """
    rng = np.random.default_rng(spec.seed)
    centers = cluster_centers(spec, rng)
    noise = rng.standard_normal((spec.classes, spec.per_class, spec.dim)) * spec.noise_std
    vecs = (centers[:, None, :] + noise).reshape(-1, spec.dim)
    vecs = vecs.astype(np.float32).astype(np.float64)
    labels = np.repeat(np.arange(spec.classes), spec.per_class)
    return EmbeddingDataset(vecs, labels, spec.classes)


def label_from_filename(name: str) -> int:
    """1 (defective) iff the case-sensitive substring ``GT`` occurs in ``name``."""
    return 1 if "GT" in name else 0
