"""Exact squared-L2 nearest-neighbour memory of (embedding, label) pairs."""

from __future__ import annotations

import io
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .fileio import FormatError, atomic_write_bytes

MAGIC = b"NPMI"
VERSION = 1
_HEADER = struct.Struct("<4sIIQ")
# worst-case relative error of the expanded-norm distance, per dimension
_ULP = 2.0 ** -52


@dataclass(frozen=True)
class MemoryRecord:
    vector: np.ndarray
    label: int
    insertion_id: int


class FlatMemoryIndex:
    """Brute-force exact k-NN store with optional FIFO capacity.

    Vectors are held at float32 precision (widened to float64) so the
    in-memory state and the on-disk format agree bit for bit.
    """

    def __init__(self, dim: int, capacity: int | None = None):
        if dim < 1:
            raise ValueError(f"dim must be >= 1, got {dim}")
        if capacity is not None and capacity < 1:
            raise ValueError(f"capacity must be >= 1 or None, got {capacity}")
        self.dim = dim
        self.capacity = capacity
        self.next_id = 0
        self._vectors = np.empty((0, dim))
        self._labels = np.empty(0, dtype=np.int64)
        self._ids = np.empty(0, dtype=np.int64)
        self._sq_norms = np.empty(0)

    def __len__(self) -> int:
        return self._ids.shape[0]

    @property
    def vectors(self) -> np.ndarray:
        return self._vectors

    @property
    def labels(self) -> np.ndarray:
        return self._labels

    @property
    def ids(self) -> np.ndarray:
        return self._ids

    @property
    def records(self) -> list[MemoryRecord]:
        return [self._record(i) for i in range(len(self))]

    def _record(self, pos: int) -> MemoryRecord:
        return MemoryRecord(self._vectors[pos].copy(), int(self._labels[pos]), int(self._ids[pos]))

    def add_batch(self, vectors, labels) -> None:
        vecs = np.asarray(vectors, dtype=np.float64)
        if vecs.ndim == 1 and vecs.size == 0:
            vecs = vecs.reshape(0, self.dim)
        labs = np.asarray(labels, dtype=np.int64).reshape(-1)
        if vecs.ndim != 2 or vecs.shape[1] != self.dim:
            raise ValueError(f"add_batch: expected vectors of dimension {self.dim}, got shape {vecs.shape}")
        if vecs.shape[0] != labs.shape[0]:
            raise ValueError(f"add_batch: {vecs.shape[0]} vectors but {labs.shape[0]} labels")
        if labs.size and (labs.min() < 0 or labs.max() > 0xFFFF):
            raise ValueError("add_batch: labels must fit in an unsigned 16-bit field")
        vecs = vecs.astype(np.float32).astype(np.float64)
        n = vecs.shape[0]
        new_ids = np.arange(self.next_id, self.next_id + n, dtype=np.int64)
        self.next_id += n
        self._vectors = np.concatenate([self._vectors, vecs])
        self._labels = np.concatenate([self._labels, labs])
        self._ids = np.concatenate([self._ids, new_ids])
        self._sq_norms = np.concatenate([self._sq_norms, np.einsum("ij,ij->i", vecs, vecs)])
        if self.capacity is not None and len(self) > self.capacity:
            drop = len(self) - self.capacity
            self._vectors = self._vectors[drop:].copy()
            self._labels = self._labels[drop:].copy()
            self._ids = self._ids[drop:].copy()
            self._sq_norms = self._sq_norms[drop:].copy()

    def search_knn(self, query, k: int, exclude_exact: bool = False) -> list[tuple[MemoryRecord, float]]:
        """Return up to ``k`` (record, squared distance) pairs, nearest first.

        Ties are ordered by insertion id. With ``exclude_exact`` records at
        distance exactly zero are skipped.
        """
        q = np.asarray(query, dtype=np.float64).reshape(1, -1)
        positions, dists = self.search_batch(q, k, exclude_exact)
        return [(self._record(int(p)), float(d)) for p, d in zip(positions[0], dists[0])]

    def search_batch(self, queries: np.ndarray, k: int, exclude_exact: bool = False):
        """Exact k-NN for each row of ``queries``.

        Returns two lists (one entry per query) of storage positions and
        squared distances. A matrix-product estimate of every distance, with
        a proven error bound, narrows the candidates; survivors are then
        measured exactly as ``sum((x - q)**2)``.
        """
        q = np.asarray(queries, dtype=np.float64)
        if q.ndim != 2 or q.shape[1] != self.dim:
            raise ValueError(f"search: expected queries of dimension {self.dim}, got shape {q.shape}")
        if k < 1:
            raise ValueError(f"k must be >= 1, got {k}")
        n = len(self)
        out_pos: list[np.ndarray] = []
        out_dist: list[np.ndarray] = []
        if n == 0:
            empty_p, empty_d = np.empty(0, dtype=np.int64), np.empty(0)
            return [empty_p] * q.shape[0], [empty_d] * q.shape[0]

        x = self._vectors
        q_norms = np.einsum("ij,ij->i", q, q)
        approx = self._sq_norms[None, :] - 2.0 * (q @ x.T) + q_norms[:, None]
        slack = (4.0 * self.dim + 16.0) * _ULP * (self._sq_norms[None, :] + q_norms[:, None])
        lower = approx - slack
        upper = approx + slack
        for r in range(q.shape[0]):
            lo, up = lower[r], upper[r]
            need = k
            if exclude_exact:
                need += int(np.count_nonzero(lo <= 0.0))
            if need >= n:
                cand = np.arange(n)
            else:
                cutoff = np.partition(up, need - 1)[need - 1]
                cand = np.flatnonzero(lo <= cutoff)
            diff = x[cand] - q[r]
            exact = np.einsum("ij,ij->i", diff, diff)
            if exclude_exact:
                keep = exact != 0.0
                cand, exact = cand[keep], exact[keep]
            order = np.lexsort((self._ids[cand], exact))[:k]
            out_pos.append(cand[order])
            out_dist.append(exact[order])
        return out_pos, out_dist

    def retrieve_mean(self, queries: np.ndarray, k: int, exclude_exact: bool = False) -> np.ndarray:
        """Mean of the retrieved neighbours per query; zero rows when none."""
        q = np.asarray(queries, dtype=np.float64)
        out = np.zeros((q.shape[0], self.dim))
        if len(self) == 0:
            return out
        positions, _ = self.search_batch(q, k, exclude_exact)
        for r, pos in enumerate(positions):
            if pos.size:
                out[r] = self._vectors[pos].mean(axis=0)
        return out

    def __eq__(self, other) -> bool:
        if not isinstance(other, FlatMemoryIndex):
            return NotImplemented
        return (
            self.dim == other.dim
            and self.capacity == other.capacity
            and self.next_id == other.next_id
            and np.array_equal(self._vectors, other._vectors)
            and np.array_equal(self._labels, other._labels)
            and np.array_equal(self._ids, other._ids)
        )

    def to_bytes(self) -> bytes:
        buf = io.BytesIO()
        buf.write(_HEADER.pack(MAGIC, VERSION, self.dim, len(self)))
        if self.capacity is None:
            buf.write(struct.pack("<BQ", 0, 0))
        else:
            buf.write(struct.pack("<BQ", 1, self.capacity))
        # next_id trails the records so eviction history survives a round trip
        rec = np.dtype([("id", "<u8"), ("label", "<u2"), ("vec", "<f4", (self.dim,))])
        arr = np.empty(len(self), dtype=rec)
        arr["id"] = self._ids
        arr["label"] = self._labels
        arr["vec"] = self._vectors
        buf.write(arr.tobytes())
        buf.write(struct.pack("<Q", self.next_id))
        return buf.getvalue()

    @classmethod
    def from_bytes(cls, data: bytes) -> "FlatMemoryIndex":
        if len(data) < _HEADER.size:
            raise FormatError("memory index truncated in header", offset=len(data))
        magic, version, dim, count = _HEADER.unpack_from(data, 0)
        if magic != MAGIC:
            raise FormatError(f"bad magic {magic!r}, expected {MAGIC!r}", offset=0)
        if version != VERSION:
            raise FormatError(f"unsupported memory index version {version}", offset=4)
        off = _HEADER.size
        if len(data) < off + 9:
            raise FormatError("memory index truncated in capacity field", offset=len(data))
        has_cap, cap = struct.unpack_from("<BQ", data, off)
        off += 9
        rec = np.dtype([("id", "<u8"), ("label", "<u2"), ("vec", "<f4", (dim,))])
        body = rec.itemsize * count
        if len(data) < off + body:
            raise FormatError(
                f"memory index truncated: {count} records need {body} bytes", offset=len(data)
            )
        arr = np.frombuffer(data, dtype=rec, count=count, offset=off)
        off += body
        index = cls(dim, capacity=int(cap) if has_cap else None)
        if count:
            index._vectors = arr["vec"].astype(np.float64).reshape(count, dim)
            index._labels = arr["label"].astype(np.int64)
            index._ids = arr["id"].astype(np.int64)
            index._sq_norms = np.einsum("ij,ij->i", index._vectors, index._vectors)
        if len(data) >= off + 8:
            index.next_id = struct.unpack_from("<Q", data, off)[0]
            off += 8
        else:
            index.next_id = int(index._ids[-1]) + 1 if count else 0
        if off != len(data):
            raise FormatError(f"{len(data) - off} trailing bytes after memory index", offset=off)
        if count and np.any(np.diff(index._ids) <= 0):
            raise FormatError("insertion ids are not strictly increasing", offset=_HEADER.size + 9)
        return index

    def save(self, path) -> None:
        atomic_write_bytes(Path(path), self.to_bytes())

    @classmethod
    def load(cls, path) -> "FlatMemoryIndex":
        return cls.from_bytes(Path(path).read_bytes())


def aggregate_mean(neighbors, dim: int) -> np.ndarray:
    """Elementwise mean of neighbour vectors; zero vector for no neighbours."""
    if not neighbors:
        return np.zeros(dim)
    vecs = np.stack([rec.vector for rec, _ in neighbors])
    return vecs.mean(axis=0)
