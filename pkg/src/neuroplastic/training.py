"""Memory-augmented training loop with growth checks and checkpoints."""

from __future__ import annotations

import io
import json
import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .config import SplitSpec, TrainConfig
from .data_io import EmbeddingDataset
from .fileio import FormatError, atomic_write_bytes, atomic_write_text
from .growth import GrowthLog, SuppressedGrowth, should_grow
from .memory import FlatMemoryIndex
from .model import CapacityError, ModularBlock, NeuroClassifier, predict_from_logits
from .numerics import Adam, AdamState, Parameter, Tensor, backward, no_grad, softmax_cross_entropy
from .numerics.ops import PROB_FLOOR

log = logging.getLogger(__name__)

LOG_COLUMNS = (
    "epoch", "train_loss", "train_acc", "val_loss", "val_acc",
    "n_blocks", "active_blocks", "memory_size", "growth_event",
)
EVAL_CHUNK = 256


def split_dataset(ds: EmbeddingDataset, spec: SplitSpec):
    """Seeded shuffle, then contiguous train/val slices; the remainder is test."""
    n = ds.n
    if n < 10:
        raise ValueError(f"need at least 10 samples to split, got {n}")
    perm = np.random.default_rng(spec.seed).permutation(n)
    n_train = int(np.floor(spec.train * n + 1e-9))
    n_val = int(np.floor(spec.val * n + 1e-9))
    return (
        ds.subset(perm[:n_train]),
        ds.subset(perm[n_train:n_train + n_val]),
        ds.subset(perm[n_train + n_val:]),
    )


def batch_slices(n: int, batch_size: int) -> list[slice]:
    """Contiguous batches; a trailing single row joins the previous batch."""
    bounds = list(range(0, n, batch_size)) + [n]
    if len(bounds) > 2 and bounds[-1] - bounds[-2] == 1:
        del bounds[-2]
    return [slice(a, b) for a, b in zip(bounds[:-1], bounds[1:])]


def retrieve(memory: FlatMemoryIndex, vectors: np.ndarray, config: TrainConfig, training: bool) -> np.ndarray:
    if not config.use_memory:
        return np.zeros_like(vectors)
    return memory.retrieve_mean(vectors, config.knn_k, exclude_exact=config.exclude_exact and training)


def train_epoch(
    model: NeuroClassifier,
    optimizer: Adam,
    memory: FlatMemoryIndex,
    train_set: EmbeddingDataset,
    config: TrainConfig,
    rng: np.random.Generator,
) -> tuple[float, float]:
    """One pass over ``train_set`` in a seeded order. Returns (mean loss, accuracy)."""
    model.train()
    order = rng.permutation(train_set.n)
    loss_sum, correct = 0.0, 0
    for sl in batch_slices(train_set.n, config.batch_size):
        idx = order[sl]
        x = train_set.vectors[idx]
        y = train_set.labels[idx]
        retrieved = retrieve(memory, x, config, training=True)
        out = model(x, retrieved, hard=False)
        loss, probs = softmax_cross_entropy(out.logits, y)
        params = model.parameters()
        optimizer.zero_grad(params)
        backward(loss)
        optimizer.step(params)
        if config.use_memory:
            memory.add_batch(x, y)
        loss_sum += loss.item() * len(idx)
        correct += int(np.count_nonzero(np.argmax(probs, axis=1) == y))
    return loss_sum / train_set.n, correct / train_set.n


@dataclass
class EvalResult:
    loss: float
    accuracy: float
    predictions: np.ndarray
    probs: np.ndarray


def infer(model: NeuroClassifier, memory: FlatMemoryIndex, vectors: np.ndarray,
          config: TrainConfig) -> np.ndarray:
    """Hard-gated, eval-mode class probabilities; touches no state."""
    was_training = model.training
    model.eval()
    chunks = []
    try:
        with no_grad():
            for start in range(0, vectors.shape[0], EVAL_CHUNK):
                x = vectors[start:start + EVAL_CHUNK]
                out = model(x, retrieve(memory, x, config, training=False), hard=True)
                chunks.append(out.probs)
    finally:
        if was_training:
            model.train()
    if not chunks:
        return np.empty((0, model.n_classes))
    return np.concatenate(chunks)


def evaluate(model: NeuroClassifier, memory: FlatMemoryIndex, ds: EmbeddingDataset,
             config: TrainConfig) -> EvalResult:
    probs = infer(model, memory, ds.vectors, config)
    if ds.n == 0:
        return EvalResult(0.0, 0.0, np.empty(0, dtype=np.int64), probs)
    picked = np.maximum(probs[np.arange(ds.n), ds.labels], PROB_FLOOR)
    preds = predict_from_logits(probs)
    return EvalResult(
        float(-np.log(picked).sum() / ds.n),
        float(np.count_nonzero(preds == ds.labels) / ds.n),
        preds,
        probs,
    )


@dataclass
class LogRow:
    epoch: int
    train_loss: float
    train_acc: float
    val_loss: float
    val_acc: float
    n_blocks: int
    active_blocks: int
    memory_size: int
    growth_event: int

    def as_list(self) -> list:
        return [getattr(self, c) for c in LOG_COLUMNS]


def log_to_csv(rows: list[LogRow]) -> str:
    lines = [",".join(LOG_COLUMNS)]
    for r in rows:
        lines.append(",".join(repr(v) if isinstance(v, float) else str(v) for v in r.as_list()))
    return "\n".join(lines) + "\n"


Evaluator = Callable[["Trainer", EmbeddingDataset, int], tuple[float, float]]


@dataclass
class FitResult:
    rows: list[LogRow]
    growth_log: GrowthLog
    stopped_early: bool


class Trainer:
    """Owns model, optimizer, memory and RNG for one training run."""

    def __init__(self, config: TrainConfig, d_embed: int, n_classes: int):
        self.config = config
        self.rng = np.random.default_rng(config.seed)
        g = config.growth
        self.model = NeuroClassifier(
            d_embed, n_classes, d_prime=config.d_prime, n_blocks=g.initial_blocks,
            tau=config.tau, max_blocks=g.max_blocks, initial_gate=config.initial_gate, rng=self.rng,
        )
        self.optimizer = Adam(config.adam)
        self.memory = FlatMemoryIndex(d_embed, capacity=config.memory_capacity)
        self.epoch = 0
        self.history: list[tuple[int, float]] = []
        self.growth_log = GrowthLog()
        self.rows: list[LogRow] = []
        self.best_val: float | None = None
        self.bad_epochs = 0
        self.stopped = False

    def evaluate(self, ds: EmbeddingDataset) -> EvalResult:
        return evaluate(self.model, self.memory, ds, self.config)

    def fit(
        self,
        train: EmbeddingDataset,
        val: EmbeddingDataset,
        epochs: int | None = None,
        val_evaluator: Evaluator | None = None,
    ) -> FitResult:
        """Run epochs ``self.epoch + 1 .. epochs``; resumable at any boundary.

        ``val_evaluator`` replaces the validation pass (used to inject
        crafted loss series); it receives (trainer, val set, epoch).
        """
        target = epochs if epochs is not None else self.config.epochs
        g = self.config.growth
        while self.epoch < target and not self.stopped:
            self.epoch += 1
            t = self.epoch
            train_loss, train_acc = train_epoch(
                self.model, self.optimizer, self.memory, train, self.config, self.rng
            )
            if val_evaluator is not None:
                val_loss, val_acc = val_evaluator(self, val, t)
            else:
                res = self.evaluate(val)
                val_loss, val_acc = res.loss, res.accuracy
            self.history.append((t, float(val_loss)))
            event = should_grow(self.history, g, len(self.model.blocks), self.growth_log)
            grew = 0
            if event is not None:
                try:
                    self.model.grow(event.blocks_added, t, self.rng)
                except CapacityError as exc:
                    log.warning("growth suppressed at epoch %d: %s", t, exc)
                else:
                    self.growth_log.record(event)
                    grew = 1
                    log.info("epoch %d: grew %d blocks -> %d", t, event.blocks_added, len(self.model.blocks))
            self.rows.append(LogRow(
                t, float(train_loss), float(train_acc), float(val_loss), float(val_acc),
                len(self.model.blocks), sum(self.model.active_mask()), len(self.memory), grew,
            ))
            log.info("epoch %d: train_loss=%.4f val_loss=%.4f val_acc=%.4f",
                     t, train_loss, val_loss, val_acc)
            self._early_stop(val_loss)
        return FitResult(list(self.rows), self.growth_log, self.stopped)

    def _early_stop(self, val_loss: float) -> None:
        patience = self.config.early_stop_patience
        if patience is None:
            return
        if self.best_val is None or val_loss < self.best_val:
            self.best_val = float(val_loss)
            self.bad_epochs = 0
        else:
            self.bad_epochs += 1
            if self.bad_epochs >= patience:
                self.stopped = True

    def log_csv(self) -> str:
        return log_to_csv(self.rows)

    # checkpoints -------------------------------------------------------------

    def save_checkpoint(self, path) -> None:
        atomic_write_bytes(Path(path), checkpoint_bytes(self))

    @classmethod
    def load_checkpoint(cls, path) -> "Trainer":
        p = Path(path)
        if not p.exists():
            raise FileNotFoundError(f"checkpoint not found: {p}")
        return trainer_from_bytes(p.read_bytes())


def fit(config: TrainConfig, train: EmbeddingDataset, val: EmbeddingDataset) -> tuple[Trainer, FitResult]:
    trainer = Trainer(config, train.dim, train.n_classes)
    return trainer, trainer.fit(train, val)


# checkpoint format --------------------------------------------------------

CKPT_MAGIC = b"NPMC"
CKPT_VERSION = 1
SECTION_NAMES = ("config", "params", "adam", "bn", "memory", "growth", "rng")


class UnsupportedVersionError(FormatError):
    pass


def _pack_adam(states: dict[str, AdamState], order: list[str]) -> bytes:
    buf = io.BytesIO()
    ids = [i for i in order if i in states]
    buf.write(struct.pack("<I", len(ids)))
    for pid in ids:
        st = states[pid]
        raw = pid.encode("utf-8")
        buf.write(struct.pack("<H", len(raw)))
        buf.write(raw)
        buf.write(struct.pack("<Q", st.t))
        buf.write(st.m.astype("<f8").tobytes())
        buf.write(st.v.astype("<f8").tobytes())
    return buf.getvalue()


def checkpoint_bytes(tr: Trainer) -> bytes:
    model = tr.model
    params = model.parameters()
    header = {
        "config": tr.config.to_dict(),
        "model": {
            "d_embed": model.d_embed,
            "n_classes": model.n_classes,
            "d_prime": model.d_prime,
            "tau": model.tau,
            "max_blocks": model.max_blocks,
            "next_key": model._next_key,
            "blocks": [{"key": b.key, "created_at_epoch": b.created_at_epoch} for b in model.blocks],
            "params": [[p.id, list(p.value.shape)] for p in params],
            "bn": {"momentum": model.fusion.bn.momentum, "epsilon": model.fusion.bn.epsilon},
        },
        "trainer": {
            "epoch": tr.epoch,
            "history": tr.history,
            "rows": [r.as_list() for r in tr.rows],
            "best_val": tr.best_val,
            "bad_epochs": tr.bad_epochs,
            "stopped": tr.stopped,
            "suppressed": tr.growth_log.suppressed_to_json(),
        },
    }
    bn = model.fusion.bn
    sections = [
        json.dumps(header).encode("utf-8"),
        b"".join(p.value.astype("<f8").tobytes() for p in params),
        _pack_adam(tr.optimizer.states, [p.id for p in params]),
        bn.running_mean.astype("<f8").tobytes() + bn.running_var.astype("<f8").tobytes(),
        tr.memory.to_bytes(),
        tr.growth_log.to_jsonl().encode("utf-8"),
        json.dumps(tr.rng.bit_generator.state).encode("utf-8"),
    ]
    buf = io.BytesIO()
    buf.write(CKPT_MAGIC)
    buf.write(struct.pack("<II", CKPT_VERSION, len(sections)))
    for s in sections:
        buf.write(struct.pack("<Q", len(s)))
        buf.write(s)
    return buf.getvalue()


def _read_sections(data: bytes) -> list[bytes]:
    if len(data) < 12:
        raise FormatError("checkpoint truncated in header", offset=len(data))
    if data[:4] != CKPT_MAGIC:
        raise FormatError(f"bad magic {data[:4]!r}, expected {CKPT_MAGIC!r}", offset=0)
    version, count = struct.unpack_from("<II", data, 4)
    if version != CKPT_VERSION:
        raise UnsupportedVersionError(f"unsupported checkpoint version {version}", offset=4)
    if count != len(SECTION_NAMES):
        raise FormatError(f"expected {len(SECTION_NAMES)} sections, found {count}", offset=8)
    off = 12
    out = []
    for name in SECTION_NAMES:
        if off + 8 > len(data):
            raise FormatError(f"checkpoint truncated before section {name!r}", offset=off)
        (length,) = struct.unpack_from("<Q", data, off)
        off += 8
        if off + length > len(data):
            raise FormatError(f"checkpoint section {name!r} truncated", offset=off)
        out.append(data[off:off + length])
        off += length
    if off != len(data):
        raise FormatError(f"{len(data) - off} trailing bytes after checkpoint", offset=off)
    return out


def trainer_from_bytes(data: bytes) -> Trainer:
    sections = _read_sections(data)
    try:
        return _restore(sections)
    except FormatError:
        raise
    except (struct.error, KeyError, TypeError, ValueError, UnicodeDecodeError) as exc:
        raise FormatError(f"corrupt checkpoint payload: {exc}") from None


def _restore(sections: list[bytes]) -> Trainer:
    cfg_b, params_b, adam_b, bn_b, mem_b, growth_b, rng_b = sections
    header = json.loads(cfg_b)
    config = TrainConfig.from_dict(header["config"])
    m = header["model"]
    tr = Trainer.__new__(Trainer)
    tr.config = config
    model = NeuroClassifier(
        m["d_embed"], m["n_classes"], d_prime=m["d_prime"], n_blocks=1,
        tau=m["tau"], max_blocks=m["max_blocks"], rng=np.random.default_rng(0),
    )
    model.blocks = [
        ModularBlock.create(b["key"], m["d_prime"], 0.0, b["created_at_epoch"], np.random.default_rng(0))
        for b in m["blocks"]
    ]
    model._next_key = m["next_key"]
    model.fusion.bn.momentum = m["bn"]["momentum"]
    model.fusion.bn.epsilon = m["bn"]["epsilon"]
    pmap = model.parameter_map()
    manifest = m["params"]
    if [pid for pid, _ in manifest] != [p.id for p in model.parameters()]:
        raise FormatError("parameter manifest does not match model structure")
    flat = np.frombuffer(params_b, dtype="<f8")
    expected = sum(int(np.prod(shape)) for _, shape in manifest)
    if flat.size != expected or len(params_b) != 8 * expected:
        raise FormatError(f"parameter blob holds {flat.size} values, expected {expected}")
    pos = 0
    shapes = {}
    for pid, shape in manifest:
        size = int(np.prod(shape))
        p: Parameter = pmap[pid]
        p.value = flat[pos:pos + size].astype(np.float64).reshape(shape)
        p.zero_grad()
        shapes[pid] = tuple(shape)
        pos += size

    tr.optimizer = Adam(config.adam)
    off = 0
    (count,) = struct.unpack_from("<I", adam_b, off)
    off += 4
    for _ in range(count):
        (ln,) = struct.unpack_from("<H", adam_b, off)
        off += 2
        pid = adam_b[off:off + ln].decode("utf-8")
        off += ln
        (t,) = struct.unpack_from("<Q", adam_b, off)
        off += 8
        if pid not in shapes:
            raise FormatError(f"adam state for unknown parameter {pid!r}")
        size = int(np.prod(shapes[pid]))
        mv = np.frombuffer(adam_b, dtype="<f8", count=2 * size, offset=off).astype(np.float64)
        off += 16 * size
        tr.optimizer.states[pid] = AdamState(mv[:size].reshape(shapes[pid]).copy(),
                                             mv[size:].reshape(shapes[pid]).copy(), int(t))

    stats = np.frombuffer(bn_b, dtype="<f8").astype(np.float64)
    if stats.size != 2 * m["d_prime"]:
        raise FormatError("batch-norm statistics section has the wrong size")
    model.fusion.bn.running_mean = stats[: m["d_prime"]].copy()
    model.fusion.bn.running_var = stats[m["d_prime"]:].copy()
    model.train()
    tr.model = model

    tr.memory = FlatMemoryIndex.from_bytes(mem_b)
    tr.growth_log = GrowthLog.from_jsonl(growth_b.decode("utf-8"))
    tr.growth_log.suppressed = [SuppressedGrowth(**s) for s in header["trainer"]["suppressed"]]
    tr.rng = np.random.default_rng()
    tr.rng.bit_generator.state = json.loads(rng_b)

    st = header["trainer"]
    tr.epoch = st["epoch"]
    tr.history = [(int(e), float(v)) for e, v in st["history"]]
    tr.rows = [LogRow(*r) for r in st["rows"]]
    tr.best_val = st["best_val"]
    tr.bad_epochs = st["bad_epochs"]
    tr.stopped = st["stopped"]
    return tr


def save_checkpoint(path, trainer: Trainer) -> None:
    trainer.save_checkpoint(path)


def load_checkpoint(path) -> Trainer:
    return Trainer.load_checkpoint(path)


def write_log(path, trainer: Trainer) -> None:
    atomic_write_text(Path(path), trainer.log_csv())


def write_growth_log(path, trainer: Trainer) -> None:
    atomic_write_text(Path(path), trainer.growth_log.to_jsonl())
