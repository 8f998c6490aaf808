"""Fusion layer, gated modular blocks and softmax head."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .numerics import (
    BatchNorm,
    Parameter,
    ShapeError,
    Tensor,
    affine,
    logit,
    mul,
    relu,
    sigmoid,
    sigmoid_t,
    softmax_rows,
    sub,
)

NEW_BLOCK_GATE = logit(0.1)


class CapacityError(RuntimeError):
    """Growth would exceed the configured block cap."""


def _uniform(rng: np.random.Generator, shape, bound: float) -> np.ndarray:
    return rng.uniform(-bound, bound, size=shape)


class FusionLayer:
    """``z = relu(bn(W_f [e ; f_mem] + b_f))``."""

    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator):
        self.d_in = d_in
        self.d_out = d_out
        self.weight = Parameter("fusion.weight", _uniform(rng, (d_out, d_in), math.sqrt(6.0 / d_in)))
        self.bias = Parameter("fusion.bias", np.zeros((1, d_out)))
        self.bn = BatchNorm(d_out, prefix="fusion.bn")

    def parameters(self) -> list[Parameter]:
        return [self.weight, self.bias, *self.bn.parameters()]

    def pre_norm(self, embeddings: np.ndarray, retrieved: np.ndarray) -> Tensor:
        e = np.asarray(embeddings, dtype=np.float64)
        r = np.asarray(retrieved, dtype=np.float64)
        if e.ndim == 1:
            e, r = e.reshape(1, -1), r.reshape(1, -1)
        if e.shape[0] != r.shape[0] or e.shape[1] + r.shape[1] != self.d_in:
            raise ShapeError(
                f"fuse: embedding shape {e.shape} and retrieved shape {r.shape} "
                f"do not concatenate to {self.d_in} features"
            )
        return affine(Tensor(np.concatenate([e, r], axis=1)), self.weight, self.bias)

    def __call__(self, embeddings: np.ndarray, retrieved: np.ndarray) -> Tensor:
        return relu(self.bn(self.pre_norm(embeddings, retrieved)))


@dataclass
class ModularBlock:
    weight: Parameter
    bias: Parameter
    gate: Parameter
    created_at_epoch: int = 0

    @classmethod
    def create(cls, key: int, width: int, gate: float, created_at_epoch: int,
               rng: np.random.Generator) -> "ModularBlock":
        return cls(
            weight=Parameter(f"blocks.{key}.weight", _uniform(rng, (width, width), math.sqrt(6.0 / width))),
            bias=Parameter(f"blocks.{key}.bias", np.zeros((1, width))),
            gate=Parameter(f"blocks.{key}.gate", np.array([[gate]])),
            created_at_epoch=created_at_epoch,
        )

    @property
    def key(self) -> int:
        return int(self.weight.id.split(".")[1])

    @property
    def gamma(self) -> float:
        return sigmoid(float(self.gate.value[0, 0]))

    def parameters(self) -> list[Parameter]:
        return [self.weight, self.bias, self.gate]

    def transform(self, h: Tensor) -> Tensor:
        return relu(affine(h, self.weight, self.bias))


@dataclass
class ForwardResult:
    logits: Tensor
    probs: np.ndarray
    gammas: list[float]
    fired: list[bool] | None  # hard mode only


@dataclass
class Census:
    total: int
    per_block: list[int]
    active_blocks: int


class NeuroClassifier:
    """Growable classifier over fused embedding + memory features.

    ``training`` toggles both batch-norm statistics and the gate rule:
    soft residual blending while training, hard skipping at inference.
    """

    def __init__(
        self,
        d_embed: int,
        n_classes: int,
        d_prime: int = 128,
        n_blocks: int = 15,
        tau: float = 0.5,
        max_blocks: int = 64,
        initial_gate: float = logit(0.9),
        rng: np.random.Generator | None = None,
    ):
        if not 0.0 < tau < 1.0:
            raise ValueError(f"tau must lie in (0, 1), got {tau}")
        if n_blocks < 1:
            raise ValueError("a classifier needs at least one block")
        if n_blocks > max_blocks:
            raise CapacityError(f"{n_blocks} initial blocks exceed max_blocks={max_blocks}")
        if n_classes < 1:
            raise ValueError("n_classes must be >= 1")
        rng = rng if rng is not None else np.random.default_rng(0)
        self.d_embed = d_embed
        self.n_classes = n_classes
        self.d_prime = d_prime
        self.tau = tau
        self.max_blocks = max_blocks
        self.fusion = FusionLayer(2 * d_embed, d_prime, rng)
        self.blocks: list[ModularBlock] = [
            ModularBlock.create(i, d_prime, initial_gate, 0, rng) for i in range(n_blocks)
        ]
        self._next_key = n_blocks
        bound = math.sqrt(6.0 / (d_prime + n_classes))
        self.head_weight = Parameter("head.weight", _uniform(rng, (n_classes, d_prime), bound))
        self.head_bias = Parameter("head.bias", np.zeros((1, n_classes)))
        self.training = True

    # mode switches ---------------------------------------------------------

    def train(self) -> "NeuroClassifier":
        self.training = True
        self.fusion.bn.training = True
        return self

    def eval(self) -> "NeuroClassifier":
        self.training = False
        self.fusion.bn.training = False
        return self

    # structure -------------------------------------------------------------

    def parameters(self) -> list[Parameter]:
        params = self.fusion.parameters()
        for b in self.blocks:
            params.extend(b.parameters())
        params.extend([self.head_weight, self.head_bias])
        return params

    def parameter_map(self) -> dict[str, Parameter]:
        return {p.id: p for p in self.parameters()}

    def active_mask(self) -> list[bool]:
        return [b.gamma > self.tau for b in self.blocks]

    def census(self) -> Census:
        per_block = [sum(p.value.size for p in b.parameters()) for b in self.blocks]
        total = sum(p.value.size for p in self.parameters())
        return Census(total, per_block, sum(self.active_mask()))

    def grow(self, count: int, epoch: int, rng: np.random.Generator) -> list[str]:
        """Append ``count`` low-influence blocks; existing tensors are untouched."""
        if count < 0:
            raise ValueError("growth count must be nonnegative")
        if len(self.blocks) + count > self.max_blocks:
            raise CapacityError(
                f"growing {len(self.blocks)} blocks by {count} exceeds max_blocks={self.max_blocks}"
            )
        new_ids = []
        for _ in range(count):
            block = ModularBlock.create(self._next_key, self.d_prime, NEW_BLOCK_GATE, epoch, rng)
            self._next_key += 1
            self.blocks.append(block)
            new_ids.append(block.weight.id)
        return new_ids

    # computation -----------------------------------------------------------

    def fuse(self, embeddings: np.ndarray, retrieved: np.ndarray) -> Tensor:
        return self.fusion(embeddings, retrieved)

    def forward(self, z: Tensor, hard: bool | None = None) -> ForwardResult:
        if hard is None:
            hard = not self.training
        if z.cols != self.d_prime:
            raise ShapeError(f"forward: expected {self.d_prime} features, got {z.shape}")
        h = z
        gammas: list[float] = []
        fired: list[bool] = []
        for block in self.blocks:
            if hard:
                gamma = block.gamma
                gammas.append(gamma)
                on = gamma > self.tau
                fired.append(on)
                if on:
                    h = block.transform(h)
            else:
                g = sigmoid_t(block.gate)
                gammas.append(float(g.value[0, 0]))
                h = mul(g, block.transform(h)) + mul(sub(Tensor(1.0), g), h)
        logits = affine(h, self.head_weight, self.head_bias)
        probs = softmax_rows(logits).value
        return ForwardResult(logits, probs, gammas, fired if hard else None)

    def __call__(self, embeddings: np.ndarray, retrieved: np.ndarray, hard: bool | None = None) -> ForwardResult:
        return self.forward(self.fuse(embeddings, retrieved), hard=hard)


def predict_from_logits(logits) -> np.ndarray:
    """Row-wise argmax; ties go to the lowest class index."""
    v = logits.value if isinstance(logits, Tensor) else np.asarray(logits, dtype=np.float64)
    return np.argmax(np.atleast_2d(v), axis=1)


def predict(model: NeuroClassifier, z: Tensor) -> np.ndarray:
    return predict_from_logits(model.forward(z).logits)
