"""Adam with per-parameter bias-corrected moments."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from .tensor import Parameter


@dataclass(frozen=True)
class AdamConfig:
    alpha: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if not 0.0 <= self.beta1 < 1.0:
            raise ValueError(f"beta1 must lie in [0, 1), got {self.beta1}")
        if not 0.0 <= self.beta2 < 1.0:
            raise ValueError(f"beta2 must lie in [0, 1), got {self.beta2}")
        # alpha == 0 is allowed so a run can freeze parameters
        if self.alpha < 0:
            raise ValueError(f"alpha must be nonnegative, got {self.alpha}")
        if self.eps <= 0:
            raise ValueError(f"eps must be positive, got {self.eps}")


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def fresh(cls, shape) -> "AdamState":
        return cls(np.zeros(shape), np.zeros(shape), 0)


def adam_step(params: Iterable[Parameter], states: dict[str, AdamState], config: AdamConfig) -> None:
    """Apply one Adam update to every parameter in place.

    Each state carries its own step counter, so parameters introduced
    mid-training start their bias correction from t = 1.
    """
    b1, b2 = config.beta1, config.beta2
    for p in params:
        st = states[p.id]
        g = p.grad
        if g.shape != p.value.shape or st.m.shape != g.shape or st.v.shape != g.shape:
            raise ValueError(
                f"adam: shape mismatch for {p.id}: value {p.value.shape}, grad {g.shape}, "
                f"state {st.m.shape}/{st.v.shape}"
            )
        st.t += 1
        st.m = b1 * st.m + (1.0 - b1) * g
        st.v = b2 * st.v + (1.0 - b2) * (g * g)
        m_hat = st.m / (1.0 - b1 ** st.t)
        v_hat = st.v / (1.0 - b2 ** st.t)
        p.value = p.value - config.alpha * m_hat / (np.sqrt(v_hat) + config.eps)


@dataclass
class Adam:
    """Owns the moment states for a growing set of parameters."""

    config: AdamConfig = field(default_factory=AdamConfig)
    states: dict[str, AdamState] = field(default_factory=dict)

    def step(self, params: list[Parameter]) -> None:
        for p in params:
            if p.id not in self.states:
                self.states[p.id] = AdamState.fresh(p.value.shape)
        adam_step(params, self.states, self.config)

    @staticmethod
    def zero_grad(params: list[Parameter]) -> None:
        for p in params:
            p.zero_grad()
