"""When to grow: predicates over the validation-loss history."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from enum import Enum
from typing import Sequence


class GrowthPolicy(str, Enum):
    IMPROVEMENT_DELTA = "improvement-delta"
    SLOPE_WINDOW = "slope-window"
    ABSOLUTE_THRESHOLD = "absolute-threshold"


@dataclass(frozen=True)
class GrowthConfig:
    policy: GrowthPolicy = GrowthPolicy.IMPROVEMENT_DELTA
    interval: int = 3
    epsilon: float = 1e-3
    lam: float = 1.0
    grow_count: int = 3
    max_blocks: int = 64
    initial_blocks: int = 15
    enabled: bool = True

    def __post_init__(self):
        object.__setattr__(self, "policy", GrowthPolicy(self.policy))
        if self.interval < 1:
            raise ValueError(f"interval must be >= 1, got {self.interval}")
        if self.epsilon <= 0:
            raise ValueError(f"epsilon must be > 0, got {self.epsilon}")
        if self.grow_count < 1:
            raise ValueError(f"grow_count must be >= 1, got {self.grow_count}")
        if self.initial_blocks < 1:
            raise ValueError(f"initial_blocks must be >= 1, got {self.initial_blocks}")
        if self.max_blocks < self.initial_blocks:
            raise ValueError(
                f"max_blocks ({self.max_blocks}) must be >= initial_blocks ({self.initial_blocks})"
            )


@dataclass(frozen=True)
class GrowthEvent:
    epoch: int
    blocks_added: int
    policy: str
    values: tuple[float, ...]

    def to_json(self) -> str:
        return json.dumps(
            {"epoch": self.epoch, "blocks_added": self.blocks_added,
             "policy": self.policy, "values": list(self.values)}
        )


@dataclass(frozen=True)
class SuppressedGrowth:
    epoch: int
    requested: int
    current_blocks: int
    max_blocks: int


@dataclass
class GrowthLog:
    """Append-only record of growth events and cap-suppressed triggers."""

    events: list[GrowthEvent] = field(default_factory=list)
    suppressed: list[SuppressedGrowth] = field(default_factory=list)

    def record(self, event: GrowthEvent) -> None:
        self.events.append(event)

    def replay(self, initial_blocks: int) -> int:
        return replay(self.events, initial_blocks)

    def to_jsonl(self) -> str:
        return "".join(e.to_json() + "\n" for e in self.events)

    @classmethod
    def from_jsonl(cls, text: str) -> "GrowthLog":
        log = cls()
        for line in text.splitlines():
            if line.strip():
                obj = json.loads(line)
                log.events.append(
                    GrowthEvent(obj["epoch"], obj["blocks_added"], obj["policy"], tuple(obj["values"]))
                )
        return log

    def suppressed_to_json(self) -> list[dict]:
        return [asdict(s) for s in self.suppressed]


def _loss_at(history: Sequence[tuple[int, float]], epoch: int) -> float | None:
    for e, v in history:
        if e == epoch:
            return v
    return None


def check_history(history: Sequence[tuple[int, float]]) -> None:
    prev = 0
    for e, v in history:
        if e <= prev:
            raise ValueError(f"history epochs must strictly increase from 1; saw {e} after {prev}")
        if v < 0:
            raise ValueError(f"validation loss must be >= 0, got {v} at epoch {e}")
        prev = e


def triggered(history: Sequence[tuple[int, float]], config: GrowthConfig) -> tuple[float, ...] | None:
    """Return the inspected loss values if the policy fires at the last epoch."""
    if not history:
        return None
    t, current = history[-1]
    if t % config.interval != 0:
        return None
    if config.policy is GrowthPolicy.IMPROVEMENT_DELTA:
        prev = _loss_at(history, t - 1)
        if prev is not None and prev - current < config.epsilon:
            return (prev, current)
    elif config.policy is GrowthPolicy.SLOPE_WINDOW:
        prev = _loss_at(history, t - config.interval)
        if prev is not None and abs(current - prev) < config.epsilon:
            return (prev, current)
    elif config.policy is GrowthPolicy.ABSOLUTE_THRESHOLD:
        if current > config.lam:
            return (current,)
    return None


def should_grow(
    history: Sequence[tuple[int, float]],
    config: GrowthConfig,
    current_blocks: int,
    log: GrowthLog | None = None,
) -> GrowthEvent | None:
    """Decide whether the model grows after the latest epoch in ``history``.

    Only check epochs (multiples of ``config.interval``) can fire. A trigger
    that would breach ``max_blocks`` returns None and, if ``log`` is given,
    leaves a suppressed-growth note there.
    """
    if not config.enabled:
        return None
    check_history(history)
    values = triggered(history, config)
    if values is None:
        return None
    t = history[-1][0]
    if current_blocks + config.grow_count > config.max_blocks:
        if log is not None:
            log.suppressed.append(SuppressedGrowth(t, config.grow_count, current_blocks, config.max_blocks))
        return None
    return GrowthEvent(t, config.grow_count, config.policy.value, values)


def replay(events: Sequence[GrowthEvent], initial_blocks: int) -> int:
    return initial_blocks + sum(e.blocks_added for e in events)


def replay_history(history: Sequence[tuple[int, float]], config: GrowthConfig) -> list[GrowthEvent]:
    """Re-run the policy over a full loss history, epoch by epoch."""
    blocks = config.initial_blocks
    events = []
    for i in range(1, len(history) + 1):
        ev = should_grow(history[:i], config, blocks)
        if ev is not None:
            events.append(ev)
            blocks += ev.blocks_added
    return events
