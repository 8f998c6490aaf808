"""Central finite-difference check of analytic gradients."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .tensor import Parameter, Tensor, backward


@dataclass
class GradCheckReport:
    max_rel_error: float
    param_id: str | None
    index: tuple[int, int] | None
    n_checked: int

    def passed(self, tolerance: float) -> bool:
        return self.max_rel_error < tolerance


def relative_error(analytic: float, numeric: float, floor: float) -> float:
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)


def grad_check(
    loss_fn: Callable[[], Tensor],
    params: Sequence[Parameter],
    h: float = 1e-6,
    floor: float = 1e-4,
) -> GradCheckReport:
    """Compare backward() against central differences for every entry.

    ``loss_fn`` must rebuild the graph from the current parameter values on
    each call. The relative error denominator is floored at ``floor`` so
    near-zero gradients are judged on absolute error.
    """
    for p in params:
        p.zero_grad()
    backward(loss_fn())
    analytic = {p.id: p.grad.copy() for p in params}

    worst, worst_id, worst_idx, count = 0.0, None, None, 0
    for p in params:
        base = p.value.copy()
        for idx in np.ndindex(*base.shape):
            p.value = base.copy()
            p.value[idx] = base[idx] + h
            up = loss_fn().item()
            p.value = base.copy()
            p.value[idx] = base[idx] - h
            down = loss_fn().item()
            numeric = (up - down) / (2.0 * h)
            err = relative_error(float(analytic[p.id][idx]), numeric, floor)
            count += 1
            if err > worst:
                worst, worst_id, worst_idx = err, p.id, (int(idx[0]), int(idx[1]))
        p.value = base
    for p in params:
        p.zero_grad()
    return GradCheckReport(worst, worst_id, worst_idx, count)
