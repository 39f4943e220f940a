"""Learnable Holt smoothing: level/slope recurrence, residuals, extrapolation.

Each series carries four trainable parameters: initial level, initial slope
and two unconstrained smoothing coefficients mapped through the logistic
function so gradient steps keep them in (0, 1).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Node, Param


@dataclass
class HoltParams:
    a0: Param  # initial level, shape (N,) or ()
    b0: Param  # initial slope
    raw_alpha: Param  # logistic(raw_alpha) = level smoothing coefficient
    raw_beta: Param  # logistic(raw_beta) = slope smoothing coefficient

    def all(self) -> list[Param]:
        return [self.a0, self.b0, self.raw_alpha, self.raw_beta]


@dataclass
class TrendState:
    levels: Node  # (..., T)
    slopes: Node  # (..., T)
    residuals: Node  # (..., T), residual[t] = x[t] - level[t]


def init_holt_params(values: np.ndarray, prefix: str = "holt") -> HoltParams:
    """Warm start at data scale: a0 = x_1, b0 = x_2 - x_1, alpha = beta = 0.5."""
    x = np.asarray(values, dtype=np.float64)
    a0 = x[..., 0].copy()
    b0 = x[..., 1] - x[..., 0] if x.shape[-1] > 1 else np.zeros_like(a0)
    zero = np.zeros_like(a0)
    return HoltParams(
        a0=Param(f"{prefix}.a0", a0),
        b0=Param(f"{prefix}.b0", b0),
        raw_alpha=Param(f"{prefix}.raw_alpha", zero.copy()),
        raw_beta=Param(f"{prefix}.raw_beta", zero.copy()),
    )


def holt_filter(series, params: HoltParams) -> TrendState:
    """Run the level/slope recurrence over (..., T) data.

    level_t = alpha*x_t + (1-alpha)(level_{t-1} + slope_{t-1})
    slope_t = beta*(level_t - level_{t-1}) + (1-beta)*slope_{t-1}
    """
    x = ad.as_node(series)
    alpha = ad.sigmoid(params.raw_alpha)
    beta = ad.sigmoid(params.raw_beta)
    one_m_alpha = 1.0 - alpha
    one_m_beta = 1.0 - beta
    a_prev: Node = params.a0
    b_prev: Node = params.b0
    levels, slopes = [], []
    for t in range(x.shape[-1]):
        xt = Node(x.value[..., t])  # data is constant w.r.t. the parameters
        a_t = alpha * xt + one_m_alpha * (a_prev + b_prev)
        b_t = beta * (a_t - a_prev) + one_m_beta * b_prev
        levels.append(a_t)
        slopes.append(b_t)
        a_prev, b_prev = a_t, b_t
    level = ad.stack(levels, axis=-1)
    slope = ad.stack(slopes, axis=-1)
    return TrendState(level, slope, x - level)


def holt_extrapolate(a, b, h):
    """Linear trend continuation h days past the filtered history."""
    return ad.as_node(a) + h * ad.as_node(b)
