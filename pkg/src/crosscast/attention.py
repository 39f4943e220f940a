"""Query/key/value projection, cross-window attention and forecast assembly.

Scores are plain inner products (no scaling, single head); static region
features enter the query and key maps additively. The final forecast adds
the clipped trend extrapolation to the clipped attention estimate.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Node, Param
from .embedding import SegmentScale, inverse_normalize
from .errors import ShapeError, UsageError

MASK_BIAS = -1e30  # additive score for excluded reference windows


@dataclass
class AttnParams:
    w_q: Param  # (d, d)
    w_k: Param  # (d, d)
    w_v: Param  # (d, d)
    w_out: Param  # (H, d)
    w_uq: Param | None = None  # (d, m), absent when static features are off
    w_uk: Param | None = None

    def all(self) -> list[Param]:
        out = [self.w_q, self.w_k, self.w_v, self.w_out]
        if self.w_uq is not None:
            out += [self.w_uq, self.w_uk]
        return out


def make_attn_params(d: int, horizon: int, m: int | None, rng: np.random.Generator,
                     dev_matrix: np.ndarray | None = None,
                     beta: float = 4.0) -> AttnParams:
    """Identity-flavoured initialization of the attention maps.

    Random dense maps saturate the softmax on arbitrary windows at step 0
    and their gradients vanish, so instead the init is structured: w_q and
    w_k are beta-scaled near-identity maps (initial scores measure segment
    embedding similarity at a useful softmax temperature), w_v passes the
    development embedding through, and w_out starts as the least-squares
    decoder of the development encoder (`dev_matrix`, the encoder's linear
    form). The model therefore begins as "trend plus the similarity-weighted
    average of reference continuations" and training refines that scheme
    end to end, rather than having to discover it from noise.
    """

    def mat(name, rows, cols, scale=1.0):
        return Param(name, scale * rng.uniform(-1, 1, size=(rows, cols)) / np.sqrt(cols))

    def sim(name):
        return Param(name, beta * np.eye(d) + mat("", d, d, scale=0.1).value)

    if dev_matrix is not None:
        w_out = Param("attn.w_out", np.linalg.pinv(dev_matrix))
        w_v = Param("attn.w_v", np.eye(d))
    else:
        w_out = Param("attn.w_out", np.zeros((horizon, d)))
        w_v = mat("attn.w_v", d, d)
    return AttnParams(
        w_q=sim("attn.w_q"),
        w_k=sim("attn.w_k"),
        w_v=w_v,
        w_out=w_out,
        w_uq=mat("attn.w_uq", d, m, scale=0.7) if m else None,
        w_uk=mat("attn.w_uk", d, m, scale=0.7) if m else None,
    )


def project_qkv(p, g, u, params: AttnParams) -> tuple[Node, Node, Node]:
    """Affine maps (no bias): q/k from the segment embedding, v from the development."""
    p, g = ad.as_node(p), ad.as_node(g)
    q = p @ params.w_q.T
    k = p @ params.w_k.T
    if u is not None and params.w_uq is not None:
        u = ad.as_node(u)
        q = q + u @ params.w_uq.T
        k = k + u @ params.w_uk.T
    v = g @ params.w_v.T
    return q, k, v


def attend(q, keys, values, mask: np.ndarray | None = None) -> tuple[Node, Node]:
    """Softmax-weighted sum of values over all reference windows.

    q: (..., d); keys/values: (M, d); mask (optional): (..., M) bool, True
    where a reference may be attended. Returns (weighted value, weights).
    """
    q, keys, values = ad.as_node(q), ad.as_node(keys), ad.as_node(values)
    if keys.shape[0] == 0:
        raise UsageError(
            "no reference windows to attend over; use a longer history or a smaller segment length")
    if keys.shape != values.shape:
        raise ShapeError(f"keys {keys.shape} and values {values.shape} disagree")
    scores = q @ keys.T
    if mask is not None:
        if not mask.any(axis=-1).all():
            raise UsageError("a target has no admissible reference windows")
        scores = scores + np.where(mask, 0.0, MASK_BIAS)
    weights = ad.softmax(scores, axis=-1)
    return weights @ values, weights


def assemble_forecast(vhat, scale: SegmentScale | None, trend, params: AttnParams,
                      clip: bool = True) -> Node:
    """Project the attended value to the horizon and add the trend.

    With a scale, the projection is a normalized cumulative estimate and is
    inverted to daily increments first; without one (normalization ablated)
    the projection is read as increments directly. When `clip` is set both
    partial predictions are clipped at zero, so forecasts are non-negative;
    training leaves them unclipped to keep gradients alive on both routes.
    """
    vhat = ad.as_node(vhat)
    pred = vhat @ params.w_out.T
    daily = inverse_normalize(pred, scale) if scale is not None else pred
    trend = ad.as_node(trend)
    if clip:
        return ad.relu(trend) + ad.relu(daily)
    return trend + daily
