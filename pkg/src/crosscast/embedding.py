"""Segment normalization and convolutional window encoders.

A residual window is summed cumulatively and min-max scaled so its endpoints
hit 0 and 1, which makes windows comparable across regions with very
different count scales. Segments and their aftermaths ("developments") are
encoded by valid 1-d convolution followed by average pooling.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Node, Param
from .errors import ShapeError

RANGE_EPS = 1e-8
# Windows whose net cumulative movement is a small fraction of their largest
# intra-window movement (possible on detrended residuals, never on monotone
# count data) would blow up by 1/range when scaled; treat them as degenerate.
REL_RANGE_EPS = 0.5


@dataclass
class SegmentScale:
    """Cumulative anchor values of one window (all tape nodes, (...)-shaped)."""

    c_first: Node
    range: Node
    c_last: Node
    degenerate: np.ndarray  # bool mask of windows scaled by the fallback rule


@dataclass
class ConvEncoder:
    kernels: Param  # (w, c_in, d)

    @property
    def width(self) -> int:
        return self.kernels.shape[0]

    @property
    def dim(self) -> int:
        return self.kernels.shape[2]


def make_encoder(name: str, width: int, c_in: int, d: int, rng: np.random.Generator,
                 center: bool = True) -> ConvEncoder:
    scale = 2.0 / np.sqrt(width * c_in)
    kernels = rng.uniform(-scale, scale, size=(width, c_in, d))
    if center:
        # zero-sum filters at init: embeddings start invariant to a window's
        # mean level, so attention scores begin as centered-shape similarity
        # instead of being swamped by the common upward-ramp component
        kernels -= kernels.mean(axis=0, keepdims=True)
    return ConvEncoder(Param(name, kernels))


def encoding_matrix(encoder: ConvEncoder, length: int) -> np.ndarray:
    """The (d, length) matrix A with embed(x) = A @ x for single-channel input.

    Conv + average pooling is linear in the input window, so the map has an
    exact matrix form; its pseudo-inverse decodes an embedding back to the
    window (least-squares when pooling loses information).
    """
    if encoder.kernels.shape[1] != 1:
        raise ShapeError("encoding_matrix only applies to single-channel encoders")
    w, d = encoder.width, encoder.dim
    positions = length - w + 1
    if positions < 1:
        raise ShapeError(f"window of length {length} shorter than kernel width {w}")
    kernels = encoder.kernels.value[:, 0, :]  # (w, d)
    a = np.zeros((d, length))
    for pos in range(positions):
        a[:, pos:pos + w] += kernels.T
    return a / positions


def cum_minmax_normalize(segment) -> tuple[Node, SegmentScale]:
    """Cumulative-sum min-max scaling of a (..., l) residual window.

    Non-degenerate windows map endpoints to exactly 0 and 1; windows whose
    cumulative range is within RANGE_EPS of zero, or small relative to the
    largest intra-window movement, fall back to the uniform ramp j/(l-1)
    with a recorded zero range.
    """
    seg = ad.as_node(segment)
    l = seg.shape[-1]
    if l < 2:
        raise ShapeError(f"normalization needs a window of length >= 2, got {l}")
    c = ad.cumsum(seg, axis=-1)
    c_first = c[..., 0]
    c_last = c[..., -1]
    rng = c_last - c_first
    spread = np.max(np.abs(c.value - c_first.value[..., None]), axis=-1)
    degenerate = np.abs(rng.value) <= np.maximum(RANGE_EPS, REL_RANGE_EPS * spread)
    safe_rng = ad.where(degenerate, Node(np.ones_like(rng.value)), rng)
    scaled = (c - c_first[..., None]) / safe_rng[..., None]
    ramp = np.broadcast_to(np.arange(l) / (l - 1), scaled.shape)
    ctilde = ad.where(degenerate[..., None], Node(ramp), scaled)
    rng_out = ad.where(degenerate, Node(np.zeros_like(rng.value)), rng)
    c_last_out = ad.where(degenerate, c_first, c_last)
    return ctilde, SegmentScale(c_first, rng_out, c_last_out, degenerate)


def normalized_continuation(continuation, scale: SegmentScale, horizon: int) -> Node:
    """Scale a window's residual continuation with that window's own anchors.

    `continuation` holds the residuals for the days after the segment, up to
    and including the targeted week; the last `horizon` normalized cumulative
    values are returned. Degenerate windows yield zeros.
    """
    cont = ad.as_node(continuation)
    if cont.shape[-1] < horizon:
        raise ShapeError(f"continuation of length {cont.shape[-1]} shorter than horizon {horizon}")
    cum = scale.c_last[..., None] + ad.cumsum(cont, axis=-1)
    safe_rng = ad.where(scale.degenerate, Node(np.ones_like(scale.range.value)), scale.range)
    scaled = (cum - scale.c_first[..., None]) / safe_rng[..., None]
    scaled = scaled[..., -horizon:] if cont.shape[-1] > horizon else scaled
    return ad.where(scale.degenerate[..., None], Node(np.zeros_like(scaled.value)), scaled)


def inverse_normalize(prediction, scale: SegmentScale) -> Node:
    """Map predicted normalized cumulative values back to daily increments.

    The prediction continues the segment's own cumulative base: the segment
    end normalizes to 1, so the first increment is measured against it.
    Degenerate windows invert to zeros.
    """
    pred = ad.as_node(prediction)
    cum = scale.c_first[..., None] + pred * scale.range[..., None]
    first = cum[..., 0:1] - scale.c_last[..., None]
    rest = cum[..., 1:] - cum[..., :-1]
    daily = ad.concat([first, rest], axis=-1)
    return ad.where(scale.degenerate[..., None], Node(np.zeros_like(daily.value)), daily)


def _stack_channels(series: Node, features) -> Node:
    inp = series[..., None]
    if features is None:
        return inp
    feats = ad.as_node(features)
    if feats.shape[:-1] != series.shape:
        raise ShapeError(f"feature window {feats.shape} does not match segment {series.shape}")
    return ad.concat([inp, feats], axis=-1)


def segment_embed(ctilde, features, encoder: ConvEncoder) -> Node:
    """Encode a (..., l) normalized segment (plus per-day feature channels)."""
    return ad.avg_pool(ad.conv1d(_stack_channels(ad.as_node(ctilde), features), encoder.kernels))


def development_embed(ctilde_continuation, encoder: ConvEncoder) -> Node:
    """Encode a (..., H) normalized continuation into its development vector."""
    cont = ad.as_node(ctilde_continuation)
    return ad.avg_pool(ad.conv1d(cont[..., None], encoder.kernels))
