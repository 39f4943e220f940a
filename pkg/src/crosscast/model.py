"""The end-to-end forecasting model: detrend, embed, attend, assemble.

One model instance targets a single week offset k; the four weekly horizons
of the evaluation protocol use four independently trained instances.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import autodiff as ad
from .attention import AttnParams, assemble_forecast, attend, make_attn_params, project_qkv
from .autodiff import Node, Param
from .dataset import Dataset
from .detrend import HoltParams, holt_filter, init_holt_params
from .embedding import (ConvEncoder, cum_minmax_normalize, development_embed,
                        encoding_matrix, make_encoder, normalized_continuation,
                        segment_embed)
from .errors import ConfigError, UsageError

VARIANT_CODES = ("full", "d", "n", "i", "f")

# a reference with a degenerate segment, a scaled segment far outside the
# unit band (wild non-monotone residual swings), or an exploding scaled
# development (flat segment followed by a burst of activity) carries no
# transferable shape; keep it out of Omega whenever other references remain
DEV_CAP = 32.0
SEG_LO = -0.5
SEG_HI = 1.5


@dataclass(frozen=True)
class ModelVariant:
    """Ablation switches; all on is the full model."""

    detrend_on: bool = True
    normalize_on: bool = True
    inter_series_on: bool = True
    features_on: bool = True

    @classmethod
    def from_code(cls, code: str) -> "ModelVariant":
        if code not in VARIANT_CODES:
            raise ConfigError(f"unknown variant {code!r}, expected one of {VARIANT_CODES}")
        return cls(
            detrend_on=code != "d",
            normalize_on=code != "n",
            inter_series_on=code != "i",
            features_on=code != "f",
        )

    @property
    def code(self) -> str:
        off = [c for c, on in zip("dnif", (self.detrend_on, self.normalize_on,
                                           self.inter_series_on, self.features_on)) if not on]
        return "full" if not off else "".join(off)


@dataclass
class TrainConfig:
    d: int = 16  # hidden size
    l: int = 7  # segment length (days)
    horizon: int = 7  # forecast horizon H (days)
    k: int = 1  # week offset, 1..4
    lr: float = 0.005
    iters: int = 600
    batch: int = 64
    seed: int = 0
    patience: int = 8  # validation checks without improvement before stopping
    eval_every: int = 50
    kernel_width: int = 3
    attn_beta: float = 4.0  # initial sharpness of the near-identity q/k maps
    variant: ModelVariant = field(default_factory=ModelVariant)

    def validate(self) -> None:
        if self.d < 1 or self.l < 2 or self.horizon < 1 or not 1 <= self.k:
            raise ConfigError(f"invalid model dimensions in {self}")
        if self.lr <= 0 or self.iters < 0 or self.batch < 1:
            raise ConfigError(f"invalid optimization settings in {self}")

    def with_variant(self, code: str) -> "TrainConfig":
        return replace(self, variant=ModelVariant.from_code(code))


def _gather_index(pairs: list[tuple[int, int]], start_offset: int, length: int):
    """Row/column fancy indices for per-window slices of an (N, T) matrix.

    For a pair (i, t) with 1-based end day t, columns cover 0-based days
    t + start_offset .. t + start_offset + length - 1.
    """
    rows = np.array([i for i, _ in pairs], dtype=np.intp)[:, None]
    ends = np.array([t for _, t in pairs], dtype=np.intp)[:, None]
    cols = ends + start_offset + np.arange(length, dtype=np.intp)
    return rows, cols


class ForecastModel:
    """Holds all trainable parameters and runs the batched forward pass."""

    def __init__(self, dataset: Dataset, config: TrainConfig, rng: np.random.Generator | None = None):
        config.validate()
        if rng is None:
            rng = np.random.default_rng(config.seed)
        self.config = config
        variant = config.variant
        self.n_regions = dataset.n_regions
        self.holt: HoltParams = init_holt_params(dataset.values)
        m_r = dataset.dynamic.shape[2] if (variant.features_on and dataset.dynamic is not None) else 0
        m = dataset.static.shape[1] if (variant.features_on and dataset.static is not None) else 0
        self.uses_dynamic = m_r > 0
        self.uses_static = m > 0
        w_seg = min(config.kernel_width, config.l)
        w_dev = min(config.kernel_width, config.horizon)
        self.seg_encoder: ConvEncoder = make_encoder("seg.kernels", w_seg, 1 + m_r, config.d, rng)
        # the development encoder keeps its level component (center=False):
        # its decoder-initialized inverse must reconstruct the continuation,
        # level included, not just its shape
        self.dev_encoder: ConvEncoder = make_encoder("dev.kernels", w_dev, 1, config.d, rng,
                                                     center=False)
        dev_matrix = encoding_matrix(self.dev_encoder, config.horizon)
        self.attn: AttnParams = make_attn_params(config.d, config.horizon, m or None, rng,
                                                 dev_matrix=dev_matrix, beta=config.attn_beta)

    def params(self) -> list[Param]:
        return self.holt.all() + [self.seg_encoder.kernels, self.dev_encoder.kernels] + self.attn.all()

    def param_values(self) -> dict[str, np.ndarray]:
        return {p.name: p.value.copy() for p in self.params()}

    def load_param_values(self, values: dict[str, np.ndarray]) -> None:
        for p in self.params():
            if p.name not in values:
                raise ConfigError(f"checkpoint is missing parameter {p.name!r}")
            stored = np.asarray(values[p.name], dtype=np.float64)
            if stored.shape != p.value.shape:
                raise ConfigError(f"parameter {p.name!r} shape {stored.shape} != {p.value.shape}")
            p.value[...] = stored

    # ------------------------------------------------------------------

    def _segment_inputs(self, resid: Node, dataset: Dataset, pairs):
        l = self.config.l
        rows, cols = _gather_index(pairs, -l, l)
        seg = ad.take(resid, (rows, cols))
        feats = dataset.dynamic[rows, cols] if self.uses_dynamic else None
        if self.config.variant.normalize_on:
            ctilde, scale = cum_minmax_normalize(seg)
        else:
            ctilde, scale = seg, None
        p = segment_embed(ctilde, feats, self.seg_encoder)
        return p, scale, ctilde

    def _development_inputs(self, resid: Node, pairs):
        H, k = self.config.horizon, self.config.k
        rows, cols = _gather_index(pairs, 0, k * H)
        cont = ad.take(resid, (rows, cols))
        return cont

    def forward(self, dataset: Dataset, cutoff: int, refs: list[tuple[int, int]],
                targets: list[tuple[int, int]], clip: bool = True):
        """Forecast the k-th week after each target's end day.

        `cutoff` is the last day (1-based) the model may read; refs are the
        attended windows, all with development inside the cutoff. Returns
        (forecasts (B, H) node, attention weights (B, M) node, trend state).
        Training passes clip=False so both partial predictions keep gradients.
        """
        cfg = self.config
        H, k, l = cfg.horizon, cfg.k, cfg.l
        if not targets:
            raise UsageError("empty target batch")
        values = dataset.values[:, :cutoff]
        if cfg.variant.detrend_on:
            state = holt_filter(values, self.holt)
            resid = state.residuals
        else:
            state = None
            resid = Node(values)

        # reference keys/values
        p_ref, scale_ref, ct_ref = self._segment_inputs(resid, dataset, refs)
        cont_ref = self._development_inputs(resid, refs)
        if cfg.variant.normalize_on:
            dev_ref = normalized_continuation(cont_ref, scale_ref, H)
        else:
            dev_ref = cont_ref[..., -H:]
        g_ref = development_embed(dev_ref, self.dev_encoder)
        u_ref = dataset.static[[i for i, _ in refs]] if self.uses_static else None
        _, k_ref, v_ref = project_qkv(p_ref, g_ref, u_ref, self.attn)

        # target queries
        p_tgt, scale_tgt, _ = self._segment_inputs(resid, dataset, targets)
        u_tgt = dataset.static[[i for i, _ in targets]] if self.uses_static else None
        q_tgt, _, _ = project_qkv(p_tgt, p_tgt, u_tgt, self.attn)

        mask = self._reference_mask(refs, targets)
        if cfg.variant.normalize_on:
            ok = ((~scale_ref.degenerate)
                  & (np.max(np.abs(dev_ref.value), axis=-1) <= DEV_CAP)
                  & (np.min(ct_ref.value, axis=-1) >= SEG_LO)
                  & (np.max(ct_ref.value, axis=-1) <= SEG_HI))
            if not ok.all():
                base = mask if mask is not None else np.ones((len(targets), len(refs)), dtype=bool)
                informative = base & ok[None, :]
                empty = ~informative.any(axis=1)
                informative[empty] = base[empty]
                mask = informative
        vhat, weights = attend(q_tgt, k_ref, v_ref, mask)

        if cfg.variant.detrend_on:
            rows = np.array([i for i, _ in targets], dtype=np.intp)
            cols = np.array([t - 1 for _, t in targets], dtype=np.intp)
            a_t = ad.take(state.levels, (rows, cols))
            b_t = ad.take(state.slopes, (rows, cols))
            steps = np.arange((k - 1) * H + 1, k * H + 1, dtype=np.float64)
            trend = ad.reshape(a_t, (-1, 1)) + ad.reshape(b_t, (-1, 1)) * Node(steps)
        else:
            trend = Node(np.zeros((len(targets), H)))

        y = assemble_forecast(vhat, scale_tgt, trend, self.attn, clip=clip)
        return y, weights, state

    def _reference_mask(self, refs, targets) -> np.ndarray | None:
        """Region and leakage admissibility of each reference per target.

        The reference set is common to all targets: every window whose
        development lies inside the cutoff. A target's own past windows are
        included, but a same-region window whose development overlaps the
        target's truth week would hand a training target (part of) its own
        label, which trains nothing transferable -- those are masked. At
        forecast time every development precedes the issue day, so the
        leakage rule never triggers there. The intra-series ablation
        additionally restricts each target to its own region's windows.
        """
        H, k = self.config.horizon, self.config.k
        r_ref = np.array([i for i, _ in refs])
        t_ref = np.array([t for _, t in refs])
        r_tgt = np.array([i for i, _ in targets])[:, None]
        t_tgt = np.array([t for _, t in targets])[:, None]
        same = r_ref[None, :] == r_tgt
        mask = ~(same & (t_ref[None, :] + k * H > t_tgt))
        if not self.config.variant.inter_series_on:
            mask &= same
        if mask.all():
            return None
        return mask

    def forecast(self, dataset: Dataset, issue_day: int) -> np.ndarray:
        """Per-region daily forecasts (N, H) for the k-th week after issue_day."""
        cfg = self.config
        if issue_day < cfg.l:
            raise UsageError(f"issue day {issue_day} precedes the first full segment (l={cfg.l})")
        from .dataset import make_windows  # local to avoid cycle at import time

        refs = make_windows(dataset, cfg.l, cfg.horizon, cfg.k, issue_day).pairs
        targets = [(i, issue_day) for i in range(dataset.n_regions)]
        y, _, _ = self.forward(dataset, issue_day, refs, targets)
        return y.value

    def attention_map(self, dataset: Dataset, issue_day: int, region: int):
        """Attention weights of one target at issue_day, for inspection."""
        cfg = self.config
        from .dataset import make_windows

        refs = make_windows(dataset, cfg.l, cfg.horizon, cfg.k, issue_day).pairs
        _, weights, _ = self.forward(dataset, issue_day, refs, [(region, issue_day)])
        return refs, weights.value[0]
