"""Synthetic pattern-transfer benchmark generator.

Regions come in leader/follower pairs that replay one incidence curve
at two amplitudes, the follower trailing by a fixed lag. Each curve is
slow background activity plus a few epidemic waves, and ends in one
steep wave placed so the follower's held-out last week is all convex
ascent with the crest beyond it: a linear trend extrapolation
undershoots the week, the follower's own history holds only the
curve's shallower waves, and how hard the final onset compounds is
visible only in its leader, who climbed the same wave a lag earlier.
Scores are pooled over all followers. A copy-from-leader oracle gives
the benchmark's noise floor in closed form per seed.
"""

from __future__ import annotations

import datetime as dt
from dataclasses import dataclass, field

import numpy as np

from .dataset import Dataset
from .errors import ConfigError
from .evaluator import wape

START_DATE = dt.date(2020, 3, 1)


@dataclass
class SynthSpec:
    n_regions: int = 20
    n_days: int = 120
    lag: int = 11  # days the target trails its donor
    noise: float = 0.05  # noise std as a fraction of each region's amplitude
    scale_low: float = 2.0  # per-region amplitude range (log-uniform)
    scale_high: float = 50.0
    n_waves: int = 3  # steep epidemic waves per curve
    n_background: int = 2  # slow background waves per curve

    def validate(self) -> None:
        if self.n_regions < 2 or self.lag < 1 or self.lag + 14 > self.n_days:
            raise ConfigError(f"inconsistent synthetic spec: {self}")
        if self.noise < 0 or self.scale_low <= 0 or self.scale_high < self.scale_low:
            raise ConfigError(f"inconsistent synthetic spec: {self}")


@dataclass
class SynthMeta:
    pairs: list[tuple[int, int]]  # (follower, leader), target pair first
    lag: int
    scales: np.ndarray  # per-region amplitude factors
    clean: np.ndarray  # noiseless incidence (N, L)
    spec: SynthSpec = field(repr=False, default_factory=SynthSpec)

    @property
    def donor(self) -> int:
        return self.pairs[0][1]

    @property
    def followers(self) -> list[int]:
        return [f for f, _ in self.pairs]


@dataclass
class _CurveParams:
    centers: np.ndarray
    widths: np.ndarray
    amps: np.ndarray


def _bump(t: np.ndarray, center: float, width: float) -> np.ndarray:
    """Logistic-growth incidence pulse with unit peak at `center`."""
    p = 1.0 / (1.0 + np.exp(-(t - center) / width))
    return 4.0 * p * (1.0 - p)


def _draw_curve(rng: np.random.Generator, spec: SynthSpec, paired: bool) -> _CurveParams:
    L = spec.n_days
    wave_centers = rng.uniform(15.0, L - 15.0, size=spec.n_waves)
    wave_widths = rng.uniform(2.8, 6.5, size=spec.n_waves)
    if paired:
        # the follower's last wave crests just past the held-out week, so
        # that week is all convex ascent; the leader crested inside history.
        # It is also made much steeper than the curve's earlier waves: how
        # hard it compounds cannot be read off the follower's own history,
        # only off the leader's.
        wave_centers[0] = rng.uniform(L - spec.lag, L - spec.lag + 2.0)
        wave_widths[0] = rng.uniform(3.2, 3.8)
        wave_widths[1:] = rng.uniform(5.5, 6.5, size=spec.n_waves - 1)
    return _CurveParams(
        centers=np.concatenate([wave_centers,
                                rng.uniform(5.0, L + 5.0, size=spec.n_background)]),
        widths=np.concatenate([wave_widths,
                               rng.uniform(15.0, 25.0, size=spec.n_background)]),
        amps=np.concatenate([rng.uniform(1.2, 2.0, size=spec.n_waves),
                             rng.uniform(0.4, 0.8, size=spec.n_background)]),
    )


def _eval_curve(params: _CurveParams, t: np.ndarray) -> np.ndarray:
    curve = np.zeros_like(t)
    for c, w, a in zip(params.centers, params.widths, params.amps):
        curve += a * _bump(t, c, w)
    return curve


def generate(spec: SynthSpec, seed: int) -> tuple[Dataset, SynthMeta]:
    """Build the benchmark dataset; same seed gives an identical dataset."""
    spec.validate()
    rng = np.random.default_rng(seed)
    N, L = spec.n_regions, spec.n_days
    t = np.arange(1, L + 1, dtype=np.float64)
    scales = np.exp(rng.uniform(np.log(spec.scale_low), np.log(spec.scale_high), size=N))

    # pair the target with a random donor, then pair up the rest; a leftover
    # region (odd count) gets an independent curve with no leader
    others = rng.permutation(np.arange(1, N))
    donor = int(others[0])
    pairs = [(0, donor)]
    rest = [int(i) for i in others[1:]]
    while len(rest) >= 2:
        pairs.append((rest.pop(), rest.pop()))

    clean = np.zeros((N, L))
    for follower, leader in pairs:
        curve = _draw_curve(rng, spec, paired=True)
        clean[follower] = scales[follower] * _eval_curve(curve, t - spec.lag)
        clean[leader] = scales[leader] * _eval_curve(curve, t)
    for i in rest:
        clean[i] = scales[i] * _eval_curve(_draw_curve(rng, spec, paired=False), t)

    amps = np.maximum(clean.max(axis=1), 1e-9)
    noise = rng.standard_normal((N, L)) * (spec.noise * amps)[:, None]
    values = np.maximum(clean + noise, 0.0)

    regions = ["target"] + [f"region{i:02d}" for i in range(1, N)]
    # one-hot region identity as the static features: the attention's static
    # terms can then learn which regions lead which, as geography or
    # demographics would on real data
    dataset = Dataset(regions, START_DATE, values, kind="hospitalizations",
                      static=np.eye(N))
    return dataset, SynthMeta(pairs, spec.lag, scales, clean, spec)


def copy_oracle_forecast(dataset: Dataset, meta: SynthMeta, horizon: int = 7) -> np.ndarray:
    """Forecast each follower's last `horizon` days by copying its leader's past."""
    L = dataset.n_days
    src = slice(L - horizon - meta.lag, L - meta.lag)
    rows = []
    for follower, leader in meta.pairs:
        ratio = meta.scales[follower] / meta.scales[leader]
        rows.append(ratio * dataset.values[leader, src])
    return np.array(rows)


def benchmark_wape(forecasts: np.ndarray, dataset: Dataset, meta: SynthMeta,
                   horizon: int = 7) -> float:
    """Pooled WAPE of per-region forecasts (N, H) over all follower regions."""
    truth = dataset.values[:, dataset.n_days - horizon:]
    followers = meta.followers
    return wape(np.asarray(forecasts)[followers], truth[followers])


def copy_oracle_wape(dataset: Dataset, meta: SynthMeta, horizon: int = 7) -> float:
    """The benchmark's effective noise floor for the held-out final week."""
    L = dataset.n_days
    truth = dataset.values[:, L - horizon:]
    return wape(copy_oracle_forecast(dataset, meta, horizon), truth[meta.followers])
