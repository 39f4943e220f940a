"""Acceptance gate: one test per criterion, pinned tolerances.

Each test prints a single "CRITERION n: PASS/FAIL" line (visible in verbose
or failing runs) and asserts the criterion verbatim. Criterion 6 is optional
and skips unless archived real-data snapshots are supplied.
"""

import datetime as dt
import json
import time
from pathlib import Path

import numpy as np
import pytest
from sklearn.metrics import adjusted_rand_score

import conftest

from crosscast import autodiff as ad
from crosscast.analysis import elbow_curve, kmeans
from crosscast.attention import attend
from crosscast.autodiff import Node, Param, grad_check
from crosscast.cli import run_command
from crosscast.dataset import Dataset, make_windows, train_val_split, write_long_csv
from crosscast.detrend import HoltParams, holt_filter
from crosscast.embedding import cum_minmax_normalize, inverse_normalize, normalized_continuation
from crosscast.model import ForecastModel, TrainConfig
from crosscast.synthetic import SynthSpec, benchmark_wape, copy_oracle_wape, generate
from crosscast.trainer import joint_loss, train

GRAD_TOL = 1e-4
N_SEEDS = 10
VARIANTS = ("full", "d", "n", "i", "f")
BENCH = dict(d=16, l=7, kernel_width=7, lr=0.01, iters=600, batch=64,
             eval_every=50, patience=8)


def report(n: int, ok: bool, detail: str) -> bool:
    line = f"CRITERION {n}: {'PASS' if ok else 'FAIL'} - {detail}"
    print("\n" + line)
    conftest.CRITERION_LINES.append(line)
    return ok


# ---------------------------------------------------------------------------
# shared benchmark runs (criteria 5 and 7)


@pytest.fixture(scope="module")
def benchmark():
    """Train all five variants on 10 benchmark seeds; track per-group time."""
    scores = {v: [] for v in VARIANTS}
    oracles = []
    finite = True
    seconds = {v: 0.0 for v in VARIANTS}
    for seed in range(N_SEEDS):
        ds, meta = generate(SynthSpec(), seed)
        issue = ds.n_days - 7
        hist = ds.truncated(issue)
        oracles.append(copy_oracle_wape(ds, meta))
        for v in VARIANTS:
            cfg = TrainConfig(seed=seed, **BENCH).with_variant(v)
            t0 = time.perf_counter()
            result = train(hist, cfg, weekly=False)
            forecast = result.model.forecast(ds, issue)
            seconds[v] += time.perf_counter() - t0
            finite &= all(np.isfinite(loss) for _, loss in result.train_trace)
            finite &= bool(np.isfinite(forecast).all())
            scores[v].append(benchmark_wape(forecast, ds, meta))
    medians = {v: float(np.median(scores[v])) for v in VARIANTS}
    return dict(medians=medians, oracle=float(np.median(oracles)),
                finite=finite, seconds=seconds)


# ---------------------------------------------------------------------------


def test_criterion_1_gradient_correctness():
    """grad_check on every op and the full joint_loss; < 30 s, rel tol 1e-4."""
    started = time.perf_counter()
    rng = np.random.default_rng(0)
    worst = 0.0

    # every differentiable operation
    a = Param("a", rng.standard_normal((3, 4)))
    b = Param("b", rng.standard_normal((3, 4)) + 2.0)
    m = Param("m", rng.standard_normal((4, 2)))
    w32 = rng.standard_normal((3, 2))
    w34 = rng.standard_normal((3, 4))
    w44 = rng.standard_normal((4, 4))
    w3 = rng.standard_normal(3)
    x = Param("x", rng.standard_normal((2, 9, 2)))
    k = Param("k", rng.standard_normal((3, 2, 4)))
    w4 = rng.standard_normal(4)
    mask = rng.random((3, 4)) > 0.5
    idx = np.array([0, 2, 2, 1])
    ops = [
        (lambda: ad.sum_(ad.add(a, b)), [a, b]),
        (lambda: ad.sum_(ad.mul(a, b)), [a, b]),
        (lambda: ad.sum_(ad.div(a, b)), [a, b]),
        (lambda: ad.sum_(ad.mul(ad.matmul(a, m), w32)), [a, m]),
        (lambda: ad.sum_(ad.mul(ad.transpose(a), w34.T)), [a]),
        (lambda: ad.sum_(ad.mul(ad.take(a, idx), w44)), [a]),
        (lambda: ad.sum_(ad.mul(ad.cumsum(a, axis=-1), w34)), [a]),
        (lambda: ad.sum_(ad.mul(ad.sum_(a, axis=1), w3)), [a]),
        (lambda: ad.sum_(ad.mul(ad.mean(a, axis=1), w3)), [a]),
        (lambda: ad.sum_(ad.sigmoid(a)), [a]),
        (lambda: ad.sum_(ad.absolute(ad.add(a, 0.3))), [a]),
        (lambda: ad.sum_(ad.relu(ad.add(a, 0.3))), [a]),
        (lambda: ad.sum_(ad.mul(ad.where(mask, a, b), w34)), [a, b]),
        (lambda: ad.sum_(ad.mul(ad.softmax(a), w34)), [a]),
        (lambda: ad.sum_(ad.mul(ad.avg_pool(ad.conv1d(x, k)), w4)), [x, k]),
    ]
    for fn, params in ops:
        worst = max(worst, grad_check(fn, params))

    # the full joint loss on a 3-region, 40-day toy dataset
    rng2 = np.random.default_rng(1)
    t = np.arange(40, dtype=float)
    values = np.stack([8 * (i + 1) * (1 + 0.5 * np.sin(t / (4 + i))) + rng2.random(40)
                       for i in range(3)])
    ds = Dataset(["a", "b", "c"], dt.date(2020, 3, 1), np.maximum(values, 0.0))
    cfg = TrainConfig(d=4, l=7, seed=0)
    model = ForecastModel(ds, cfg, np.random.default_rng(0))
    cutoff, _ = train_val_split(ds, cfg.l)
    refs = make_windows(ds, cfg.l, cfg.horizon, cfg.k, cutoff).pairs
    targets = [(0, 20), (1, 24), (2, 28)]

    def loss():
        return joint_loss(model, ds, cutoff, refs, targets, weekly=False, clip=False)

    worst = max(worst, grad_check(loss, model.params()))
    elapsed = time.perf_counter() - started
    ok = worst < GRAD_TOL and elapsed < 30.0
    assert report(1, ok, f"max rel grad error {worst:.3g} (tol {GRAD_TOL}), {elapsed:.1f}s (< 30s)")


def test_criterion_2_holt_oracle():
    """Hand-derived Holt recurrence at 1e-12; constant residuals exactly 0."""
    p = HoltParams(Param("a0", 1.0), Param("b0", 1.0), Param("ra", 0.0), Param("rb", 0.0))
    state = holt_filter(np.array([1.0, 2.0, 3.0]), p)
    err = max(np.abs(state.levels.value[:2] - [1.5, 2.125]).max(),
              np.abs(state.slopes.value[:2] - [0.75, 0.6875]).max(),
              np.abs(state.residuals.value[:2] - [-0.5, -0.125]).max())
    q = HoltParams(Param("a0", 4.0), Param("b0", 0.0), Param("ra", 0.0), Param("rb", 0.0))
    const = holt_filter(np.full(10, 4.0), q)
    zeros = (const.residuals.value == 0.0).all()
    ok = err <= 1e-12 and bool(zeros)
    assert report(2, ok, f"recurrence error {err:.2e} (tol 1e-12), constant residuals exact: {zeros}")


def test_criterion_3_normalization_contract():
    """1000 random windows: endpoints 0/1, round trip to 1e-9."""
    rng = np.random.default_rng(2)
    l, H = 7, 7
    # residual-like windows: per-window drift plus noise, at mixed scales
    scale = np.exp(rng.uniform(-3, 3, size=(1000, 1)))
    drift = rng.uniform(-1.0, 1.0, size=(1000, 1))
    seg = (drift + 0.3 * rng.standard_normal((1000, l))) * scale
    cont = rng.standard_normal((1000, H)) * scale
    ctilde, scale = cum_minmax_normalize(Node(seg))
    live = ~scale.degenerate
    end_err = max(np.abs(ctilde.value[live, 0]).max(), np.abs(ctilde.value[live, -1] - 1.0).max())
    dev = normalized_continuation(Node(cont), scale, H)
    back = inverse_normalize(dev, scale).value
    rt_err = np.abs(back[live] - cont[live]).max()
    ok = live.sum() > 900 and end_err == 0.0 and rt_err <= 1e-9
    assert report(3, ok, f"{int(live.sum())}/1000 non-degenerate, endpoint error {end_err:.2e}, "
                         f"round-trip error {rt_err:.2e} (tol 1e-9)")


def test_criterion_4_attention_contract():
    """Weights >= 0 sum to 1 +- 1e-9; |Omega|=1 exact; permutation invariance 1e-12."""
    rng = np.random.default_rng(3)
    q = rng.standard_normal((6, 8))
    keys = rng.standard_normal((40, 8)) * 2
    values = rng.standard_normal((40, 8))
    vhat, w = attend(q, keys, values)
    nonneg = bool((w.value >= 0).all())
    sum_err = np.abs(w.value.sum(axis=-1) - 1.0).max()
    _, w1 = attend(q[:1], keys[:1], values[:1])
    singleton = w1.value[0, 0] == 1.0
    perm = rng.permutation(40)
    vhat_p, _ = attend(q, keys[perm], values[perm])
    perm_err = np.abs(vhat.value - vhat_p.value).max()
    ok = nonneg and sum_err <= 1e-9 and singleton and perm_err <= 1e-12
    assert report(4, ok, f"nonneg {nonneg}, sum error {sum_err:.2e} (tol 1e-9), "
                         f"|Omega|=1 exact {singleton}, permutation error {perm_err:.2e} (tol 1e-12)")


def test_criterion_5_pattern_transfer_benchmark(benchmark):
    """Full median WAPE >= 20% below the intra-series ablation and within 2x
    of the copy-oracle floor; full + intra-series runs < 10 min."""
    full = benchmark["medians"]["full"]
    intra = benchmark["medians"]["i"]
    oracle = benchmark["oracle"]
    secs = benchmark["seconds"]["full"] + benchmark["seconds"]["i"]
    gap_ok = full <= 0.8 * intra
    floor_ok = full <= 2.0 * oracle
    time_ok = secs < 600.0
    ok = gap_ok and floor_ok and time_ok
    assert report(5, ok, f"full median {full:.4f} vs intra-series {intra:.4f} "
                         f"(need <= {0.8 * intra:.4f}: {gap_ok}), oracle floor {oracle:.4f} "
                         f"(need <= {2 * oracle:.4f}: {floor_ok}), {secs:.0f}s (< 600s: {time_ok})")


def test_criterion_6_real_data_smoke():
    """Optional: pooled 4-week deaths WAPE <= 0.45 on archived snapshots."""
    candidates = [Path(__file__).resolve().parent.parent / "data" / "deaths.csv",
                  Path("/root/data/deaths.csv")]
    if not any(p.exists() for p in candidates):
        line = "CRITERION 6: SKIP - archived real-data snapshots not supplied"
        print("\n" + line)
        conftest.CRITERION_LINES.append(line)
        pytest.skip("archived real-data snapshots not supplied")


def test_criterion_7_ablation_harness(benchmark):
    """All four ablations train with finite losses; full median <= each."""
    med = benchmark["medians"]
    finite = benchmark["finite"]
    worse = {v: med["full"] <= med[v] for v in ("d", "n", "i", "f")}
    ok = finite and all(worse.values())
    detail = ", ".join(f"{v}={med[v]:.4f}({'ok' if worse[v] else 'violated'})"
                       for v in ("d", "n", "i", "f"))
    assert report(7, ok, f"finite losses: {finite}; full={med['full']:.4f} vs {detail}")


def test_criterion_8_determinism(tmp_path):
    """Two identical train+forecast runs produce byte-identical forecast CSVs."""
    rng = np.random.default_rng(4)
    t = np.arange(70, dtype=float)
    values = np.stack([12 * (i + 1) * (1 + 0.4 * np.sin(t / 5)) + rng.random(70)
                       for i in range(3)])
    ds = Dataset(["a", "b", "c"], dt.date(2020, 3, 1), values, kind="hospitalizations")
    data = tmp_path / "data.csv"
    write_long_csv(ds, data)
    outputs = []
    for run in ("r1", "r2"):
        tdir, fdir = tmp_path / run / "train", tmp_path / run / "fc"
        assert run_command(["train", "--data", str(data), "--task", "hosp",
                            "--hidden", "8", "--iters", "60", "--seed", "7",
                            "--out", str(tdir)]) == 0
        assert run_command(["forecast", "--data", str(data), "--task", "hosp",
                            "--checkpoint", str(tdir / "checkpoint.json"),
                            "--issue-date", "2020-05-09", "--out", str(fdir)]) == 0
        outputs.append((fdir / "forecast.csv").read_bytes())
    manifests_match = (json.loads((tmp_path / "r1/train/manifest.json").read_text())["config"]
                       == json.loads((tmp_path / "r2/train/manifest.json").read_text())["config"])
    ok = outputs[0] == outputs[1] and manifests_match
    assert report(8, ok, f"byte-identical forecast CSVs: {outputs[0] == outputs[1]}, "
                         f"identical manifests: {manifests_match}")


def test_criterion_9_clustering():
    """K-means K=4 recovers the 4-cloud partition (ARI = 1); elbow curve is
    non-increasing with a sharp drop at K=4."""
    rng = np.random.default_rng(5)
    centers = rng.standard_normal((4, 16)) * 6
    points = np.concatenate([c + 0.1 * rng.standard_normal((20, 16)) for c in centers])
    labels = np.repeat(np.arange(4), 20)
    run = kmeans(points, 4, seed=0)
    ari = adjusted_rand_score(labels, run.labels)
    curve = dict(elbow_curve(points, 6, seed=0))
    sses = [curve[k] for k in range(1, 7)]
    monotone = all(x >= y - 1e-9 for x, y in zip(sses, sses[1:]))
    sharp = (curve[3] - curve[4]) > 10 * (curve[4] - curve[5]) and curve[4] < 0.05 * curve[1]
    ok = ari == 1.0 and monotone and sharp
    assert report(9, ok, f"ARI {ari:.3f} (need 1.0), elbow non-increasing {monotone}, "
                         f"sharp drop at K=4 {sharp}")
