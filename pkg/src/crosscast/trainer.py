"""Joint optimization of Holt, encoder and attention parameters under MAE.

Training minimizes the mean absolute forecast error over mini-batches of
(region, history end) windows, evaluates a held-out last-week validation
loss periodically and keeps the best parameters seen (early stopping).
"""

from __future__ import annotations

import json
import logging
import os
import tempfile
import time
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Param
from .dataset import Dataset, make_windows, train_val_split
from .errors import ConfigError, DivergenceError, UsageError
from .model import ForecastModel, ModelVariant, TrainConfig

log = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1


def weekly_task(kind: str) -> bool:
    """Cases and deaths are scored on weekly sums; hospitalizations daily."""
    return kind in ("cases", "deaths")


def joint_loss(model: ForecastModel, dataset: Dataset, cutoff: int,
               refs: list[tuple[int, int]], targets: list[tuple[int, int]],
               weekly: bool = False, clip: bool = True):
    """MAE between forecasts and truths over a batch of target windows."""
    if not targets:
        raise UsageError("joint_loss needs a non-empty batch")
    cfg = model.config
    y, _, _ = model.forward(dataset, cutoff, refs, targets, clip=clip)
    H, k = cfg.horizon, cfg.k
    rows = np.array([i for i, _ in targets], dtype=np.intp)[:, None]
    cols = (np.array([t for _, t in targets], dtype=np.intp)[:, None]
            + (k - 1) * H + np.arange(H, dtype=np.intp))
    truth = dataset.values[rows, cols]
    if weekly:
        err = ad.absolute(ad.sum_(y, axis=1) - truth.sum(axis=1))
    else:
        err = ad.mean(ad.absolute(y - ad.Node(truth)), axis=1)
    return ad.mean(err)


class Adam:
    """Adaptive moment estimation with bias correction."""

    def __init__(self, params: list[Param], lr: float, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.m = [np.zeros_like(p.value) for p in params]
        self.v = [np.zeros_like(p.value) for p in params]

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()

    def step(self) -> None:
        self.t += 1
        for i, p in enumerate(self.params):
            g = p.grad if p.grad is not None else np.zeros_like(p.value)
            self.m[i] = self.beta1 * self.m[i] + (1 - self.beta1) * g
            self.v[i] = self.beta2 * self.v[i] + (1 - self.beta2) * g * g
            m_hat = self.m[i] / (1 - self.beta1 ** self.t)
            v_hat = self.v[i] / (1 - self.beta2 ** self.t)
            p.value -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


@dataclass
class TrainResult:
    model: ForecastModel
    train_trace: list[tuple[int, float]]  # (iteration, train loss)
    val_trace: list[tuple[int, float]]  # (iteration, validation loss)
    best_iteration: int
    best_val: float
    wall_seconds: float


def train(dataset: Dataset, config: TrainConfig, weekly: bool | None = None) -> TrainResult:
    """Train one per-week-offset model instance; deterministic given the seed."""
    config.validate()
    if weekly is None:
        weekly = weekly_task(dataset.kind)
    started = time.perf_counter()
    cutoff, _ = train_val_split(dataset, config.l)
    kh = config.k * config.horizon
    L = dataset.n_days

    refs = make_windows(dataset, config.l, config.horizon, config.k, cutoff).pairs
    # every window doubles as a training target, except the earliest ones,
    # which have no leakage-safe same-region reference yet (see
    # ForecastModel._reference_mask)
    targets_all = [(i, t) for i, t in refs if t >= config.l + kh]
    if not targets_all:
        raise ConfigError(
            f"history too short to train: need days > {config.l + kh + 7}, have {L}")
    if L - kh < config.l:
        raise ConfigError(f"history too short for a k={config.k} validation target")
    val_targets = [(i, L - kh) for i in range(dataset.n_regions)]

    rng = np.random.default_rng(config.seed)
    model = ForecastModel(dataset, config, rng)
    optimizer = Adam(model.params(), config.lr)

    def val_loss() -> float:
        return joint_loss(model, dataset, cutoff, refs, val_targets, weekly).item()

    best_values = model.param_values()
    best_val = val_loss()
    best_iteration = 0
    val_trace = [(0, best_val)]
    train_trace: list[tuple[int, float]] = []
    bad_checks = 0

    for it in range(1, config.iters + 1):
        picks = rng.integers(0, len(targets_all), size=config.batch)
        batch = [targets_all[j] for j in picks]
        loss = joint_loss(model, dataset, cutoff, refs, batch, weekly, clip=False)
        value = loss.item()
        if not np.isfinite(value):
            norms = {p.name: float(np.linalg.norm(p.value)) for p in model.params()}
            raise DivergenceError(f"non-finite loss at iteration {it}; parameter norms: {norms}")
        optimizer.zero_grad()
        ad.backward(loss)
        optimizer.step()
        train_trace.append((it, value))

        if it % config.eval_every == 0 or it == config.iters:
            current = val_loss()
            val_trace.append((it, current))
            if current < best_val:
                best_val = current
                best_values = model.param_values()
                best_iteration = it
                bad_checks = 0
            else:
                bad_checks += 1
                if bad_checks >= config.patience:
                    log.info("early stop at iteration %d (best val %.6g @ %d)",
                             it, best_val, best_iteration)
                    break

    model.load_param_values(best_values)
    wall = time.perf_counter() - started
    return TrainResult(model, train_trace, val_trace, best_iteration, best_val, wall)


# ---------------------------------------------------------------------------
# checkpoint serialization


def atomic_write_text(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def config_to_dict(config: TrainConfig) -> dict:
    d = asdict(config)
    d["variant"] = config.variant.code
    return d


def config_from_dict(d: dict) -> TrainConfig:
    d = dict(d)
    variant = d.pop("variant", "full")
    if isinstance(variant, dict):
        d["variant"] = ModelVariant(**variant)
    else:
        d["variant"] = ModelVariant.from_code(variant)
    return TrainConfig(**d)


def save_checkpoint(model: ForecastModel, path: str | Path, dataset: Dataset,
                    meta: dict | None = None) -> None:
    payload = {
        "version": CHECKPOINT_VERSION,
        "config": config_to_dict(model.config),
        "seed": model.config.seed,
        "data_fingerprint": dataset.fingerprint(),
        "meta": meta or {},
        "params": {name: value.tolist() for name, value in model.param_values().items()},
    }
    atomic_write_text(Path(path), json.dumps(payload))


def load_checkpoint(path: str | Path, dataset: Dataset,
                    check_fingerprint: bool = False) -> tuple[ForecastModel, dict]:
    with Path(path).open(encoding="utf-8") as fh:
        payload = json.load(fh)
    if payload.get("version") != CHECKPOINT_VERSION:
        raise ConfigError(f"unsupported checkpoint version {payload.get('version')!r}")
    if check_fingerprint and payload["data_fingerprint"] != dataset.fingerprint():
        raise ConfigError("checkpoint was trained on different data (fingerprint mismatch)")
    config = config_from_dict(payload["config"])
    model = ForecastModel(dataset, config)
    model.load_param_values({k: np.asarray(v) for k, v in payload["params"].items()})
    return model, payload


def write_loss_trace(result: TrainResult, path: str | Path) -> None:
    """`iteration,train_loss,val_loss` CSV; val cells are blank off-schedule."""
    val = dict(result.val_trace)
    lines = ["iteration,train_loss,val_loss"]
    lines.append(f"0,,{val[0]!r}" if 0 in val else "0,,")
    for it, tl in result.train_trace:
        v = val.get(it)
        lines.append(f"{it},{tl!r},{'' if v is None else repr(v)}")
    atomic_write_text(Path(path), "\n".join(lines) + "\n")
