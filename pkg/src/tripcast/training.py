"""Losses, Adam optimization, offline training and the online update loop."""

from __future__ import annotations

import hashlib
import json
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import NumericError, Tensor
from .encoder import IntervalFeatures
from .generator import GroundTruth
from .model import NormStats


class TrainingError(RuntimeError):
    pass


class TrainAbort(TrainingError):
    """Non-finite loss; message carries step and parameter norms."""


# ---------------------------------------------------------------------------
# losses


def _as_loss_operand(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return ad.constant(np.asarray(x, dtype=np.float64))


def mse_loss(y, yhat) -> Tensor:
    """Mean squared error over equally shaped operands."""
    y_t, yhat_t = _as_loss_operand(y), _as_loss_operand(yhat)
    return ad.mse(yhat_t, y_t)


def affected_mask_from_ids(ids, num_segments: int, horizons: int) -> np.ndarray:
    mask = np.zeros((horizons, num_segments), dtype=bool)
    for seg in ids:
        if not 0 <= seg < num_segments:
            raise TrainingError(f"affected set contains unknown segment id {seg}")
        mask[:, seg] = True
    return mask


def weighted_event_loss(y, yhat, affected_mask, beta: float = 10.0) -> Tensor:
    """Squared-error loss with event-affected cells weighted by beta.

    ``(1 / (|V| * L)) * (sum_affected beta * e^2 + sum_rest e^2)`` where the
    mask flags affected (segment, horizon) cells. ``beta = 1`` reduces to
    plain MSE exactly.
    """
    if beta <= 0:
        raise TrainingError(f"beta must be positive, got {beta}")
    y_arr = y.values if isinstance(y, Tensor) else np.asarray(y, dtype=np.float64)
    mask = np.asarray(affected_mask, dtype=bool)
    if mask.shape != y_arr.shape:
        raise TrainingError(f"mask shape {mask.shape} != target shape {y_arr.shape}")
    weights = np.where(mask, beta, 1.0).reshape(-1)
    y_flat = ad.constant(y_arr.reshape(-1))
    if isinstance(yhat, Tensor):
        yhat_t = yhat
    else:
        yhat_t = ad.constant(np.asarray(yhat, dtype=np.float64).reshape(-1))
    if yhat_t.values.shape != y_flat.values.shape:
        raise TrainingError(f"prediction shape {yhat_t.values.shape} does not flatten "
                            f"to target shape {y_arr.shape}")
    diff = ad.sub(yhat_t, y_flat)
    weighted = ad.mul(ad.constant(weights), ad.mul(diff, diff))
    return ad.mul(ad.constant(1.0 / weights.size), ad.sum_(weighted))


# ---------------------------------------------------------------------------
# optimizer


class Adam:
    def __init__(self, params: dict[str, Tensor], lr: float = 1e-3, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8, clip_norm: float = 5.0):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.clip_norm = clip_norm
        self.m = {name: np.zeros_like(p.values) for name, p in params.items()}
        self.v = {name: np.zeros_like(p.values) for name, p in params.items()}
        self.t = 0

    def step(self, grads: dict[int, np.ndarray]) -> None:
        self.t += 1
        gs = {name: grads[id(p)] for name, p in self.params.items()}
        if self.clip_norm is not None:
            total = np.sqrt(sum(float(np.sum(g * g)) for g in gs.values()))
            if total > self.clip_norm:
                scale = self.clip_norm / total
                gs = {name: g * scale for name, g in gs.items()}
        b1c = 1.0 - self.beta1 ** self.t
        b2c = 1.0 - self.beta2 ** self.t
        for name, p in self.params.items():
            g = gs[name]
            self.m[name] = self.beta1 * self.m[name] + (1.0 - self.beta1) * g
            self.v[name] = self.beta2 * self.v[name] + (1.0 - self.beta2) * g * g
            mhat = self.m[name] / b1c
            vhat = self.v[name] / b2c
            p.values = p.values - self.lr * mhat / (np.sqrt(vhat) + self.eps)


# ---------------------------------------------------------------------------
# dataset


@dataclass
class TrafficDataset:
    """Interval-indexed observations as consumed by the forecasters."""

    volumes: np.ndarray  # (T, |V|)
    speeds: np.ndarray  # (T, |V|)
    od_series: list  # per interval: (origin, destination) -> count
    interval_seconds: float
    affected: np.ndarray | None = None  # (T, |V|) bool
    path_volumes: np.ndarray | None = None  # (T, P)
    route_shares: np.ndarray | None = None  # (T, P)
    paths: list | None = None  # [(od_key, segment tuple)] aligned with columns

    @classmethod
    def from_groundtruth(cls, gt: GroundTruth) -> "TrafficDataset":
        return cls(volumes=gt.panel.volume_series.copy(),
                   speeds=gt.panel.speed_series.copy(),
                   od_series=[dict(row) for row in gt.panel.od_series],
                   interval_seconds=gt.interval_seconds,
                   affected=gt.affected_mask.copy(),
                   path_volumes=gt.path_volumes.copy(),
                   route_shares=gt.route_shares.copy(),
                   paths=list(gt.paths))

    @classmethod
    def from_dir(cls, path) -> "TrafficDataset":
        return cls.from_groundtruth(GroundTruth.load(path))

    @property
    def num_intervals(self) -> int:
        return self.volumes.shape[0]

    @property
    def num_segments(self) -> int:
        return self.volumes.shape[1]

    def features(self, t: int) -> IntervalFeatures:
        """Per-interval features; cached so overlapping windows share objects."""
        key = (id(self.volumes), id(self.speeds))
        cache = getattr(self, "_feature_cache", None)
        if cache is None or cache[0] != key:
            cache = (key, {})
            self._feature_cache = cache
        if t not in cache[1]:
            cache[1][t] = IntervalFeatures(volumes=self.volumes[t], speeds=self.speeds[t],
                                           demands=self.od_series[t])
        return cache[1][t]

    def split_bounds(self, ratios=(4, 1, 2)) -> tuple[int, int]:
        """Chronological split boundaries: [0, a) train, [a, b) val, [b, T) test."""
        total = sum(ratios)
        a = int(round(self.num_intervals * ratios[0] / total))
        b = int(round(self.num_intervals * (ratios[0] + ratios[1]) / total))
        return a, b

    def window_starts(self, lo: int, hi: int, tau: int, horizons: int) -> list[int]:
        """Start indices t0 with inputs [t0, t0+tau) and targets fitting in [lo, hi)."""
        return list(range(lo, hi - tau - horizons + 1))

    def sample(self, t0: int, tau: int, horizons: int):
        feats = [self.features(t) for t in range(t0, t0 + tau)]
        targets = self.volumes[t0 + tau: t0 + tau + horizons]
        if self.affected is not None:
            mask = self.affected[t0 + tau: t0 + tau + horizons]
        else:
            mask = np.zeros_like(targets, dtype=bool)
        return feats, targets, mask


def config_hash(config) -> str:
    blob = json.dumps(config.to_dict() if hasattr(config, "to_dict") else config,
                      sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


# ---------------------------------------------------------------------------
# offline training


@dataclass
class TrainConfig:
    steps: int = 400
    batch_size: int = 6
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    clip_norm: float = 5.0
    event_beta: float = 1.0  # > 1 switches to the event-weighted loss
    val_every: int = 20
    patience: int = 20  # validation checks without improvement before stopping
    val_samples: int = 24
    warm_start_output: bool = True  # anchor the output head at the train-mean volumes
    seed: int = 0

    def to_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass
class TrainResult:
    curve: list  # rows: {"step", "train_loss", "val_loss"}
    best_step: int
    best_val: float
    steps_run: int


def _step_rng(seed: int, step: int) -> np.random.Generator:
    # stateless per-step stream so resumed runs replay the same batches
    return np.random.default_rng(np.uint64(1_000_003) * np.uint64(seed + 7) + np.uint64(step))


def _param_norms(params: dict[str, Tensor]) -> str:
    worst = sorted(params.items(), key=lambda kv: -float(np.abs(kv[1].values).max()))[:3]
    return ", ".join(f"{k}={float(np.abs(v.values).max()):.3e}" for k, v in worst)


def _sample_loss(outputs, targets, mask, event_beta: float) -> Tensor:
    flat = ad.concat(outputs)
    if event_beta > 1.0 and mask.any():
        return weighted_event_loss(targets, flat, mask, beta=event_beta)
    return mse_loss(targets.reshape(-1), flat)


def _forecast_loss(model, feats, targets, mask, event_beta: float) -> Tensor:
    return _sample_loss(model.forward_window(feats), targets, mask, event_beta)


def _batch_outputs(model, windows):
    if hasattr(model, "forward_windows"):
        return model.forward_windows(windows)
    return [model.forward_window(w) for w in windows]


def offline_train(model, dataset: TrafficDataset, config: TrainConfig,
                  start_step: int = 0, log=None) -> TrainResult:
    """Adam fine-tuning on forecast loss with best-on-validation selection."""
    tau, horizons = model.config.tau, model.config.horizons
    a, b = dataset.split_bounds()
    train_windows = dataset.window_starts(0, a, tau, horizons)
    val_windows = dataset.window_starts(a, b, tau, horizons)
    if not train_windows:
        raise TrainingError("training split has no complete windows")
    model.norm = NormStats.fit(dataset.volumes[:a], dataset.speeds[:a])
    if config.warm_start_output and start_step == 0 and hasattr(model, "init_output_bias"):
        model.init_output_bias(dataset.volumes[:a].mean(axis=0))

    val_rng = np.random.default_rng(config.seed + 999)
    if val_windows:
        chosen = val_rng.choice(len(val_windows), size=min(config.val_samples, len(val_windows)),
                                replace=False)
        val_subset = [val_windows[i] for i in sorted(chosen)]
    else:
        val_subset = []

    params = model.named_params()
    opt = Adam(params, lr=config.lr, beta1=config.beta1, beta2=config.beta2,
               eps=config.eps, clip_norm=config.clip_norm)
    curve = []
    best_val = np.inf
    best_step = start_step
    best_values = None
    stale = 0

    def validation_loss() -> float:
        total = 0.0
        samples = [dataset.sample(t0, tau, horizons) for t0 in val_subset]
        outputs = _batch_outputs(model, [s[0] for s in samples])
        for out, (_, targets, mask) in zip(outputs, samples):
            total += _sample_loss(out, targets, mask, config.event_beta).item()
        return total / max(1, len(val_subset))

    step = start_step
    for step in range(start_step, start_step + config.steps):
        rng = _step_rng(config.seed, step)
        batch = rng.choice(len(train_windows), size=min(config.batch_size, len(train_windows)),
                           replace=False)
        try:
            samples = [dataset.sample(train_windows[int(idx)], tau, horizons)
                       for idx in batch]
            outputs = _batch_outputs(model, [s[0] for s in samples])
            loss_sum = None
            for out, (_, targets, mask) in zip(outputs, samples):
                loss = _sample_loss(out, targets, mask, config.event_beta)
                loss_sum = loss if loss_sum is None else ad.add(loss_sum, loss)
            batch_loss = ad.mul(ad.constant(1.0 / len(batch)), loss_sum)
            grads = ad.backward(batch_loss, params.values())
        except NumericError as exc:
            raise TrainAbort(f"non-finite loss at step {step}: {exc}; "
                             f"largest params: {_param_norms(params)}") from exc
        train_loss = batch_loss.item()
        if not np.isfinite(train_loss):
            raise TrainAbort(f"non-finite loss at step {step}; "
                             f"largest params: {_param_norms(params)}")
        opt.step(grads)

        val_loss = None
        if val_subset and (step + 1) % config.val_every == 0:
            val_loss = validation_loss()
            if val_loss < best_val:
                best_val = val_loss
                best_step = step + 1
                best_values = model.snapshot()
                stale = 0
            else:
                stale += 1
        curve.append({"step": step + 1, "train_loss": train_loss, "val_loss": val_loss})
        if log:
            log(step + 1, train_loss, val_loss)
        if val_subset and stale >= config.patience:
            break

    if best_values is not None:
        model.load_values(best_values)
    else:
        best_step = step + 1
        best_val = train_loss
    return TrainResult(curve=curve, best_step=best_step, best_val=float(best_val),
                       steps_run=len(curve))


def write_loss_curve(path, curve) -> None:
    lines = ["step,train_loss,val_loss"]
    for row in curve:
        val = "" if row["val_loss"] is None else f"{row['val_loss']:.9f}"
        lines.append(f"{row['step']},{row['train_loss']:.9f},{val}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


# ---------------------------------------------------------------------------
# route pretraining


@dataclass
class PretrainConfig:
    steps: int = 300
    batch_intervals: int = 8
    lr: float = 1e-3
    clip_norm: float = 5.0
    seed: int = 0

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def match_paths_to_dataset(model, dataset: TrafficDataset) -> dict[int, int]:
    """model path_id -> dataset path column, matched on (od, segment sequence)."""
    if dataset.paths is None:
        raise TrainingError("dataset carries no path registry for route supervision")
    columns = {(od, seq): i for i, (od, seq) in enumerate(dataset.paths)}
    mapping: dict[int, int] = {}
    for path in model.graph.path_nodes:
        od = model.graph.od_nodes[path.od_id]
        col = columns.get(((od.origin, od.destination), path.segment_seq))
        if col is not None:
            mapping[path.path_id] = col
    return mapping


def _route_batch_loss(model, dataset: TrafficDataset, mapping: dict[int, int],
                      intervals) -> Tensor:
    """Squared error of demand * preference against true path volumes."""
    compiled = model.encoder.compiled
    ts = sorted(int(i) for i in intervals)
    feats_list = [dataset.features(t) for t in ts]
    shares_list = model.route_shares_many(feats_list)
    preds, labels = [], []
    for t, feats, shares in zip(ts, feats_list, shares_list):
        for od_id, path_ids in compiled.od_paths.items():
            demand = float(feats.demands.get(compiled.od_key[od_id], 0.0))
            co = shares[od_id]
            for idx, path_id in enumerate(path_ids):
                col = mapping.get(path_id)
                if col is None:
                    continue
                preds.append(ad.mul(ad.constant(demand), ad.element(co, idx)))
                labels.append(dataset.path_volumes[t, col])
    if not preds:
        raise TrainingError("no supervised path volumes in the requested intervals")
    return ad.mse(ad.stack(preds), ad.constant(np.array(labels)))


def route_fit_loss(model, dataset: TrafficDataset, intervals) -> float:
    """Current route-module fit on fixed intervals (no parameter update)."""
    mapping = match_paths_to_dataset(model, dataset)
    return _route_batch_loss(model, dataset, mapping, intervals).item()


def pretrain_route(model, dataset: TrafficDataset, config: PretrainConfig,
                   log=None) -> TrainResult:
    """Fit the causal encoder on per-interval true path volumes."""
    if dataset.path_volumes is None:
        raise TrainingError("dataset carries no path volumes to pretrain against")
    a, _ = dataset.split_bounds()
    mapping = match_paths_to_dataset(model, dataset)
    if not mapping:
        raise TrainingError("no model path matches the dataset path registry")
    multi = [od.od_id for od in model.graph.od_nodes
             if len(model.graph.paths_of_od(od.od_id)) > 1]
    if not multi:
        warnings.warn("route pretraining is degenerate: every OD has a single path")
    model.norm = NormStats.fit(dataset.volumes[:a], dataset.speeds[:a])

    params = model.encoder.named_params()
    opt = Adam(params, lr=config.lr, clip_norm=config.clip_norm)
    curve = []
    for step in range(config.steps):
        rng = _step_rng(config.seed + 31, step)
        intervals = rng.choice(a, size=min(config.batch_intervals, a), replace=False)
        try:
            loss = _route_batch_loss(model, dataset, mapping, intervals)
            grads = ad.backward(loss, params.values())
        except NumericError as exc:
            raise TrainAbort(f"non-finite pretraining loss at step {step}: {exc}") from exc
        opt.step(grads)
        curve.append({"step": step + 1, "train_loss": loss.item(), "val_loss": None})
        if log:
            log(step + 1, loss.item(), None)
    final = curve[-1]["train_loss"] if curve else float("nan")
    return TrainResult(curve=curve, best_step=len(curve), best_val=float(final),
                       steps_run=len(curve))


# ---------------------------------------------------------------------------
# online loop


@dataclass
class OnlineConfig:
    phi: int = 12  # intervals between parameter updates
    lr: float = 1e-3
    clip_norm: float = 5.0
    update: bool = True  # False freezes the checkpoint (baseline comparison)

    def to_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass
class OnlineRecord:
    t: int  # 1-based arrival index
    prediction: np.ndarray | None  # (L, |V|) for intervals t-L+1..t
    target: np.ndarray | None
    version: int  # parameter version used for the prediction


@dataclass
class OnlineResult:
    records: list
    update_times: list  # arrival indices where parameters changed
    acc_sizes: list  # accumulator length after each arrival
    updates: int

    def rolling_rmse(self, lo: int = 0, hi: int | None = None, horizon: int | None = None
                     ) -> float:
        """RMSE over recorded predictions with arrival index in [lo, hi)."""
        errs = []
        for rec in self.records:
            if rec.prediction is None or rec.t < lo or (hi is not None and rec.t >= hi):
                continue
            diff = rec.prediction - rec.target
            if horizon is not None:
                diff = diff[horizon - 1]
            errs.append(diff.reshape(-1))
        if not errs:
            return float("nan")
        flat = np.concatenate(errs)
        return float(np.sqrt(np.mean(flat * flat)))


class OnlineLoop:
    """Incremental streaming loop: one arrival per :meth:`step`.

    At each arrival t the model predicts the last L intervals from the
    window that ends L intervals ago, accumulates the (prediction, truth)
    pair, and every phi arrivals one Adam step runs on the accumulated
    pairs before the accumulators are cleared.
    """

    def __init__(self, model, config: OnlineConfig):
        self.model = model
        self.config = config
        self.params = model.named_params()
        self.opt = Adam(self.params, lr=config.lr, clip_norm=config.clip_norm)
        self.buffer: list[IntervalFeatures] = []
        self.acc: list[tuple] = []  # (prediction tensors, target array)
        self.records: list[OnlineRecord] = []
        self.update_times: list[int] = []
        self.acc_sizes: list[int] = []
        self.version = 0
        self.t = 0

    @property
    def warm_up_needed(self) -> int:
        return self.model.config.tau + self.model.config.horizons

    @property
    def warmed_up(self) -> bool:
        return len(self.buffer) >= self.warm_up_needed

    def step(self, features: IntervalFeatures) -> OnlineRecord:
        tau, horizons = self.model.config.tau, self.model.config.horizons
        self.t += 1
        t = self.t
        self.buffer.append(features)
        if self.warmed_up:
            window = self.buffer[t - horizons - tau: t - horizons]
            targets = np.stack([self.buffer[i].volumes for i in range(t - horizons, t)])
            outputs = self.model.forward_window(window)
            prediction = np.stack([o.values for o in outputs])
            self.acc.append((outputs, targets))
            record = OnlineRecord(t=t, prediction=prediction, target=targets,
                                  version=self.version)
        else:
            record = OnlineRecord(t=t, prediction=None, target=None, version=self.version)
        self.records.append(record)

        if self.config.update and t % self.config.phi == 0 and self.acc:
            loss_sum = None
            for outputs, targets in self.acc:
                loss = mse_loss(targets.reshape(-1), ad.concat(outputs))
                loss_sum = loss if loss_sum is None else ad.add(loss_sum, loss)
            batch_loss = ad.mul(ad.constant(1.0 / len(self.acc)), loss_sum)
            try:
                grads = ad.backward(batch_loss, self.params.values())
            except NumericError as exc:
                raise TrainAbort(f"non-finite online loss at arrival {t}: {exc}") from exc
            self.opt.step(grads)
            self.acc.clear()
            self.version += 1
            self.update_times.append(t)
        self.acc_sizes.append(len(self.acc))
        return record

    def future_forecast(self) -> np.ndarray | None:
        """Forecast for the next L intervals from the most recent window."""
        tau = self.model.config.tau
        if len(self.buffer) < tau:
            return None
        return self.model.forecast(self.buffer[-tau:])

    def result(self) -> OnlineResult:
        return OnlineResult(records=self.records, update_times=self.update_times,
                            acc_sizes=self.acc_sizes, updates=self.version)


def online_update(model, stream, config: OnlineConfig) -> OnlineResult:
    """Run the streaming loop over a whole arrival sequence."""
    loop = OnlineLoop(model, config)
    for features in stream:
        loop.step(features)
    return loop.result()
