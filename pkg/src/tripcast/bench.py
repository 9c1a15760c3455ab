"""Baselines, metrics, ablations and the evaluation suite."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .checkpoint import write_checkpoint
from .encoder import IntervalFeatures
from .ioutil import dump_json
from .layers import Dense, GRUStack
from .model import ModelConfig, NormStats, TripCastModel
from .network import RoadNetwork
from .training import (PretrainConfig, TrafficDataset, TrainConfig, TrainingError,
                       match_paths_to_dataset, offline_train, pretrain_route)
from .tripgraph import TripGraph

VARIANTS = ("tripcast", "tripcast-nood", "tripcast-notf", "ha", "gru")


class BenchError(ValueError):
    pass


# ---------------------------------------------------------------------------
# training-free baseline


def ha_forecast(history: np.ndarray, horizons: int) -> np.ndarray:
    """Historical average: per-segment mean of the window at every horizon."""
    history = np.asarray(history, dtype=np.float64)
    if history.ndim != 2 or history.shape[0] == 0:
        raise BenchError(f"ha_forecast needs a nonempty (window, segments) history, "
                         f"got shape {history.shape}")
    mean = history.mean(axis=0)
    return np.tile(mean, (horizons, 1))


# ---------------------------------------------------------------------------
# plain recurrent baseline (no trip graph, no OD demands)


@dataclass
class BaselineConfig:
    tau: int = 4
    horizons: int = 6
    hidden: int = 64
    layers: int = 2
    seed: int = 0

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "BaselineConfig":
        return cls(**data)


class GRUBaseline:
    """Sequence model over raw volume vectors with a nonnegative output head."""

    kind = "gru_baseline"

    def __init__(self, config: BaselineConfig, net: RoadNetwork):
        self.config = config
        self.net = net
        rng = np.random.default_rng(config.seed)
        V = net.num_nodes
        self.gru = GRUStack(rng, V, config.hidden, config.layers, "baseline.gru")
        self.out = Dense(rng, config.hidden, V, "baseline.out")
        self.norm = NormStats.identity(V)

    @property
    def num_nodes(self) -> int:
        return self.net.num_nodes

    def forward_window(self, window: list[IntervalFeatures]) -> list[Tensor]:
        if len(window) != self.config.tau:
            raise BenchError(f"expected {self.config.tau} intervals, got {len(window)}")
        inputs = [ad.constant(self.norm.volumes(f.volumes)) for f in window]
        state = self.gru.zero_state()
        top = None
        for x in inputs:
            top, state = self.gru.step(x, state)
        outputs = [ad.relu(self.out(top))]
        for _ in range(self.config.horizons - 1):
            top, state = self.gru.step(inputs[-1], state)
            outputs.append(ad.relu(self.out(top)))
        return outputs

    def forward_windows(self, windows: list[list[IntervalFeatures]]) -> list[list[Tensor]]:
        """Column-batched variant of :meth:`forward_window`."""
        cols = len(windows)
        if any(len(w) != self.config.tau for w in windows):
            raise BenchError(f"every window must have {self.config.tau} intervals")
        xs = [ad.constant(np.stack([self.norm.volumes(w[i].volumes) for w in windows],
                                   axis=1))
              for i in range(self.config.tau)]
        state = self.gru.zero_state_batch(cols)
        top = None
        for x in xs:
            top, state = self.gru.step_batch(x, state)
        outputs = [ad.relu(self.out.batch(top))]
        for _ in range(self.config.horizons - 1):
            top, state = self.gru.step_batch(xs[-1], state)
            outputs.append(ad.relu(self.out.batch(top)))
        return [[ad.column(outputs[h], j) for h in range(self.config.horizons)]
                for j in range(cols)]

    def forecast(self, window: list[IntervalFeatures]) -> np.ndarray:
        return np.stack([t.values for t in self.forward_window(window)])

    def init_output_bias(self, mean_volumes: np.ndarray) -> None:
        self.out.b.values = np.asarray(mean_volumes, dtype=float).copy()

    def named_params(self) -> dict[str, Tensor]:
        out = dict(self.gru.named_params())
        out.update(self.out.named_params())
        return out

    def snapshot(self) -> dict[str, np.ndarray]:
        return {k: v.values.copy() for k, v in self.named_params().items()}

    def load_values(self, tensors: dict[str, np.ndarray]) -> None:
        params = self.named_params()
        for name, tensor in params.items():
            tensor.values = tensors[name].copy()

    def save(self, path, metadata: dict | None = None) -> None:
        meta = {"kind": self.kind, "config": self.config.to_dict(),
                "network": self.net.to_dict(), "norm": self.norm.to_dict(),
                "metadata": metadata or {}}
        write_checkpoint(path, {k: v.values for k, v in self.named_params().items()}, meta)

    @classmethod
    def from_checkpoint(cls, tensors: dict[str, np.ndarray], meta: dict) -> "GRUBaseline":
        model = cls(BaselineConfig.from_dict(meta["config"]),
                    RoadNetwork.from_dict(meta["network"]))
        model.norm = NormStats.from_dict(meta["norm"])
        model.load_values(tensors)
        return model


# ---------------------------------------------------------------------------
# metrics


def compute_metrics(y: np.ndarray, yhat: np.ndarray, mask: np.ndarray | None = None
                    ) -> list[dict]:
    """Per-horizon RMSE and MAE over (sample, horizon, segment) arrays.

    ``mask`` selects cells; a horizon with no selected cell is an error.
    """
    y = np.asarray(y, dtype=np.float64)
    yhat = np.asarray(yhat, dtype=np.float64)
    if y.shape != yhat.shape:
        raise BenchError(f"shape mismatch {y.shape} vs {yhat.shape}")
    if y.ndim == 2:
        y, yhat = y[None], yhat[None]
        mask = None if mask is None else np.asarray(mask)[None]
    if mask is not None and np.asarray(mask).shape != y.shape:
        raise BenchError(f"mask shape {np.asarray(mask).shape} != {y.shape}")
    rows = []
    for h in range(y.shape[1]):
        err = yhat[:, h, :] - y[:, h, :]
        if mask is not None:
            selected = err[np.asarray(mask, dtype=bool)[:, h, :]]
        else:
            selected = err.reshape(-1)
        if selected.size == 0:
            raise BenchError(f"no cells selected at horizon {h + 1}")
        rows.append({
            "horizon": h + 1,
            "rmse": float(np.sqrt(np.mean(selected * selected))),
            "mae": float(np.mean(np.abs(selected))),
            "cells": int(selected.size),
        })
    return rows


def route_share_accuracy(predicted: np.ndarray, true: np.ndarray,
                         od_groups: list[list[int]]) -> dict:
    """Share-recovery scores over aligned (interval, path) share arrays.

    Primary: fraction of OD-intervals whose predicted argmax path matches
    the true argmax. Secondary: 1 - mean total-variation distance
    (half L1) between share vectors.
    """
    predicted = np.asarray(predicted, dtype=np.float64)
    true = np.asarray(true, dtype=np.float64)
    if predicted.shape != true.shape:
        raise BenchError(f"share shapes differ: {predicted.shape} vs {true.shape}")
    hits = 0
    count = 0
    l1_total = 0.0
    for cols in od_groups:
        if not cols:
            raise BenchError("an OD with no paths cannot be scored")
        p = predicted[:, cols]
        q = true[:, cols]
        hits += int(np.sum(np.argmax(p, axis=1) == np.argmax(q, axis=1)))
        l1_total += float(np.sum(np.abs(p - q)) / 2.0)
        count += predicted.shape[0]
    return {"argmax": hits / count, "l1": 1.0 - l1_total / count}


def adjacency_correlation(volumes: np.ndarray, net: RoadNetwork) -> list[dict]:
    """Pearson r between the volume series of every directed edge pair."""
    volumes = np.asarray(volumes, dtype=np.float64)
    if volumes.shape[0] < 3:
        raise BenchError("need at least 3 intervals for correlations")
    rows = []
    for a, b in net.edges:
        xa, xb = volumes[:, a], volumes[:, b]
        sa, sb = xa.std(), xb.std()
        if sa == 0.0 or sb == 0.0:
            r = None  # undefined for a constant series
        else:
            r = float(np.mean((xa - xa.mean()) * (xb - xb.mean())) / (sa * sb))
        rows.append({"from": a, "to": b, "r": r})
    return rows


# ---------------------------------------------------------------------------
# suite


@dataclass
class SuiteConfig:
    variants: tuple = VARIANTS
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    pretrain: PretrainConfig | None = field(default_factory=PretrainConfig)
    seed: int = 0


@dataclass
class MetricsReport:
    rows: list  # {"variant", "horizon", "subset", "rmse", "mae", "cells"}
    route_accuracy: dict
    metadata: dict

    def variant_rows(self, variant: str, subset: str = "all") -> list[dict]:
        return [r for r in self.rows
                if r["variant"] == variant and r["subset"] == subset]

    def to_csv(self) -> str:
        lines = ["variant,horizon,subset,rmse,mae,cells"]
        for r in self.rows:
            lines.append(f"{r['variant']},{r['horizon']},{r['subset']},"
                         f"{r['rmse']:.9f},{r['mae']:.9f},{r['cells']}")
        return "\n".join(lines) + "\n"

    def to_dict(self) -> dict:
        return {"schema_version": "1", "rows": self.rows,
                "route_accuracy": self.route_accuracy, "metadata": self.metadata}

    def save(self, out_dir) -> None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "metrics.csv").write_text(self.to_csv(), encoding="utf-8")
        dump_json(self.to_dict(), out_dir / "report.json")


def forecast_windows(model, dataset: TrafficDataset, lo: int, hi: int,
                     predictor=None, chunk: int = 24
                     ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Roll a forecaster over every full window in [lo, hi).

    Returns (y, yhat, affected) shaped (samples, horizons, segments).
    Models exposing ``forward_windows`` are evaluated in chunks so
    overlapping windows share encoder work.
    """
    tau = model.config.tau
    horizons = model.config.horizons
    starts = dataset.window_starts(lo, hi, tau, horizons)
    if not starts:
        raise BenchError(f"no complete windows in [{lo}, {hi})")
    ys, yhats, masks = [], [], []
    samples = [dataset.sample(t0, tau, horizons) for t0 in starts]
    for feats, targets, mask in samples:
        ys.append(targets)
        masks.append(mask)
    if predictor is not None or not hasattr(model, "forward_windows"):
        for feats, _, _ in samples:
            pred = predictor(feats) if predictor else model.forecast(feats)
            yhats.append(pred)
    else:
        for at in range(0, len(samples), chunk):
            part = samples[at:at + chunk]
            outputs = model.forward_windows([s[0] for s in part])
            yhats.extend(np.stack([o.values for o in out]) for out in outputs)
    return np.stack(ys), np.stack(yhats), np.stack(masks)


def evaluate_route_shares(model: TripCastModel, dataset: TrafficDataset,
                          intervals) -> dict:
    """Predicted vs true route shares on given intervals (argmax + L1 scores)."""
    if dataset.route_shares is None:
        raise BenchError("dataset has no true route shares")
    mapping = match_paths_to_dataset(model, dataset)
    compiled = model.encoder.compiled
    od_groups = []
    covered_cols: list[int] = []
    col_of: dict[int, int] = {}
    for od_id, path_ids in sorted(compiled.od_paths.items()):
        cols = [mapping.get(p) for p in path_ids]
        if any(c is None for c in cols):
            continue  # OD not fully represented in the truth registry
        group = []
        for c in cols:
            col_of[c] = len(covered_cols)
            group.append(len(covered_cols))
            covered_cols.append(c)
        od_groups.append(group)
    if not od_groups:
        raise BenchError("no OD is fully matched between model and dataset paths")
    intervals = [int(t) for t in intervals]
    pred = np.zeros((len(intervals), len(covered_cols)))
    true = np.zeros_like(pred)
    for row, t in enumerate(intervals):
        shares = model.route_shares(dataset.features(t))
        for od_id, path_ids in sorted(compiled.od_paths.items()):
            cols = [mapping.get(p) for p in path_ids]
            if any(c is None for c in cols):
                continue
            co = shares[od_id].values
            for idx, c in enumerate(cols):
                pred[row, col_of[c]] = co[idx]
                true[row, col_of[c]] = dataset.route_shares[t, c]
    scores = route_share_accuracy(pred, true, od_groups)
    scores["od_count"] = len(od_groups)
    scores["intervals"] = len(intervals)
    return scores


def build_variant(variant: str, graph: TripGraph, net: RoadNetwork,
                  config: SuiteConfig):
    base = config.model.to_dict()
    base["seed"] = config.seed
    if variant == "tripcast":
        return TripCastModel(ModelConfig.from_dict(base), graph, net)
    if variant == "tripcast-nood":
        base["no_od"] = True
        return TripCastModel(ModelConfig.from_dict(base), graph, net)
    if variant == "tripcast-notf":
        base["no_tf"] = True
        return TripCastModel(ModelConfig.from_dict(base), graph, net)
    if variant == "gru":
        return GRUBaseline(BaselineConfig(tau=config.model.tau,
                                          horizons=config.model.horizons,
                                          seed=config.seed), net)
    raise BenchError(f"unknown variant {variant!r}")


def run_suite(dataset: TrafficDataset, graph: TripGraph, net: RoadNetwork,
              config: SuiteConfig, checkpoints: dict | None = None,
              log=None) -> MetricsReport:
    """Train (or load) every variant and evaluate the test split.

    ``checkpoints`` maps variant name to an already-trained model object;
    missing variants are trained with the suite's budget. Output rows cover
    all segments plus, when the dataset has events, event-affected cells.
    """
    from .checkpoint import load_model  # local import to avoid cycles

    a, b = dataset.split_bounds()
    tau, horizons = config.model.tau, config.model.horizons
    rows = []
    route_accuracy = {}
    checkpoints = checkpoints or {}

    for variant in config.variants:
        if variant not in VARIANTS:
            raise BenchError(f"unknown variant {variant!r}")
        if log:
            log(f"variant {variant}")
        if variant == "ha":
            def ha_predict(feats):
                history = np.stack([f.volumes for f in feats])
                return ha_forecast(history, horizons)

            class _HA:  # minimal adapter carrying the window geometry
                pass

            ha = _HA()
            ha.config = config.model
            y, yhat, masks = forecast_windows(ha, dataset, b, dataset.num_intervals,
                                              predictor=ha_predict)
        else:
            model = checkpoints.get(variant)
            if isinstance(model, (str, Path)):
                model = load_model(model)
            if model is None:
                model = build_variant(variant, graph, net, config)
                if variant.startswith("tripcast") and config.pretrain is not None:
                    pretrain_route(model, dataset, config.pretrain)
                offline_train(model, dataset, config.train)
            y, yhat, masks = forecast_windows(model, dataset, b, dataset.num_intervals)
            if variant == "tripcast":
                route_accuracy[variant] = evaluate_route_shares(
                    model, dataset, range(b, dataset.num_intervals))
        for row in compute_metrics(y, yhat):
            rows.append({"variant": variant, "subset": "all", **row})
        if masks.any(axis=(0, 2)).all():  # every horizon has affected cells
            for row in compute_metrics(y, yhat, masks):
                rows.append({"variant": variant, "subset": "affected", **row})

    metadata = {"seed": config.seed, "variants": list(config.variants),
                "test_range": [b, dataset.num_intervals],
                "train_steps": config.train.steps}
    return MetricsReport(rows=rows, route_accuracy=route_accuracy, metadata=metadata)
