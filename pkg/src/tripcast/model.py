"""Full forecaster: causal encoder per interval + temporal rollout head."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .autodiff import Tensor
from .checkpoint import write_checkpoint
from .encoder import (CausalEncoder, CompiledGraph, EncoderConfig,
                      IntervalFeatures)
from .network import RoadNetwork
from .temporal import TemporalConfig, TemporalForecaster
from .tripgraph import TripGraph


@dataclass
class ModelConfig:
    tau: int = 4  # history window length
    horizons: int = 6  # L
    gru_hidden: int = 16
    gru_layers: int = 2
    att_heads: int = 2
    att_dim: int = 32
    att_out: int = 32
    route_mlp_depth: int = 7
    route_mlp_hidden: int = 32
    temporal_hidden: int = 64
    temporal_layers: int = 2
    head_depth: int = 3
    head_hidden: int = 64
    leaky_slope: float = 0.2
    p_max: int | None = None  # position budget; derived from the graph when None
    assign_uses_attended: bool = False
    decoder_refeed: bool = True
    no_od: bool = False
    no_tf: bool = False
    demand_scale: float = 10.0
    seed: int = 0

    def encoder_config(self) -> EncoderConfig:
        return EncoderConfig(
            gru_hidden=self.gru_hidden, gru_layers=self.gru_layers,
            att_heads=self.att_heads, att_dim=self.att_dim, att_out=self.att_out,
            route_mlp_depth=self.route_mlp_depth, route_mlp_hidden=self.route_mlp_hidden,
            leaky_slope=self.leaky_slope, assign_uses_attended=self.assign_uses_attended,
            no_od=self.no_od, no_tf=self.no_tf, demand_scale=self.demand_scale)

    def temporal_config(self) -> TemporalConfig:
        return TemporalConfig(hidden=self.temporal_hidden, layers=self.temporal_layers,
                              head_depth=self.head_depth, head_hidden=self.head_hidden,
                              decoder_refeed=self.decoder_refeed)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "ModelConfig":
        return cls(**data)


@dataclass
class NormStats:
    """Per-node z-score statistics for the dynamic input features."""

    vol_mean: np.ndarray
    vol_std: np.ndarray
    speed_mean: np.ndarray
    speed_std: np.ndarray

    @classmethod
    def identity(cls, num_nodes: int) -> "NormStats":
        return cls(np.zeros(num_nodes), np.ones(num_nodes),
                   np.zeros(num_nodes), np.ones(num_nodes))

    @classmethod
    def fit(cls, volumes: np.ndarray, speeds: np.ndarray) -> "NormStats":
        return cls(volumes.mean(axis=0), np.maximum(volumes.std(axis=0), 1e-6),
                   speeds.mean(axis=0), np.maximum(speeds.std(axis=0), 1e-6))

    def volumes(self, v: np.ndarray) -> np.ndarray:
        return (v - self.vol_mean) / self.vol_std

    def speeds(self, s: np.ndarray) -> np.ndarray:
        return (s - self.speed_mean) / self.speed_std

    def to_dict(self) -> dict:
        return {"vol_mean": self.vol_mean.tolist(), "vol_std": self.vol_std.tolist(),
                "speed_mean": self.speed_mean.tolist(), "speed_std": self.speed_std.tolist()}

    @classmethod
    def from_dict(cls, data: dict) -> "NormStats":
        return cls(np.array(data["vol_mean"]), np.array(data["vol_std"]),
                   np.array(data["speed_mean"]), np.array(data["speed_std"]))


class TripCastModel:
    """Trip-graph forecaster over a fixed road network."""

    kind = "tripcast"

    def __init__(self, config: ModelConfig, graph: TripGraph, net: RoadNetwork):
        self.config = config
        self.graph = graph
        self.net = net
        rng = np.random.default_rng(config.seed)
        compiled = CompiledGraph(graph, net.num_nodes, config.p_max)
        self.encoder = CausalEncoder(rng, compiled, net.static_features(),
                                     config.encoder_config())
        self.embedding_dim = net.num_nodes * self.encoder.n
        self.temporal = TemporalForecaster(rng, self.embedding_dim, net.num_nodes,
                                           config.temporal_config())
        self.norm = NormStats.identity(net.num_nodes)

    @property
    def num_nodes(self) -> int:
        return self.net.num_nodes

    def interval_embedding(self, features: IntervalFeatures) -> tuple[Tensor, dict[int, Tensor]]:
        return self.encoder.forward(features, self.norm.volumes(features.volumes),
                                    self.norm.speeds(features.speeds))

    def _encoder_batch(self, window: list[IntervalFeatures]):
        return [(f, self.norm.volumes(f.volumes), self.norm.speeds(f.speeds))
                for f in window]

    def forward_window(self, window: list[IntervalFeatures]) -> list[Tensor]:
        """Forecast L horizons from exactly tau intervals of observations."""
        encoded = self.encoder.forward_intervals(self._encoder_batch(window))
        embeddings = [seg for seg, _ in encoded]
        return self.temporal.forward(embeddings, self.config.horizons,
                                     expected_steps=self.config.tau)

    def forward_windows(self, windows: list[list[IntervalFeatures]]) -> list[list[Tensor]]:
        """Batched forecasts for several windows.

        Feature objects appearing in more than one window (overlapping
        windows share interval features by identity) are encoded once.
        """
        unique: list[IntervalFeatures] = []
        index: dict[int, int] = {}
        for window in windows:
            for feats in window:
                if id(feats) not in index:
                    index[id(feats)] = len(unique)
                    unique.append(feats)
        encoded = self.encoder.forward_intervals(self._encoder_batch(unique))
        embeddings = [seg for seg, _ in encoded]
        emb_windows = [[embeddings[index[id(f)]] for f in window] for window in windows]
        return self.temporal.forward_batch(emb_windows, self.config.horizons,
                                           expected_steps=self.config.tau)

    def forecast(self, window: list[IntervalFeatures]) -> np.ndarray:
        return np.stack([t.values for t in self.forward_window(window)])

    def route_shares(self, features: IntervalFeatures) -> dict[int, Tensor]:
        return self.route_shares_many([features])[0]

    def route_shares_many(self, window: list[IntervalFeatures]) -> list[dict[int, Tensor]]:
        """Per-OD route preferences for many intervals (one batched pass)."""
        encoded = self.encoder.forward_intervals(self._encoder_batch(window),
                                                 need_segments=False)
        return [prefs for _, prefs in encoded]

    def init_output_bias(self, mean_volumes: np.ndarray) -> None:
        """Anchor the output head at the historical mean volumes.

        Saves the training budget otherwise spent climbing from zero output
        to raw-volume scale.
        """
        self.temporal.head.layers[-1].b.values = np.asarray(mean_volumes, dtype=float).copy()

    def named_params(self) -> dict[str, Tensor]:
        out = dict(self.encoder.named_params())
        out.update(self.temporal.named_params())
        return out

    # -- persistence -----------------------------------------------------------

    def save(self, path, metadata: dict | None = None) -> None:
        meta = {
            "kind": self.kind,
            "config": self.config.to_dict(),
            "graph": self.graph.to_dict(),
            "network": self.net.to_dict(),
            "norm": self.norm.to_dict(),
            "metadata": metadata or {},
        }
        write_checkpoint(path, {k: v.values for k, v in self.named_params().items()}, meta)

    @classmethod
    def from_checkpoint(cls, tensors: dict[str, np.ndarray], meta: dict) -> "TripCastModel":
        config = ModelConfig.from_dict(meta["config"])
        graph = TripGraph.from_dict(meta["graph"])
        net = RoadNetwork.from_dict(meta["network"])
        model = cls(config, graph, net)
        model.norm = NormStats.from_dict(meta["norm"])
        model.load_values(tensors)
        model.metadata = meta.get("metadata", {})
        return model

    def load_values(self, tensors: dict[str, np.ndarray]) -> None:
        params = self.named_params()
        missing = set(params) - set(tensors)
        if missing:
            raise ValueError(f"checkpoint is missing tensors: {sorted(missing)[:4]} ...")
        for name, tensor in params.items():
            if tensors[name].shape != tensor.values.shape:
                raise ValueError(f"tensor {name}: shape {tensors[name].shape} "
                                 f"!= expected {tensor.values.shape}")
            tensor.values = tensors[name].copy()

    def snapshot(self) -> dict[str, np.ndarray]:
        return {k: v.values.copy() for k, v in self.named_params().items()}
