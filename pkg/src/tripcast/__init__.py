"""tripcast: desk-scale traffic lab with causality-aware volume forecasting.

Pipeline: synthesize traffic (or ingest trajectories), build the tripartite
trip graph, pretrain the route module, fine-tune the forecaster, evaluate
against baselines, stream online updates, and answer what-if restriction
queries over HTTP.
"""

from .network import RoadNetwork, RoadNode
from .panel import DemandVolumePanel
from .trips import Trajectory, TrajectoryPoint, Trip, map_match, split_trips, aggregate_demands
from .tripgraph import TripGraph, build_trip_graph, graph_from_trajectories
from .generator import EventSpec, GroundTruth, Scenario, generate, route_choice
from .presets import preset_scenario
from .model import ModelConfig, TripCastModel
from .training import (OnlineConfig, PretrainConfig, TrafficDataset, TrainConfig,
                       mse_loss, offline_train, online_update, pretrain_route,
                       weighted_event_loss)
from .bench import (BaselineConfig, GRUBaseline, MetricsReport, SuiteConfig,
                    compute_metrics, ha_forecast, route_share_accuracy, run_suite)
from .checkpoint import load_model

__version__ = "0.1.0"
