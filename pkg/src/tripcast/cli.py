"""Command-line entry points: generate, build-graph, pretrain, train, eval,
online, whatif, serve."""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .bench import (BaselineConfig, GRUBaseline, MetricsReport, SuiteConfig, run_suite)
from .checkpoint import CheckpointError, load_model
from .generator import Scenario, generate
from .ioutil import ParseError, dump_json, load_json
from .model import ModelConfig, TripCastModel
from .network import NetworkError, RoadNetwork
from .presets import preset_scenario
from .service import WhatIfEvent, whatif_forecast
from .training import (OnlineConfig, PretrainConfig, TrafficDataset, TrainConfig,
                       TrainingError, config_hash, offline_train, online_update,
                       pretrain_route, write_loss_curve)
from .trips import read_trajectories
from .tripgraph import GraphError, TripGraph, graph_from_trajectories

KNOWN_ERRORS = (ParseError, NetworkError, GraphError, TrainingError, CheckpointError,
                ValueError, OSError)


def dataset_id(dataset: TrafficDataset) -> str:
    digest = hashlib.sha256()
    digest.update(dataset.volumes.tobytes())
    digest.update(dataset.speeds.tobytes())
    return digest.hexdigest()[:16]


def resolve_scenario(spec: str, seed: int | None) -> Scenario:
    path = Path(spec)
    if path.exists():
        scenario = Scenario.load(path)
    else:
        scenario = preset_scenario(spec, seed=seed or 0)
    if seed is not None:
        scenario = replace(scenario, seed=seed)
    return scenario


def model_config_from_args(args, graph: TripGraph | None) -> ModelConfig:
    config = ModelConfig()
    if getattr(args, "model_json", None):
        config = ModelConfig.from_dict({**config.to_dict(), **load_json(args.model_json)})
    overrides = {}
    for name in ("tau", "horizons", "gru_hidden", "temporal_hidden", "demand_scale",
                 "route_mlp_depth", "seed"):
        value = getattr(args, name, None)
        if value is not None:
            overrides[name] = value
    if overrides:
        config = ModelConfig.from_dict({**config.to_dict(), **overrides})
    return config


def add_model_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--model-json", help="JSON file overriding model config fields")
    parser.add_argument("--tau", type=int, help="history window length")
    parser.add_argument("--horizons", type=int, help="forecast horizons L")
    parser.add_argument("--gru-hidden", type=int, dest="gru_hidden")
    parser.add_argument("--temporal-hidden", type=int, dest="temporal_hidden")
    parser.add_argument("--route-mlp-depth", type=int, dest="route_mlp_depth")
    parser.add_argument("--demand-scale", type=float, dest="demand_scale")
    parser.add_argument("--seed", type=int, default=None)


def cmd_generate(args) -> int:
    scenario = resolve_scenario(args.scenario, args.seed)
    if args.deterministic:
        scenario = replace(scenario, deterministic=True)
    gt = generate(scenario)
    out = Path(args.out)
    gt.save(out)
    scenario.save(out / "scenario.json")
    print(f"wrote ground truth for {scenario.name!r} (seed {scenario.seed}) to {out}: "
          f"{len(gt.trajectories)} trajectories, {scenario.horizon} intervals")
    return 0


def cmd_build_graph(args) -> int:
    net = RoadNetwork.load(args.network)
    trajectories = read_trajectories(args.trajectories)
    graph, trips = graph_from_trajectories(
        trajectories, net, snap_radius=args.snap_radius, gap_threshold=args.gap_threshold,
        interval_seconds=args.interval_seconds, min_support=args.min_support)
    graph.save(args.out)
    print(f"trip graph: {len(graph.od_nodes)} OD pairs, {len(graph.path_nodes)} paths, "
          f"{len(graph.segment_nodes)} segments (from {len(trips)} trips)")
    return 0


def cmd_pretrain(args) -> int:
    dataset = TrafficDataset.from_dir(args.data)
    net = RoadNetwork.load(Path(args.data) / "network.json")
    graph = TripGraph.load(args.graph)
    config = model_config_from_args(args, graph)
    model = TripCastModel(config, graph, net)
    result = pretrain_route(model, dataset,
                            PretrainConfig(steps=args.steps, lr=args.lr,
                                           seed=config.seed))
    model.save(args.out, metadata={"seed": config.seed, "config_hash": config_hash(config),
                                   "dataset_id": dataset_id(dataset),
                                   "training_step": result.steps_run,
                                   "stage": "pretrain"})
    write_loss_curve(str(args.out) + ".curve.csv", result.curve)
    print(f"pretrained route module for {result.steps_run} steps "
          f"(final loss {result.best_val:.4f}) -> {args.out}")
    return 0


def cmd_train(args) -> int:
    dataset = TrafficDataset.from_dir(args.data)
    net = RoadNetwork.load(Path(args.data) / "network.json")
    if args.init:
        model = load_model(args.init)
        if args.variant == "nood":
            model.config.no_od = model.encoder.config.no_od = True
        elif args.variant == "notf":
            model.config.no_tf = model.encoder.config.no_tf = True
    elif args.variant == "gru":
        config = model_config_from_args(args, None)
        model = GRUBaseline(BaselineConfig(tau=config.tau, horizons=config.horizons,
                                           seed=config.seed), net)
    else:
        if not args.graph:
            raise TrainingError("--graph is required when training from scratch")
        graph = TripGraph.load(args.graph)
        config = model_config_from_args(args, graph)
        if args.variant == "nood":
            config = ModelConfig.from_dict({**config.to_dict(), "no_od": True})
        elif args.variant == "notf":
            config = ModelConfig.from_dict({**config.to_dict(), "no_tf": True})
        model = TripCastModel(config, graph, net)
    train_config = TrainConfig(steps=args.steps, batch_size=args.batch_size, lr=args.lr,
                               event_beta=args.event_beta, val_every=args.val_every,
                               patience=args.patience, seed=args.seed or 0)
    result = offline_train(model, dataset, train_config)
    model.save(args.out, metadata={"seed": train_config.seed,
                                   "config_hash": config_hash(model.config),
                                   "dataset_id": dataset_id(dataset),
                                   "training_step": result.steps_run,
                                   "best_step": result.best_step,
                                   "stage": "train"})
    write_loss_curve(str(args.out) + ".curve.csv", result.curve)
    print(f"trained {args.variant} for {result.steps_run} steps "
          f"(best val {result.best_val:.4f} at step {result.best_step}) -> {args.out}")
    return 0


def cmd_eval(args) -> int:
    dataset = TrafficDataset.from_dir(args.data)
    net = RoadNetwork.load(Path(args.data) / "network.json")
    graph = TripGraph.load(args.graph) if args.graph else None
    checkpoints = {}
    for pair in args.ckpt or []:
        name, _, path = pair.partition("=")
        if not path:
            raise TrainingError(f"--ckpt expects name=path, got {pair!r}")
        checkpoints[name] = path
    variants = tuple(args.variants.split(","))
    config = model_config_from_args(args, graph)
    suite = SuiteConfig(variants=variants, model=config,
                        train=TrainConfig(steps=args.steps, seed=config.seed),
                        pretrain=PretrainConfig(steps=args.pretrain_steps,
                                                seed=config.seed),
                        seed=config.seed)
    missing = [v for v in variants if v not in checkpoints and v != "ha"]
    if missing and graph is None and any(v.startswith("tripcast") for v in missing):
        raise TrainingError(f"--graph required to train variants {missing}")
    report = run_suite(dataset, graph, net, suite, checkpoints=checkpoints,
                       log=lambda msg: print(f"eval: {msg}", file=sys.stderr))
    out = Path(args.out)
    report.save(out)
    if args.plots:
        from .plots import plot_report
        plot_report(report, dataset, out)
    print(f"metrics for {len(variants)} variants -> {out}/metrics.csv")
    return 0


def cmd_online(args) -> int:
    dataset = TrafficDataset.from_dir(args.data)
    model = load_model(args.ckpt)
    lo = args.start if args.start is not None else 0
    hi = args.end if args.end is not None else dataset.num_intervals
    stream = [dataset.features(t) for t in range(lo, hi)]
    result = online_update(model, stream,
                           OnlineConfig(phi=args.phi, lr=args.lr,
                                        update=not args.frozen))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    lines = ["t,version,rmse_h1"]
    for rec in result.records:
        if rec.prediction is None:
            lines.append(f"{rec.t},{rec.version},")
        else:
            err = rec.prediction[0] - rec.target[0]
            lines.append(f"{rec.t},{rec.version},{float(np.sqrt(np.mean(err * err))):.9f}")
    (out / "online.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    model.save(out / "updated.ckpt", metadata={"stage": "online",
                                               "updates": result.updates})
    dump_json({"schema_version": "1", "updates": result.updates,
               "update_times": result.update_times,
               "rolling_rmse": result.rolling_rmse()}, out / "online.json")
    print(f"online loop over {len(stream)} intervals: {result.updates} updates, "
          f"rolling RMSE {result.rolling_rmse():.4f} -> {out}")
    return 0


def cmd_whatif(args) -> int:
    dataset = TrafficDataset.from_dir(args.data)
    model = load_model(args.ckpt)
    tau = model.config.tau
    at = args.at if args.at is not None else dataset.num_intervals - 1
    if at + 1 < tau:
        raise TrainingError(f"need at least {tau} intervals before --at {at}")
    window = [dataset.features(t) for t in range(at - tau + 1, at + 1)]
    events = []
    if args.events:
        body = load_json(args.events)
        entries = body["events"] if isinstance(body, dict) else body
        events = [WhatIfEvent.from_dict(e, model.num_nodes) for e in entries]
    baseline, scenario = whatif_forecast(model, window, events, args.horizons)
    dump_json({
        "schema_version": "1",
        "at_interval": at,
        "events": [{"segment": e.segment, "capacity_factor": e.capacity_factor}
                   for e in events],
        "baseline": baseline.tolist(),
        "whatif": scenario.tolist(),
    }, args.out)
    delta = float(np.abs(scenario - baseline).max())
    print(f"what-if with {len(events)} events at interval {at}: "
          f"max |delta| {delta:.4f} -> {args.out}")
    return 0


def cmd_serve(args) -> int:
    from .server import serve, session_from_checkpoint

    preload = None
    if args.data and args.preload > 0:
        dataset = TrafficDataset.from_dir(args.data)
        preload = [dataset.features(t) for t in range(min(args.preload,
                                                          dataset.num_intervals))]
    session = session_from_checkpoint(args.ckpt, phi=args.phi, online=not args.frozen,
                                      lr=args.lr, preload=preload)
    serve(session, port=args.port)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tripcast",
        description="Trip-graph traffic lab: synthetic generation, model training, "
                    "online updates and what-if forecasts.")
    sub = parser.add_subparsers(dest="command", required=True)
    data_default = os.environ.get("TRIPCAST_DATA")

    p = sub.add_parser("generate", help="roll a scenario into ground-truth files")
    p.add_argument("--scenario", required=True,
                   help="scenario JSON path or preset name (sy-mini, vs-mini)")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--deterministic", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("build-graph", help="trajectories -> tripartite trip graph")
    p.add_argument("--trajectories", required=True)
    p.add_argument("--network", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--min-support", type=int, default=2, dest="min_support")
    p.add_argument("--snap-radius", type=float, default=50.0, dest="snap_radius")
    p.add_argument("--gap-threshold", type=float, default=300.0, dest="gap_threshold")
    p.add_argument("--interval-seconds", type=float, default=120.0,
                   dest="interval_seconds")
    p.set_defaults(func=cmd_build_graph)

    p = sub.add_parser("pretrain", help="fit the route module on true path volumes")
    p.add_argument("--data", required=data_default is None, default=data_default)
    p.add_argument("--graph", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--steps", type=int, default=300)
    p.add_argument("--lr", type=float, default=3e-3)
    add_model_flags(p)
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("train", help="offline fine-tuning of a forecaster variant")
    p.add_argument("--data", required=data_default is None, default=data_default)
    p.add_argument("--graph")
    p.add_argument("--init", help="checkpoint to start from (e.g. pretrained)")
    p.add_argument("--variant", choices=("tripcast", "nood", "notf", "gru"),
                   default="tripcast")
    p.add_argument("--out", required=True)
    p.add_argument("--steps", type=int, default=400)
    p.add_argument("--batch-size", type=int, default=6, dest="batch_size")
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--event-beta", type=float, default=1.0, dest="event_beta")
    p.add_argument("--val-every", type=int, default=20, dest="val_every")
    p.add_argument("--patience", type=int, default=20)
    add_model_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="run the baseline/ablation metric suite")
    p.add_argument("--data", required=data_default is None, default=data_default)
    p.add_argument("--graph")
    p.add_argument("--out", required=True)
    p.add_argument("--variants", default="tripcast,tripcast-nood,tripcast-notf,ha,gru")
    p.add_argument("--ckpt", action="append",
                   help="variant=checkpoint path (repeatable)")
    p.add_argument("--steps", type=int, default=400,
                   help="training budget for variants without checkpoints")
    p.add_argument("--pretrain-steps", type=int, default=200, dest="pretrain_steps")
    p.add_argument("--plots", action="store_true")
    add_model_flags(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("online", help="streaming replay with periodic updates")
    p.add_argument("--data", required=data_default is None, default=data_default)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--phi", type=int, default=12)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--start", type=int, default=None)
    p.add_argument("--end", type=int, default=None)
    p.add_argument("--frozen", action="store_true", help="never update parameters")
    p.set_defaults(func=cmd_online)

    p = sub.add_parser("whatif", help="forecast under hypothetical capacity events")
    p.add_argument("--data", required=data_default is None, default=data_default)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--events", help="JSON file with an events list")
    p.add_argument("--at", type=int, default=None,
                   help="interval index the window ends at (default: last)")
    p.add_argument("--horizons", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_whatif)

    p = sub.add_parser("serve", help="HTTP gateway for a live session")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", default=data_default)
    p.add_argument("--preload", type=int, default=0,
                   help="feed the first N intervals of --data before serving")
    p.add_argument("--port", type=int, default=None)
    p.add_argument("--phi", type=int, default=12)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--frozen", action="store_true")
    p.set_defaults(func=cmd_serve)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except KNOWN_ERRORS as exc:
        print(f"tripcast {args.command}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
