"""Desk-scale mesoscopic traffic generator.

Vehicles depart per OD per interval (Poisson around the scheduled rate, or
exactly the rounded rate in deterministic mode), pick a candidate path by
logit choice over the previous interval's realized path travel times, and
advance segment by segment through a discrete-event queue. A segment's
traversal time is its free-flow time inflated by
``1 + alpha * max(0, occupancy / capacity - 1)`` at entry; capacity events
scale a segment's capacity during an interval range. The rollout records
node-entry volumes, mean speeds, OD departures, per-path choice shares and
volumes, per-vehicle trajectories and the event-affected mask.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .ioutil import ParseError, dump_json, expect_field, load_json
from .network import RoadNetwork
from .panel import DemandVolumePanel
from .trips import Trajectory, TrajectoryPoint, write_trajectories, read_trajectories

SCHEMA_VERSION = "1"
DEFAULT_CAPACITY_FACTOR = 0.1
DEFAULT_CONGESTION_ALPHA = 2.0
DEFAULT_MAX_CONGESTION_FACTOR = 15.0


class ScenarioError(ValueError):
    pass


@dataclass(frozen=True)
class EventSpec:
    """Capacity restriction on one segment during [start, end) intervals."""

    segment: int
    start: int
    end: int
    capacity_factor: float = DEFAULT_CAPACITY_FACTOR

    def validate(self, horizon: int, num_segments: int) -> None:
        if not 0 <= self.segment < num_segments:
            raise ScenarioError(f"event references unknown segment {self.segment}")
        if not (0 <= self.start < self.end <= horizon):
            raise ScenarioError(
                f"event window [{self.start}, {self.end}) outside horizon {horizon}")
        if not 0 < self.capacity_factor <= 1.0:
            raise ScenarioError(f"capacity_factor {self.capacity_factor} not in (0, 1]")


@dataclass
class Scenario:
    net: RoadNetwork
    od_rates: dict  # (origin, destination) -> per-interval demand rates
    candidate_paths: dict  # (origin, destination) -> list of node sequences
    logit_theta: float
    horizon: int
    seed: int = 0
    interval_seconds: float = 120.0
    events: list = field(default_factory=list)
    deterministic: bool = False
    congestion_alpha: float = DEFAULT_CONGESTION_ALPHA
    # delay factors are capped so event backlogs stay desk-scale (a vehicle
    # never takes more than max_congestion_factor times free flow per segment)
    max_congestion_factor: float = DEFAULT_MAX_CONGESTION_FACTOR
    # exponential smoothing of the per-segment travel-time signal drivers see;
    # unobserved segments decay toward free flow instead of snapping back,
    # which prevents all-or-nothing route flapping during events
    travel_time_smoothing: float = 0.5
    name: str = "custom"

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        edges = self.net.edge_set
        if set(self.od_rates) != set(self.candidate_paths):
            raise ScenarioError("od_rates and candidate_paths must cover the same OD pairs")
        for od, paths in self.candidate_paths.items():
            if not paths:
                raise ScenarioError(f"OD {od} has no candidate paths")
            for seq in paths:
                if len(seq) < 2:
                    raise ScenarioError(f"OD {od}: path {seq} shorter than 2 nodes")
                if (seq[0], seq[-1]) != od:
                    raise ScenarioError(f"OD {od}: path {seq} endpoints do not match")
                for a, b in zip(seq, seq[1:]):
                    if (a, b) not in edges:
                        raise ScenarioError(f"OD {od}: path uses missing edge ({a}, {b})")
        for od, rates in self.od_rates.items():
            if len(rates) != self.horizon:
                raise ScenarioError(f"OD {od}: rate schedule length {len(rates)} != horizon")
            if any(r < 0 for r in rates):
                raise ScenarioError(f"OD {od}: negative demand rate")
        if not 0.0 < self.travel_time_smoothing <= 1.0:
            raise ScenarioError("travel_time_smoothing must be in (0, 1]")
        if self.max_congestion_factor < 1.0:
            raise ScenarioError("max_congestion_factor must be >= 1")
        for event in self.events:
            event.validate(self.horizon, self.net.num_nodes)

    def od_keys(self) -> list:
        return sorted(self.od_rates)

    def path_registry(self) -> list:
        """Global path order: ODs sorted, then scenario path order within an OD."""
        out = []
        for od in self.od_keys():
            for seq in self.candidate_paths[od]:
                out.append((od, tuple(seq)))
        return out

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "name": self.name,
            "network": self.net.to_dict(),
            "od_pairs": [
                {
                    "origin": od[0],
                    "destination": od[1],
                    "rates": [float(r) for r in self.od_rates[od]],
                    "paths": [list(seq) for seq in self.candidate_paths[od]],
                }
                for od in self.od_keys()
            ],
            "logit_theta": self.logit_theta,
            "horizon": self.horizon,
            "seed": self.seed,
            "interval_seconds": self.interval_seconds,
            "deterministic": self.deterministic,
            "congestion_alpha": self.congestion_alpha,
            "max_congestion_factor": self.max_congestion_factor,
            "travel_time_smoothing": self.travel_time_smoothing,
            "events": [
                {"segment": e.segment, "start": e.start, "end": e.end,
                 "capacity_factor": e.capacity_factor}
                for e in self.events
            ],
        }

    @classmethod
    def from_dict(cls, data: dict, context: str = "scenario") -> "Scenario":
        net = RoadNetwork.from_dict(expect_field(data, "network", context), context)
        od_rates, candidate_paths = {}, {}
        for entry in expect_field(data, "od_pairs", context):
            od = (int(entry["origin"]), int(entry["destination"]))
            od_rates[od] = [float(r) for r in entry["rates"]]
            candidate_paths[od] = [[int(s) for s in seq] for seq in entry["paths"]]
        events = [EventSpec(segment=int(e["segment"]), start=int(e["start"]),
                            end=int(e["end"]),
                            capacity_factor=float(e.get("capacity_factor",
                                                        DEFAULT_CAPACITY_FACTOR)))
                  for e in data.get("events", [])]
        try:
            return cls(net=net, od_rates=od_rates, candidate_paths=candidate_paths,
                       logit_theta=float(expect_field(data, "logit_theta", context)),
                       horizon=int(expect_field(data, "horizon", context)),
                       seed=int(data.get("seed", 0)),
                       interval_seconds=float(data.get("interval_seconds", 120.0)),
                       events=events,
                       deterministic=bool(data.get("deterministic", False)),
                       congestion_alpha=float(data.get("congestion_alpha",
                                                       DEFAULT_CONGESTION_ALPHA)),
                       max_congestion_factor=float(data.get("max_congestion_factor",
                                                            DEFAULT_MAX_CONGESTION_FACTOR)),
                       travel_time_smoothing=float(data.get("travel_time_smoothing", 0.5)),
                       name=str(data.get("name", "custom")))
        except ScenarioError as exc:
            raise ParseError(f"{context}: {exc}") from exc

    def save(self, path) -> None:
        dump_json(self.to_dict(), path)

    @classmethod
    def load(cls, path) -> "Scenario":
        return cls.from_dict(load_json(path), context=str(path))


@dataclass
class GroundTruth:
    """Full rollout record: panels, trajectories and route-level truth."""

    net: RoadNetwork
    interval_seconds: float
    panel: DemandVolumePanel
    trajectories: list
    paths: list  # [(od_key, segment tuple)] in registry order
    route_shares: np.ndarray  # (T, n_paths); one OD's block sums to 1
    path_volumes: np.ndarray  # (T, n_paths) departure counts
    affected_mask: np.ndarray  # (T, |V|) bool
    seed: int

    def od_path_indices(self) -> dict:
        out: dict = {}
        for idx, (od, _) in enumerate(self.paths):
            out.setdefault(od, []).append(idx)
        return out

    def save(self, out_dir) -> None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        self.net.save(out_dir / "network.json")
        write_trajectories(self.trajectories, out_dir / "trajectories.csv")
        T, V = self.panel.volume_series.shape
        _write_grid(out_dir / "volumes.csv", self.panel.volume_series, "%d")
        _write_grid(out_dir / "speeds.csv", self.panel.speed_series, "%.6f")
        _write_grid(out_dir / "route_shares.csv", self.route_shares, "%.9f")
        _write_grid(out_dir / "path_volumes.csv", self.path_volumes, "%d")
        _write_grid(out_dir / "affected.csv", self.affected_mask.astype(int), "%d")
        od_lines = ["interval,origin,destination,count"]
        for t, row in enumerate(self.panel.od_series):
            for (o, d), count in sorted(row.items()):
                od_lines.append(f"{t},{o},{d},{count}")
        (out_dir / "od_demands.csv").write_text("\n".join(od_lines) + "\n", encoding="utf-8")
        dump_json({
            "schema_version": SCHEMA_VERSION,
            "seed": self.seed,
            "interval_seconds": self.interval_seconds,
            "horizon": T,
            "num_segments": V,
            "paths": [{"path_id": i, "origin": od[0], "destination": od[1],
                       "segments": list(seq)}
                      for i, (od, seq) in enumerate(self.paths)],
        }, out_dir / "meta.json")

    @classmethod
    def load(cls, out_dir) -> "GroundTruth":
        out_dir = Path(out_dir)
        meta = load_json(out_dir / "meta.json")
        net = RoadNetwork.load(out_dir / "network.json")
        volumes = _read_grid(out_dir / "volumes.csv")
        speeds = _read_grid(out_dir / "speeds.csv")
        T = volumes.shape[0]
        od_series: list = [dict() for _ in range(T)]
        lines = (out_dir / "od_demands.csv").read_text(encoding="utf-8").splitlines()
        for line in lines[1:]:
            t, o, d, count = line.split(",")
            od_series[int(t)][(int(o), int(d))] = int(count)
        panel = DemandVolumePanel(
            interval_seconds=float(meta["interval_seconds"]),
            od_series=od_series,
            volume_series=volumes,
            # stored speeds are already means; keep them with unit counts
            speed_sum=np.where(speeds > 0, speeds, 0.0),
            speed_count=(speeds > 0).astype(float),
        )
        paths = [((int(p["origin"]), int(p["destination"])), tuple(p["segments"]))
                 for p in meta["paths"]]
        return cls(
            net=net,
            interval_seconds=float(meta["interval_seconds"]),
            panel=panel,
            trajectories=read_trajectories(out_dir / "trajectories.csv"),
            paths=paths,
            route_shares=_read_grid(out_dir / "route_shares.csv"),
            path_volumes=_read_grid(out_dir / "path_volumes.csv"),
            affected_mask=_read_grid(out_dir / "affected.csv").astype(bool),
            seed=int(meta["seed"]),
        )


def _write_grid(path, array: np.ndarray, fmt: str) -> None:
    rows = [",".join(fmt % v for v in row) for row in np.atleast_2d(array)]
    Path(path).write_text("\n".join(rows) + "\n", encoding="utf-8")


def _read_grid(path) -> np.ndarray:
    text = Path(path).read_text(encoding="utf-8").strip()
    if not text:
        return np.zeros((0, 0))
    return np.array([[float(v) for v in line.split(",")] for line in text.splitlines()])


def route_choice(costs, theta: float) -> np.ndarray:
    """Logit shares over path costs: share_i proportional to exp(-theta * cost_i)."""
    costs = np.asarray(costs, dtype=np.float64)
    if costs.size == 0:
        raise ScenarioError("route choice over an empty path list")
    if not np.all(np.isfinite(costs)) or np.any(costs < 0):
        raise ScenarioError("path costs must be finite and nonnegative")
    scaled = -theta * costs
    scaled -= scaled.max()
    e = np.exp(scaled)
    return e / e.sum()


def _largest_remainder(shares: np.ndarray, n: int) -> np.ndarray:
    """Integer allocation of n vehicles matching shares, exact total."""
    quotas = shares * n
    counts = np.floor(quotas).astype(int)
    short = n - counts.sum()
    if short > 0:
        order = np.argsort(-(quotas - counts), kind="stable")
        for i in order[:short]:
            counts[i] += 1
    return counts


class Simulator:
    """Interval-stepped rollout over one scenario."""

    def __init__(self, scenario: Scenario):
        self.sc = scenario
        net = scenario.net
        self.dt = scenario.interval_seconds
        self.rng = np.random.default_rng(scenario.seed)
        self.free_time = np.array([n.length / n.free_speed for n in net.nodes])
        self.lengths = np.array([n.length for n in net.nodes])
        self.base_capacity = np.array([n.capacity for n in net.nodes])
        self.registry = scenario.path_registry()
        self.od_paths: dict = {}
        for idx, (od, _) in enumerate(self.registry):
            self.od_paths.setdefault(od, []).append(idx)
        T, V, P = scenario.horizon, net.num_nodes, len(self.registry)
        self.panel = DemandVolumePanel.zeros(T, V, self.dt)
        self.route_shares = np.zeros((T, P))
        self.path_volumes = np.zeros((T, P))
        self.affected = np.zeros((T, V), dtype=bool)
        for e in scenario.events:
            self.affected[e.start:e.end, e.segment] = True
        self.occupancy = np.zeros(V, dtype=int)
        self.tt_sum = np.zeros(V)
        self.tt_count = np.zeros(V, dtype=int)
        self.prev_tt = self.free_time.copy()
        self.heap: list = []
        self.counter = 0
        self.points: dict = {}
        self.vehicle_count = 0
        self.t = 0

    def capacity_at(self, interval: int) -> np.ndarray:
        cap = self.base_capacity.copy()
        for e in self.sc.events:
            if e.start <= interval < e.end:
                cap[e.segment] *= e.capacity_factor
        return cap

    def _push(self, time: float, kind: str, payload) -> None:
        heapq.heappush(self.heap, (time, self.counter, kind, payload))
        self.counter += 1

    def _enter(self, time: float, vid: int, seq: tuple, leg: int, capacity: np.ndarray) -> None:
        seg = seq[leg]
        interval = int(time // self.dt)
        self.occupancy[seg] += 1
        over = self.occupancy[seg] / capacity[seg] - 1.0
        factor = min(1.0 + self.sc.congestion_alpha * max(0.0, over),
                     self.sc.max_congestion_factor)
        traversal = self.free_time[seg] * factor
        if interval < self.sc.horizon:
            self.panel.volume_series[interval, seg] += 1
            self.panel.speed_sum[interval, seg] += self.lengths[seg] / traversal
            self.panel.speed_count[interval, seg] += 1
            self.tt_sum[seg] += traversal
            self.tt_count[seg] += 1
        node = self.sc.net.node(seg)
        self.points[vid].append(TrajectoryPoint(timestamp=time, x=node.centroid[0],
                                                y=node.centroid[1]))
        self._push(time + traversal, "exit", (vid, seq, leg))

    def _exit(self, time: float, vid: int, seq: tuple, leg: int, capacity: np.ndarray) -> None:
        self.occupancy[seq[leg]] -= 1
        if leg + 1 < len(seq):
            self._enter(time, vid, seq, leg + 1, capacity)

    def path_costs(self, indices: list) -> np.ndarray:
        return np.array([sum(self.prev_tt[s] for s in self.registry[i][1]) for i in indices])

    def step(self) -> int:
        """Advance one interval; returns the interval index just simulated."""
        t = self.t
        if t >= self.sc.horizon:
            raise ScenarioError("stepping past the scenario horizon")
        capacity = self.capacity_at(t)
        t0, t1 = t * self.dt, (t + 1) * self.dt

        for od in self.sc.od_keys():
            indices = self.od_paths[od]
            shares = route_choice(self.path_costs(indices), self.sc.logit_theta)
            self.route_shares[t, indices] = shares
            rate = self.sc.od_rates[od][t]
            if self.sc.deterministic:
                n = int(math.floor(rate + 0.5))
                counts = _largest_remainder(shares, n)
                times = [t0 + (i + 0.5) * self.dt / n for i in range(n)] if n else []
                choices = np.repeat(np.arange(len(indices)), counts)
            else:
                n = int(self.rng.poisson(rate))
                times = np.sort(self.rng.uniform(t0, t1, size=n)).tolist()
                choices = self.rng.choice(len(indices), size=n, p=shares)
                counts = np.bincount(choices, minlength=len(indices))
            self.path_volumes[t, indices] += counts
            od_row = self.panel.od_series[t]
            if n:
                od_row[od] = od_row.get(od, 0) + int(n)
            for depart_time, choice in zip(times, choices):
                vid = self.vehicle_count
                self.vehicle_count += 1
                self.points[vid] = []
                seq = self.registry[indices[int(choice)]][1]
                self._push(depart_time, "enter", (vid, seq, 0))

        while self.heap and self.heap[0][0] < t1:
            time, _, kind, payload = heapq.heappop(self.heap)
            vid, seq, leg = payload
            if kind == "enter":
                self._enter(time, vid, seq, leg, capacity)
            else:
                self._exit(time, vid, seq, leg, capacity)

        w = self.sc.travel_time_smoothing
        observed = np.where(self.tt_count > 0,
                            self.tt_sum / np.maximum(self.tt_count, 1), self.free_time)
        self.prev_tt = (1.0 - w) * self.prev_tt + w * observed
        self.tt_sum[:] = 0.0
        self.tt_count[:] = 0
        self.t += 1
        return t

    def drain(self) -> None:
        """Finish vehicles still travelling after the last interval."""
        capacity = self.capacity_at(self.sc.horizon - 1)
        while self.heap:
            time, _, kind, payload = heapq.heappop(self.heap)
            vid, seq, leg = payload
            if kind == "enter":
                self._enter(time, vid, seq, leg, capacity)
            else:
                self._exit(time, vid, seq, leg, capacity)

    def result(self) -> GroundTruth:
        trajectories = []
        for vid in range(self.vehicle_count):
            pts = self.points[vid]
            if len(pts) >= 2:
                trajectories.append(Trajectory(vehicle_id=f"v{vid:06d}", points=pts))
        return GroundTruth(
            net=self.sc.net,
            interval_seconds=self.dt,
            panel=self.panel,
            trajectories=trajectories,
            paths=self.registry,
            route_shares=self.route_shares,
            path_volumes=self.path_volumes,
            affected_mask=self.affected,
            seed=self.sc.seed,
        )


def generate(scenario: Scenario) -> GroundTruth:
    """Roll the full horizon and return the recorded ground truth."""
    sim = Simulator(scenario)
    for _ in range(scenario.horizon):
        sim.step()
    sim.drain()
    return sim.result()
