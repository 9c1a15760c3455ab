"""Trajectory ingestion: map matching, trip splitting, demand aggregation.

Trajectories are planar GPS-style point sequences. Map matching snaps each
point to the nearest node centroid within a snap radius; a trip is cut
wherever the gap between consecutive records exceeds a threshold.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .network import RoadNetwork
from .panel import DemandVolumePanel
from .ioutil import ParseError

DEFAULT_SNAP_RADIUS = 50.0  # meters
DEFAULT_GAP_THRESHOLD = 300.0  # seconds


class TrajectoryError(ValueError):
    pass


class EmptyMatchError(ValueError):
    """Every point of a trajectory fell outside the snap radius."""


@dataclass(frozen=True)
class TrajectoryPoint:
    timestamp: float  # seconds since epoch
    x: float
    y: float


@dataclass
class Trajectory:
    vehicle_id: str
    points: list[TrajectoryPoint]

    def __post_init__(self):
        if len(self.points) < 2:
            raise TrajectoryError(f"trajectory {self.vehicle_id}: needs at least 2 points")
        times = [p.timestamp for p in self.points]
        if any(b <= a for a, b in zip(times, times[1:])):
            raise TrajectoryError(f"trajectory {self.vehicle_id}: timestamps must strictly increase")


@dataclass
class Trip:
    """One vehicle journey as an ordered node sequence with entry times."""

    node_seq: list[int]
    entry_times: list[float]
    od: tuple[int, int]
    depart_interval: int

    def validate(self, net: RoadNetwork | None = None) -> None:
        if len(self.node_seq) < 2:
            raise TrajectoryError("trip must traverse at least 2 nodes")
        if any(b < a for a, b in zip(self.entry_times, self.entry_times[1:])):
            raise TrajectoryError("trip entry times must be nondecreasing")
        if net is not None:
            edges = net.edge_set
            for a, b in zip(self.node_seq, self.node_seq[1:]):
                if (a, b) not in edges:
                    raise TrajectoryError(f"trip hops over missing edge ({a}, {b})")


def map_match(traj: Trajectory, net: RoadNetwork,
              snap_radius: float = DEFAULT_SNAP_RADIUS) -> tuple[list[int], list[float]]:
    """Snap each point to its nearest centroid; collapse consecutive repeats.

    Points farther than ``snap_radius`` from every centroid are dropped; if
    everything drops, raises :class:`EmptyMatchError`. Entry time of a node
    is the timestamp of the first point that hit it.
    """
    if net.num_nodes == 0:
        raise EmptyMatchError("network has no nodes")
    centroids = net.centroids()
    nodes: list[int] = []
    times: list[float] = []
    for p in traj.points:
        d2 = (centroids[:, 0] - p.x) ** 2 + (centroids[:, 1] - p.y) ** 2
        best = int(np.argmin(d2))
        if d2[best] > snap_radius * snap_radius:
            continue
        if nodes and nodes[-1] == best:
            continue
        nodes.append(best)
        times.append(p.timestamp)
    if not nodes:
        raise EmptyMatchError(f"trajectory {traj.vehicle_id}: no point within {snap_radius} m of a centroid")
    return nodes, times


def split_trips(nodes: Sequence[int], times: Sequence[float],
                gap_threshold: float = DEFAULT_GAP_THRESHOLD,
                interval_seconds: float = 120.0,
                regions: Mapping[int, int] | None = None) -> list[Trip]:
    """Cut a matched sequence into trips at gaps above the threshold.

    Pieces with fewer than 2 nodes are discarded. With a ``regions`` map,
    trip OD endpoints are reported at region granularity while the node
    sequence stays segment-level.
    """
    if len(nodes) != len(times):
        raise TrajectoryError("nodes and times must align")
    if any(b < a for a, b in zip(times, times[1:])):
        raise TrajectoryError("entry times must be nondecreasing")
    pieces: list[tuple[list[int], list[float]]] = []
    cur_nodes: list[int] = []
    cur_times: list[float] = []
    for node, t in zip(nodes, times):
        if cur_times and t - cur_times[-1] > gap_threshold:
            pieces.append((cur_nodes, cur_times))
            cur_nodes, cur_times = [], []
        cur_nodes.append(node)
        cur_times.append(t)
    if cur_nodes:
        pieces.append((cur_nodes, cur_times))

    trips = []
    for seq, ts in pieces:
        if len(seq) < 2:
            continue
        origin, dest = seq[0], seq[-1]
        if regions is not None:
            origin = regions.get(origin, origin)
            dest = regions.get(dest, dest)
        trips.append(Trip(
            node_seq=list(seq),
            entry_times=list(ts),
            od=(origin, dest),
            depart_interval=int(ts[0] // interval_seconds),
        ))
    return trips


def aggregate_demands(trips: Sequence[Trip], interval_seconds: float, net: RoadNetwork,
                      num_intervals: int | None = None) -> DemandVolumePanel:
    """Tally per-interval OD departures, node entry counts and mean speeds.

    A node's speed sample for one traversal is length / dwell, where dwell
    is the time until the next node entry; the last node of a trip yields
    no sample.
    """
    if num_intervals is None:
        last = 0.0
        for trip in trips:
            last = max(last, trip.entry_times[-1])
        num_intervals = int(last // interval_seconds) + 1 if trips else 0
    panel = DemandVolumePanel.zeros(num_intervals, net.num_nodes, interval_seconds)
    for trip in trips:
        od_row = panel.od_series[trip.depart_interval]
        od_row[trip.od] = od_row.get(trip.od, 0) + 1
        for i, (node, t) in enumerate(zip(trip.node_seq, trip.entry_times)):
            interval = int(t // interval_seconds)
            if interval >= num_intervals:
                continue
            panel.volume_series[interval, node] += 1
            if i + 1 < len(trip.node_seq):
                dwell = trip.entry_times[i + 1] - t
                if dwell > 0:
                    panel.speed_sum[interval, node] += net.node(node).length / dwell
                    panel.speed_count[interval, node] += 1
    return panel


# ---------------------------------------------------------------------------
# trajectory file format: one record per line, `vehicle_id,timestamp,x,y`


def write_trajectories(trajectories: Sequence[Trajectory], path) -> None:
    lines = []
    for traj in trajectories:
        for p in traj.points:
            lines.append(f"{traj.vehicle_id},{p.timestamp:.3f},{p.x:.3f},{p.y:.3f}")
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")


def read_trajectories(path) -> list[Trajectory]:
    by_vehicle: dict[str, list[TrajectoryPoint]] = {}
    order: list[str] = []
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = line.strip()
        if not line:
            continue
        fields = line.split(",")
        if len(fields) != 4:
            raise ParseError(f"{path}: line {lineno}: expected vehicle_id,timestamp,x,y")
        vid, ts, x, y = fields
        try:
            point = TrajectoryPoint(timestamp=float(ts), x=float(x), y=float(y))
        except ValueError as exc:
            raise ParseError(f"{path}: line {lineno}: {exc}") from exc
        if vid not in by_vehicle:
            by_vehicle[vid] = []
            order.append(vid)
        by_vehicle[vid].append(point)
    out = []
    for vid in order:
        points = sorted(by_vehicle[vid], key=lambda p: p.timestamp)
        if len(points) >= 2:
            out.append(Trajectory(vehicle_id=vid, points=points))
    return out
