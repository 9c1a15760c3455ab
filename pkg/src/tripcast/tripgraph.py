"""Tripartite trip graph: OD-pair nodes, path nodes and segment nodes.

Edges R link OD pairs to their paths; edges R' link paths to segments and
carry the 1-based position of the segment within the path.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from typing import Sequence

from .ioutil import ParseError, dump_json, expect_field, load_json, to_json
from .trips import (DEFAULT_GAP_THRESHOLD, DEFAULT_SNAP_RADIUS, EmptyMatchError,
                    Trip, map_match, split_trips)

SCHEMA_VERSION = "1"
DEFAULT_MIN_SUPPORT = 2


class GraphError(ValueError):
    pass


class EmptyGraphError(GraphError):
    """No path survived construction."""


@dataclass(frozen=True)
class ODNode:
    od_id: int
    origin: int
    destination: int


@dataclass(frozen=True)
class PathNode:
    path_id: int
    od_id: int
    segment_seq: tuple[int, ...]


@dataclass
class TripGraph:
    od_nodes: list[ODNode]
    path_nodes: list[PathNode]
    segment_nodes: list[int]
    edges_r: list[tuple[int, int]]  # (od_id, path_id)
    edges_rprime: list[tuple[int, int, int]]  # (path_id, node_id, order k)
    region_scoped: bool = False  # OD endpoints are region ids, not segment ids

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        od_ids = {od.od_id for od in self.od_nodes}
        owners: dict[int, int] = {}
        for od_id, path_id in self.edges_r:
            if od_id not in od_ids:
                raise GraphError(f"edge R references unknown od {od_id}")
            if path_id in owners:
                raise GraphError(f"path {path_id} belongs to more than one OD pair")
            owners[path_id] = od_id
        paths = {p.path_id: p for p in self.path_nodes}
        if set(owners) != set(paths):
            raise GraphError("edges R must cover every path exactly once")
        segment_set = set(self.segment_nodes)
        by_path: dict[int, list[tuple[int, int]]] = {p: [] for p in paths}
        for path_id, node_id, order in self.edges_rprime:
            if path_id not in paths:
                raise GraphError(f"edge R' references unknown path {path_id}")
            if node_id not in segment_set:
                raise GraphError(f"edge R' references undeclared segment {node_id}")
            by_path[path_id].append((order, node_id))
        ods = {od.od_id: od for od in self.od_nodes}
        for path_id, entries in by_path.items():
            path = paths[path_id]
            entries.sort()
            orders = [k for k, _ in entries]
            if orders != list(range(1, len(path.segment_seq) + 1)):
                raise GraphError(f"path {path_id}: orders {orders} are not exactly 1..|p|")
            if tuple(node for _, node in entries) != path.segment_seq:
                raise GraphError(f"path {path_id}: R' sequence does not match segment_seq")
            if path.od_id != owners[path_id]:
                raise GraphError(f"path {path_id}: od_id disagrees with edges R")
            od = ods[path.od_id]
            # endpoints must match the OD (identity map unless regions are in play,
            # in which case the caller checked region membership at build time)
            if (path.segment_seq[0], path.segment_seq[-1]) != (od.origin, od.destination) \
                    and not self.region_scoped:
                raise GraphError(
                    f"path {path_id}: endpoints {path.segment_seq[0]}..{path.segment_seq[-1]} "
                    f"do not match OD ({od.origin}, {od.destination})")

    @property
    def num_paths(self) -> int:
        return len(self.path_nodes)

    def paths_of_od(self, od_id: int) -> list[PathNode]:
        return [p for p in self.path_nodes if p.od_id == od_id]

    def od_of_path(self, path_id: int) -> ODNode:
        od_id = self.path_nodes[path_id].od_id
        return self.od_nodes[od_id]

    def max_path_len(self) -> int:
        return max(len(p.segment_seq) for p in self.path_nodes)

    def path_index(self) -> dict[tuple[int, tuple[int, ...]], int]:
        """(od, segment_seq) -> path_id lookup for matching trips to paths."""
        return {((p.od_id), p.segment_seq): p.path_id for p in self.path_nodes}

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "od_nodes": [[od.od_id, od.origin, od.destination] for od in self.od_nodes],
            "path_nodes": [[p.path_id, p.od_id, list(p.segment_seq)] for p in self.path_nodes],
            "segment_nodes": list(self.segment_nodes),
            "edges_r": [list(e) for e in self.edges_r],
            "edges_rprime": [list(e) for e in self.edges_rprime],
            "region_scoped": self.region_scoped,
        }

    @classmethod
    def from_dict(cls, data: dict, context: str = "trip graph") -> "TripGraph":
        try:
            od_nodes = [ODNode(int(a), int(b), int(c))
                        for a, b, c in expect_field(data, "od_nodes", context)]
            path_nodes = [PathNode(int(pid), int(oid), tuple(int(s) for s in seq))
                          for pid, oid, seq in expect_field(data, "path_nodes", context)]
            segment_nodes = [int(s) for s in expect_field(data, "segment_nodes", context)]
            edges_r = [(int(a), int(b)) for a, b in expect_field(data, "edges_r", context)]
            edges_rprime = [(int(a), int(b), int(c))
                            for a, b, c in expect_field(data, "edges_rprime", context)]
        except (TypeError, ValueError) as exc:
            raise ParseError(f"{context}: {exc}") from exc
        try:
            return cls(od_nodes=od_nodes, path_nodes=path_nodes,
                       segment_nodes=segment_nodes, edges_r=edges_r,
                       edges_rprime=edges_rprime,
                       region_scoped=bool(data.get("region_scoped", False)))
        except GraphError as exc:
            raise ParseError(f"{context}: {exc}") from exc

    def save(self, path) -> None:
        dump_json(self.to_dict(), path)

    def serialize(self) -> str:
        return to_json(self.to_dict())

    @classmethod
    def load(cls, path) -> "TripGraph":
        return cls.from_dict(load_json(path), context=str(path))


def build_trip_graph(trips: Sequence[Trip], min_support: int = DEFAULT_MIN_SUPPORT) -> TripGraph:
    """Derive the tripartite graph from observed trips.

    Distinct OD pairs become OD nodes; distinct node sequences per OD with
    at least ``min_support`` occurrences become path nodes. IDs are dense
    and assigned in sorted order so construction is deterministic. Trips
    whose OD endpoints were region-mapped are detected and the graph marked
    region-scoped.
    """
    counts = Counter((trip.od, tuple(trip.node_seq)) for trip in trips)
    surviving = {key: n for key, n in counts.items() if n >= min_support}
    if not surviving:
        raise EmptyGraphError(
            f"no path observed at least {min_support} times across {len(trips)} trips")

    od_pairs = sorted({od for od, _ in surviving})
    od_ids = {od: i for i, od in enumerate(od_pairs)}
    od_nodes = [ODNode(od_id=i, origin=od[0], destination=od[1]) for od, i in od_ids.items()]

    path_keys = sorted(surviving, key=lambda key: (od_ids[key[0]], key[1]))
    path_nodes = []
    edges_r = []
    edges_rprime = []
    segments: set[int] = set()
    for path_id, (od, seq) in enumerate(path_keys):
        od_id = od_ids[od]
        path_nodes.append(PathNode(path_id=path_id, od_id=od_id, segment_seq=seq))
        edges_r.append((od_id, path_id))
        for k, node in enumerate(seq, start=1):
            edges_rprime.append((path_id, node, k))
        segments.update(seq)

    region_scoped = any(trip.od != (trip.node_seq[0], trip.node_seq[-1]) for trip in trips)
    return TripGraph(od_nodes=od_nodes, path_nodes=path_nodes,
                     segment_nodes=sorted(segments), edges_r=edges_r,
                     edges_rprime=edges_rprime, region_scoped=region_scoped)


def graph_from_trajectories(trajectories, net, snap_radius: float = DEFAULT_SNAP_RADIUS,
                            gap_threshold: float = DEFAULT_GAP_THRESHOLD,
                            interval_seconds: float = 120.0,
                            min_support: int = DEFAULT_MIN_SUPPORT,
                            regions=None) -> tuple[TripGraph, list[Trip]]:
    """Full ingestion pipeline: match, split, and build the trip graph.

    Trajectories with no point inside the snap radius are skipped.
    """
    trips: list[Trip] = []
    for traj in trajectories:
        try:
            nodes, times = map_match(traj, net, snap_radius)
        except EmptyMatchError:
            continue
        trips.extend(split_trips(nodes, times, gap_threshold, interval_seconds, regions))
    return build_trip_graph(trips, min_support), trips


def count_path_departures(trips: Sequence[Trip], graph: TripGraph,
                          num_intervals: int) -> "list[list[int]]":
    """Per-interval departure tallies per path (trips on pruned paths skipped)."""
    index = graph.path_index()
    od_ids = {(od.origin, od.destination): od.od_id for od in graph.od_nodes}
    out = [[0] * graph.num_paths for _ in range(num_intervals)]
    for trip in trips:
        od_id = od_ids.get(trip.od)
        if od_id is None:
            continue
        path_id = index.get((od_id, tuple(trip.node_seq)))
        if path_id is None or not (0 <= trip.depart_interval < num_intervals):
            continue
        out[trip.depart_interval][path_id] += 1
    return out
