"""Road network model: directed graph of segment (or grid) nodes."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .ioutil import ParseError, dump_json, expect_field, load_json

SCHEMA_VERSION = "1"


class NetworkError(ValueError):
    """Road network invariant violation."""


@dataclass(frozen=True)
class RoadNode:
    """One road segment (or grid cell) with its static attributes."""

    id: int
    kind: str  # "segment" or "grid"
    length: float  # meters
    capacity: float  # vehicles per interval
    free_speed: float  # meters per second
    centroid: tuple[float, float]  # planar meters


@dataclass
class RoadNetwork:
    nodes: list[RoadNode]
    edges: list[tuple[int, int]]

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        ids = [n.id for n in self.nodes]
        if sorted(ids) != list(range(len(self.nodes))):
            raise NetworkError("node ids must be dense 0..|V|-1 and unique")
        for n in self.nodes:
            if n.kind not in ("segment", "grid"):
                raise NetworkError(f"node {n.id}: unknown kind {n.kind!r}")
            if not (n.length > 0 and n.capacity > 0 and n.free_speed > 0):
                raise NetworkError(f"node {n.id}: length/capacity/free_speed must be > 0")
        seen = set()
        for a, b in self.edges:
            if not (0 <= a < len(self.nodes) and 0 <= b < len(self.nodes)):
                raise NetworkError(f"edge ({a}, {b}) references an undeclared node")
            if (a, b) in seen:
                raise NetworkError(f"duplicate edge ({a}, {b})")
            seen.add((a, b))

    @property
    def num_nodes(self) -> int:
        return len(self.nodes)

    @property
    def edge_set(self) -> set[tuple[int, int]]:
        return set(self.edges)

    def node(self, node_id: int) -> RoadNode:
        return self.nodes[node_id]

    def centroids(self) -> np.ndarray:
        return np.array([n.centroid for n in self.nodes], dtype=np.float64)

    def static_features(self) -> np.ndarray:
        """Per-node (length, capacity, free_speed), scaled by network maxima."""
        raw = np.array([[n.length, n.capacity, n.free_speed] for n in self.nodes])
        return raw / raw.max(axis=0)

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "nodes": [
                {
                    "id": n.id,
                    "kind": n.kind,
                    "length": n.length,
                    "capacity": n.capacity,
                    "free_speed": n.free_speed,
                    "centroid": list(n.centroid),
                }
                for n in self.nodes
            ],
            "edges": [list(e) for e in self.edges],
        }

    @classmethod
    def from_dict(cls, data: dict, context: str = "network") -> "RoadNetwork":
        nodes = []
        for entry in expect_field(data, "nodes", context):
            nodes.append(RoadNode(
                id=int(expect_field(entry, "id", context)),
                kind=str(expect_field(entry, "kind", context)),
                length=float(expect_field(entry, "length", context)),
                capacity=float(expect_field(entry, "capacity", context)),
                free_speed=float(expect_field(entry, "free_speed", context)),
                centroid=tuple(expect_field(entry, "centroid", context)),
            ))
        edges = [(int(a), int(b)) for a, b in expect_field(data, "edges", context)]
        try:
            return cls(nodes=sorted(nodes, key=lambda n: n.id), edges=edges)
        except NetworkError as exc:
            raise ParseError(f"{context}: {exc}") from exc

    def save(self, path) -> None:
        dump_json(self.to_dict(), path)

    @classmethod
    def load(cls, path) -> "RoadNetwork":
        return cls.from_dict(load_json(path), context=str(path))
