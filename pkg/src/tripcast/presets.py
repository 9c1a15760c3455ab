"""Bundled desk-scale scenario presets.

Both presets share one 30-segment network: two fork blocks where a long
feeder segment serves two ODs with anti-phase demand (the feeder sees only
the demand sum, so per-OD composition matters downstream), plus one classic
three-path diamond. Each OD has two or three candidate paths of distinct
free-flow cost, so route choice has a clear majority path and capacity
events flip it.

- ``sy-mini``: 960 intervals of 120 s, no events.
- ``vs-mini``: the same plus ten capacity-to-10% events (six in the
  chronological training split, one in validation, three in test).
"""

from __future__ import annotations

import numpy as np

from .generator import EventSpec, Scenario
from .network import RoadNetwork, RoadNode

PRESET_HORIZON = 960  # 32 hours of 2-minute intervals
PRESET_INTERVAL_SECONDS = 120.0
PRESET_THETA = 0.03  # route-choice sensitivity, 1/seconds

_FEEDER = dict(length=2400.0, capacity=110.0, free_speed=10.0)  # ~2 intervals
_FAST = dict(length=700.0, capacity=14.0, free_speed=10.0)
_SLOW = dict(length=800.0, capacity=14.0, free_speed=8.5)
_MIDDLE = dict(length=1550.0, capacity=14.0, free_speed=10.0)
_GATE = dict(length=500.0, capacity=24.0, free_speed=10.0)


def _add(nodes, spec, x, y):
    node_id = len(nodes)
    nodes.append(RoadNode(id=node_id, kind="segment", length=spec["length"],
                          capacity=spec["capacity"], free_speed=spec["free_speed"],
                          centroid=(x, y)))
    return node_id


def _fork_block(nodes, edges, off, with_middle: bool):
    """Long shared feeder forking into two destinations, 2-3 paths each."""
    e = _add(nodes, _FEEDER, off, 0.0)
    a1 = _add(nodes, _FAST, off + 700.0, 500.0)
    a2 = _add(nodes, _FAST, off + 1400.0, 550.0)
    mid = _add(nodes, _MIDDLE, off + 1050.0, 350.0) if with_middle else None
    b1 = _add(nodes, _SLOW, off + 700.0, 250.0)
    b2 = _add(nodes, _SLOW, off + 1400.0, 300.0)
    x1 = _add(nodes, _GATE, off + 2100.0, 450.0)
    c1 = _add(nodes, _FAST, off + 700.0, -250.0)
    c2 = _add(nodes, _FAST, off + 1400.0, -300.0)
    d1 = _add(nodes, _SLOW, off + 700.0, -500.0)
    d2 = _add(nodes, _SLOW, off + 1400.0, -550.0)
    x2 = _add(nodes, _GATE, off + 2100.0, -450.0)
    edges += [(e, a1), (a1, a2), (a2, x1), (e, b1), (b1, b2), (b2, x1),
              (e, c1), (c1, c2), (c2, x2), (e, d1), (d1, d2), (d2, x2)]
    upper_paths = [[e, a1, a2, x1], [e, b1, b2, x1]]
    if mid is not None:
        edges += [(e, mid), (mid, x1)]
        upper_paths.insert(1, [e, mid, x1])
    lower_paths = [[e, c1, c2, x2], [e, d1, d2, x2]]
    return [((e, x1), upper_paths), ((e, x2), lower_paths)]


def _diamond_block(nodes, edges, off):
    """Long feeder into a three-path diamond: one OD, three candidate paths."""
    e = _add(nodes, _FEEDER, off, 0.0)
    u1 = _add(nodes, _FAST, off + 700.0, 300.0)
    u2 = _add(nodes, _FAST, off + 1400.0, 300.0)
    mid = _add(nodes, _MIDDLE, off + 1050.0, 0.0)
    l1 = _add(nodes, _SLOW, off + 700.0, -300.0)
    l2 = _add(nodes, _SLOW, off + 1400.0, -300.0)
    x = _add(nodes, _GATE, off + 2100.0, 0.0)
    edges += [(e, u1), (u1, u2), (u2, x), (e, mid), (mid, x),
              (e, l1), (l1, l2), (l2, x)]
    return [((e, x), [[e, u1, u2, x], [e, mid, x], [e, l1, l2, x]])]


def preset_network() -> tuple[RoadNetwork, list, dict]:
    """The shared 30-segment network: 5 ODs, 12 candidate paths."""
    nodes: list[RoadNode] = []
    edges: list[tuple[int, int]] = []
    blocks = []
    blocks += _fork_block(nodes, edges, 0.0, with_middle=True)
    blocks += _fork_block(nodes, edges, 3200.0, with_middle=False)
    blocks += _diamond_block(nodes, edges, 6400.0)
    od_keys = [od for od, _ in blocks]
    candidate_paths = {od: paths for od, paths in blocks}
    return RoadNetwork(nodes=nodes, edges=edges), od_keys, candidate_paths


def _split_pulse(rng, horizon: int, hold: int, lo: float, hi: float) -> np.ndarray:
    """Piecewise-constant split ratio, re-drawn every ``hold`` intervals."""
    levels = rng.uniform(lo, hi, size=horizon // hold + 1)
    return np.repeat(levels, hold)[:horizon]


def _demand_schedules(od_keys, horizon: int) -> dict:
    """Fork pairs share a smooth total but split it by a random pulse.

    The shared feeder segment only ever shows the (smooth, predictable)
    sum, while the split between the paired destinations jumps at random
    every few intervals. Branch volumes reveal a jump only after the
    feeder's travel time, so observed OD counts carry real look-ahead that
    no volume history contains.
    """
    t = np.arange(horizon)
    rng = np.random.default_rng(90210)  # part of the preset definition
    out = {}

    def smooth(base, amp, period, phase):
        return base + amp * 0.5 * (1.0 + np.sin(2.0 * np.pi * t / period + phase))

    for pair, (base, amp, period, phase, hold) in zip(
            ((od_keys[0], od_keys[1]), (od_keys[2], od_keys[3])),
            ((12.0, 30.0, 20.0, 0.0, 3), (12.0, 28.0, 28.0, 1.3, 4))):
        total = smooth(base, amp, period, phase)
        split = _split_pulse(rng, horizon, hold, 0.05, 0.95)
        out[pair[0]] = [float(r) for r in total * split]
        out[pair[1]] = [float(r) for r in total * (1.0 - split)]

    total = smooth(6.0, 22.0, 24.0, 2.6)
    wobble = _split_pulse(rng, horizon, 3, 0.4, 1.6)
    out[od_keys[4]] = [float(r) for r in total * wobble]
    return out


def preset_events() -> list[EventSpec]:
    # all events hit the fast branch of some OD (segments 1, 7, 13, 18, 24),
    # flipping its majority route; with the 4:1:2 chronological split, six
    # fall in training, one in validation, three in test
    return [
        EventSpec(segment=1, start=60, end=100, capacity_factor=0.1),
        EventSpec(segment=7, start=150, end=190, capacity_factor=0.1),
        EventSpec(segment=13, start=230, end=270, capacity_factor=0.1),
        EventSpec(segment=24, start=320, end=360, capacity_factor=0.1),
        EventSpec(segment=18, start=420, end=455, capacity_factor=0.1),
        EventSpec(segment=1, start=500, end=540, capacity_factor=0.1),
        EventSpec(segment=13, start=600, end=640, capacity_factor=0.1),
        EventSpec(segment=7, start=720, end=765, capacity_factor=0.1),
        EventSpec(segment=1, start=800, end=840, capacity_factor=0.1),
        EventSpec(segment=24, start=880, end=920, capacity_factor=0.1),
    ]


def preset_scenario(name: str, seed: int = 0) -> Scenario:
    key = name.lower().removesuffix(".json")
    if key not in ("sy-mini", "vs-mini"):
        raise KeyError(f"unknown preset {name!r}; available: sy-mini, vs-mini")
    net, od_keys, candidate_paths = preset_network()
    return Scenario(
        net=net,
        od_rates=_demand_schedules(od_keys, PRESET_HORIZON),
        candidate_paths=candidate_paths,
        logit_theta=PRESET_THETA,
        horizon=PRESET_HORIZON,
        seed=seed,
        interval_seconds=PRESET_INTERVAL_SECONDS,
        events=preset_events() if key == "vs-mini" else [],
        # calmer driver reaction: during-event volumes settle to a learnable
        # level instead of oscillating with route flapping
        travel_time_smoothing=0.3,
        name=key,
    )
