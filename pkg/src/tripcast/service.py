"""Session state and what-if mechanics shared by the CLI and the HTTP gateway."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .encoder import IntervalFeatures
from .training import OnlineConfig, OnlineLoop

SCHEMA_VERSION = "1"


class RequestError(ValueError):
    """Invalid request body (HTTP 400)."""


class UnknownSegmentError(ValueError):
    """Request references a segment the network does not have (HTTP 404)."""


class WarmUpError(RuntimeError):
    """Not enough buffered intervals yet (HTTP 409)."""


@dataclass(frozen=True)
class WhatIfEvent:
    segment: int
    capacity_factor: float

    @classmethod
    def from_dict(cls, data: dict, num_segments: int) -> "WhatIfEvent":
        try:
            segment = int(data["segment"])
            factor = float(data.get("capacity_factor", 0.1))
        except (KeyError, TypeError, ValueError) as exc:
            raise RequestError(f"malformed event entry {data!r}: {exc}") from exc
        if not 0 <= segment < num_segments:
            raise UnknownSegmentError(f"unknown segment id {segment}")
        if not 0.0 < factor <= 1.0:
            raise RequestError(f"capacity_factor {factor} not in (0, 1]")
        return cls(segment=segment, capacity_factor=factor)


def apply_events_to_window(window: list[IntervalFeatures],
                           events: list[WhatIfEvent]) -> list[IntervalFeatures]:
    """Scale affected segments' dynamic features across the input window.

    A capacity restriction is presented to the encoder as proportionally
    reduced volume and speed on the restricted segment; route preferences
    and downstream forecasts react through the learned causality.
    """
    out = []
    for feats in window:
        volumes = feats.volumes.copy()
        speeds = feats.speeds.copy()
        for event in events:
            volumes[event.segment] *= event.capacity_factor
            speeds[event.segment] *= event.capacity_factor
        out.append(IntervalFeatures(volumes=volumes, speeds=speeds, demands=feats.demands))
    return out


def whatif_forecast(model, window: list[IntervalFeatures],
                    events: list[WhatIfEvent], horizons: int | None = None
                    ) -> tuple[np.ndarray, np.ndarray]:
    """(baseline, scenario) forecasts; the session state is never mutated."""
    limit = model.config.horizons if horizons is None else horizons
    if not 1 <= limit <= model.config.horizons:
        raise RequestError(f"horizon override {limit} outside 1..{model.config.horizons}")
    baseline = model.forecast(window)[:limit]
    scenario = model.forecast(apply_events_to_window(window, events))[:limit]
    return baseline, scenario


class Session:
    """One live model instance fed by interval observations."""

    def __init__(self, model, phi: int = 12, online: bool = True, lr: float = 1e-3):
        self.model = model
        self.loop = OnlineLoop(model, OnlineConfig(phi=phi, lr=lr, update=online))

    @property
    def num_segments(self) -> int:
        return self.model.num_nodes

    @property
    def version(self) -> int:
        return self.loop.version

    def parse_features(self, body: dict) -> IntervalFeatures:
        V = self.num_segments
        try:
            volumes = np.asarray(body["volumes"], dtype=np.float64)
            speeds = np.asarray(body["speeds"], dtype=np.float64)
        except (KeyError, TypeError, ValueError) as exc:
            raise RequestError(f"body must carry numeric volumes/speeds: {exc}") from exc
        if volumes.shape != (V,) or speeds.shape != (V,):
            raise RequestError(f"volumes/speeds must have length {V}")
        demands = {}
        for entry in body.get("demands", []):
            try:
                od = (int(entry["origin"]), int(entry["destination"]))
                count = float(entry["count"])
            except (KeyError, TypeError, ValueError) as exc:
                raise RequestError(f"malformed demand entry {entry!r}: {exc}") from exc
            for seg in od:
                if not 0 <= seg < V:
                    raise UnknownSegmentError(f"unknown segment id {seg}")
            demands[od] = count
        return IntervalFeatures(volumes=volumes, speeds=speeds, demands=demands)

    def step(self, body: dict) -> dict:
        features = self.parse_features(body)
        record = self.loop.step(features)
        if record.prediction is None:
            raise WarmUpError(
                f"warm-up: {len(self.loop.buffer)}/{self.loop.warm_up_needed} intervals buffered")
        return {
            "schema_version": SCHEMA_VERSION,
            "t": record.t,
            "model_version": record.version,
            "hindcast": record.prediction.tolist(),
            "hindcast_intervals": [record.t - len(record.prediction) + 1 + i
                                   for i in range(len(record.prediction))],
        }

    def state(self) -> dict:
        latest = self.loop.buffer[-1].volumes.tolist() if self.loop.buffer else None
        return {
            "schema_version": SCHEMA_VERSION,
            "cursor": self.loop.t,
            "buffered": len(self.loop.buffer),
            "warm_up_needed": self.loop.warm_up_needed,
            "model_version": self.version,
            "online": self.loop.config.update,
            "phi": self.loop.config.phi,
            "updates": self.loop.update_times,
            "current_volumes": latest,
        }

    def require_warm(self) -> None:
        if not self.loop.warmed_up:
            raise WarmUpError(
                f"warm-up: {len(self.loop.buffer)}/{self.loop.warm_up_needed} intervals buffered")

    def forecast(self) -> dict:
        self.require_warm()
        prediction = self.loop.future_forecast()
        return {
            "schema_version": SCHEMA_VERSION,
            "model_version": self.version,
            "generated_at": self.loop.t,
            "horizons": self.model.config.horizons,
            "forecast": prediction.tolist(),
        }

    def whatif(self, body: dict) -> dict:
        self.require_warm()
        if not isinstance(body, dict) or "events" not in body or \
                not isinstance(body["events"], list):
            raise RequestError("body must carry an 'events' list")
        events = [WhatIfEvent.from_dict(e, self.num_segments) for e in body["events"]]
        horizons = body.get("horizons")
        if horizons is not None:
            try:
                horizons = int(horizons)
            except (TypeError, ValueError) as exc:
                raise RequestError(f"bad horizon override: {exc}") from exc
        tau = self.model.config.tau
        window = self.loop.buffer[-tau:]
        baseline, scenario = whatif_forecast(self.model, window, events, horizons)
        return {
            "schema_version": SCHEMA_VERSION,
            "model_version": self.version,
            "generated_at": self.loop.t,
            "events": [{"segment": e.segment, "capacity_factor": e.capacity_factor}
                       for e in events],
            "baseline": baseline.tolist(),
            "whatif": scenario.tolist(),
        }
