"""Time-indexed demand and traffic panels shared across the package."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class PanelError(ValueError):
    pass


@dataclass
class DemandVolumePanel:
    """Per-interval OD demand counts, node volumes and mean node speeds.

    Mean speeds are kept as (sum, count) accumulators so that merging two
    panels combines them correctly; ``speed_series`` derives the means.
    """

    interval_seconds: float
    od_series: list[dict[tuple[int, int], int]]
    volume_series: np.ndarray  # (T, |V|)
    speed_sum: np.ndarray  # (T, |V|)
    speed_count: np.ndarray  # (T, |V|)

    def __post_init__(self):
        self.volume_series = np.asarray(self.volume_series, dtype=np.float64)
        self.speed_sum = np.asarray(self.speed_sum, dtype=np.float64)
        self.speed_count = np.asarray(self.speed_count, dtype=np.float64)
        self.validate()

    @classmethod
    def zeros(cls, num_intervals: int, num_nodes: int, interval_seconds: float) -> "DemandVolumePanel":
        return cls(
            interval_seconds=interval_seconds,
            od_series=[{} for _ in range(num_intervals)],
            volume_series=np.zeros((num_intervals, num_nodes)),
            speed_sum=np.zeros((num_intervals, num_nodes)),
            speed_count=np.zeros((num_intervals, num_nodes)),
        )

    def validate(self) -> None:
        shape = self.volume_series.shape
        if self.speed_sum.shape != shape or self.speed_count.shape != shape:
            raise PanelError("volume and speed series must share one interval/node axis")
        if len(self.od_series) != shape[0]:
            raise PanelError("od_series length must match the interval axis")
        if np.any(self.volume_series < 0) or np.any(self.speed_sum < 0):
            raise PanelError("counts and speeds must be nonnegative")
        for row in self.od_series:
            for od, count in row.items():
                if count < 0:
                    raise PanelError(f"negative demand count for {od}")

    @property
    def num_intervals(self) -> int:
        return self.volume_series.shape[0]

    @property
    def num_nodes(self) -> int:
        return self.volume_series.shape[1]

    @property
    def speed_series(self) -> np.ndarray:
        """Mean traversal speed per node-interval; 0 where nothing traversed."""
        with np.errstate(invalid="ignore", divide="ignore"):
            means = np.where(self.speed_count > 0, self.speed_sum / np.maximum(self.speed_count, 1), 0.0)
        return means

    def demand_matrix(self, interval: int) -> dict[tuple[int, int], int]:
        return self.od_series[interval]

    def total_departures(self, interval: int) -> int:
        return int(sum(self.od_series[interval].values()))

    def __add__(self, other: "DemandVolumePanel") -> "DemandVolumePanel":
        if self.volume_series.shape != other.volume_series.shape:
            raise PanelError("cannot merge panels with different axes")
        if self.interval_seconds != other.interval_seconds:
            raise PanelError("cannot merge panels with different interval lengths")
        merged_od = []
        for a, b in zip(self.od_series, other.od_series):
            row = dict(a)
            for od, count in b.items():
                row[od] = row.get(od, 0) + count
            merged_od.append(row)
        return DemandVolumePanel(
            interval_seconds=self.interval_seconds,
            od_series=merged_od,
            volume_series=self.volume_series + other.volume_series,
            speed_sum=self.speed_sum + other.speed_sum,
            speed_count=self.speed_count + other.speed_count,
        )


def panels_equal(a: DemandVolumePanel, b: DemandVolumePanel) -> bool:
    return (
        a.interval_seconds == b.interval_seconds
        and a.od_series == b.od_series
        and np.array_equal(a.volume_series, b.volume_series)
        and np.array_equal(a.speed_sum, b.speed_sum)
        and np.array_equal(a.speed_count, b.speed_count)
    )


def panels_close(a: DemandVolumePanel, b: DemandVolumePanel) -> bool:
    """Equality up to float reassociation in the speed accumulators.

    Counts (volumes, demands, speed sample counts) compare exactly; speed
    sums admit last-ulp differences from different summation grouping.
    """
    return (
        a.interval_seconds == b.interval_seconds
        and a.od_series == b.od_series
        and np.array_equal(a.volume_series, b.volume_series)
        and np.array_equal(a.speed_count, b.speed_count)
        and np.allclose(a.speed_sum, b.speed_sum, rtol=1e-12, atol=1e-12)
    )
