"""Traffic-volume based classification of areas into significant and insignificant."""
from __future__ import annotations

import csv
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Mapping

import numpy as np

from .schema import DAYS_PER_YEAR


@dataclass
class AreaPartition:
    assignments: dict[int, int]  # area_id -> 0 (insignificant) or 1 (significant)
    centroid_low: float
    centroid_high: float
    iterations: int
    objective_trace: list[float] = field(default_factory=list)

    @property
    def significant(self) -> set[int]:
        return {a for a, g in self.assignments.items() if g == 1}

    def group(self, area_id: int) -> int:
        try:
            return self.assignments[area_id]
        except KeyError:
            raise KeyError(f"area {area_id} not in partition") from None


def total_aadf(records: Iterable) -> dict[int, float]:
    """Per-area traffic volume: all daily counts summed, divided by the days in a year."""
    totals: dict[int, float] = defaultdict(float)
    for r in records:
        totals[r.area_id] += r.aadf_count
    if not totals:
        raise ValueError("no AADF records")
    return {a: v / DAYS_PER_YEAR for a, v in sorted(totals.items())}


def squared_distance(values: np.ndarray, groups: np.ndarray, c0: float, c1: float) -> float:
    return float(np.sum(np.where(groups == 1, (values - c1) ** 2, (values - c0) ** 2)))


def best_threshold_split(v: np.ndarray) -> tuple[float, float]:
    """Centroids of the two-group split of sorted ``v`` with the least squared distance.

    In one dimension an optimal two-means partition is a threshold on the
    sorted values, so prefix sums over the sorted array give it exactly.
    """
    x = np.sort(v)
    n = x.size
    s1, s2 = np.cumsum(x), np.cumsum(x * x)
    k = np.arange(1, n)  # size of the low group
    lo_sse = s2[k - 1] - s1[k - 1] ** 2 / k
    hi_sum, hi_sq = s1[-1] - s1[k - 1], s2[-1] - s2[k - 1]
    hi_sse = hi_sq - hi_sum ** 2 / (n - k)
    cost = np.where(x[k - 1] < x[k], lo_sse + hi_sse, np.inf)  # never split equal values
    b = int(np.argmin(cost)) + 1
    return float(x[:b].mean()), float(x[b:].mean())


def kmeans_binary(values: Mapping[int, float], seed: int = 0, max_iter: int = 1000,
                  init: str = "optimal") -> AreaPartition:
    """Two-cluster Lloyd iteration on the per-area volumes.

    ``init="optimal"`` starts from the centroids of the best threshold split,
    so the result is the global optimum; ``init="extremes"`` starts at the
    smallest and largest volume and may stop in a local optimum. Both are
    independent of ``seed`` and of input order. Points equidistant from both
    centroids join the high group. Iterates until the centroids stop moving.
    """
    del seed  # kept for interface stability; initialisation is deterministic
    ids = np.array(sorted(values), dtype=np.int64)
    v = np.array([values[i] for i in ids], dtype=float)
    if v.size < 2 or np.all(v == v[0]):
        raise ValueError("need at least two areas with distinct volumes")
    if init == "optimal":
        c0, c1 = best_threshold_split(v)
    elif init == "extremes":
        c0, c1 = float(v.min()), float(v.max())
    else:
        raise ValueError("init must be 'optimal' or 'extremes'")
    trace = []
    it = 0
    while it < max_iter:
        it += 1
        groups = (np.abs(v - c1) <= np.abs(v - c0)).astype(int)
        trace.append(squared_distance(v, groups, c0, c1))
        c0_new = _mean(v[groups == 0], c0)
        c1_new = _mean(v[groups == 1], c1)
        trace.append(squared_distance(v, groups, c0_new, c1_new))
        if c0_new == c0 and c1_new == c1:
            break
        c0, c1 = c0_new, c1_new
    groups = (np.abs(v - c1) <= np.abs(v - c0)).astype(int)
    return AreaPartition({int(a): int(g) for a, g in zip(ids, groups)}, c0, c1, it, trace)


def _mean(x: np.ndarray, fallback: float) -> float:
    return float(x.mean()) if x.size else fallback


def write_partition_csv(partition: AreaPartition, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["area_id", "group"])
        for a, g in sorted(partition.assignments.items()):
            w.writerow([a, g])
