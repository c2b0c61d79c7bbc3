"""Spatio-temporal information significance of vehicles and top-N recruitment."""
from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Sequence

import numpy as np

from .areas import AreaPartition
from .schema import NUM_DAYS


class Tier(str, Enum):
    HIGH = "high"
    MEDIUM = "medium"
    LOW = "low"


@dataclass
class SmartVehicle:
    id: int
    current_area: int
    tier: Tier
    eta_cells: np.ndarray  # K x L sample counts per (timespan, location)
    data_shard: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.int64))  # dataset row indices
    zeta: float = 0.0

    @property
    def num_samples(self) -> int:
        return int(self.data_shard.size)


@dataclass
class VariabilityPair:
    actual: np.ndarray
    required: np.ndarray


def required_matrix(K: int = NUM_DAYS, L: int = 1, per_cell: float = 1.0) -> np.ndarray:
    """Uniform coverage target: ``per_cell`` samples wanted in every (timespan, location) cell."""
    if per_cell <= 0:
        raise ValueError("per_cell must be positive")
    return np.full((K, L), float(per_cell))


def count_cells(day_category: np.ndarray, location_id: np.ndarray, K: int, L: int) -> np.ndarray:
    """Histogram of samples over (day bin 1..K, location 1..L)."""
    cells = np.zeros((K, L))
    np.add.at(cells, (np.asarray(day_category) - 1, np.asarray(location_id) - 1), 1.0)
    return cells


def location_filter(svs: Sequence[SmartVehicle], partition: AreaPartition) -> list[SmartVehicle]:
    return [sv for sv in svs if partition.group(sv.current_area) == 1]


def build_variability(eta_cells, required) -> VariabilityPair:
    eta = np.asarray(eta_cells, dtype=float)
    req = np.asarray(required, dtype=float)
    if eta.shape != req.shape:
        raise ValueError(f"shape mismatch {eta.shape} vs {req.shape}")
    if np.any(eta < 0) or np.any(req < 0):
        raise ValueError("matrices must be non-negative")
    return VariabilityPair(np.minimum(eta, req), req)


def info_significance(pair: VariabilityPair) -> float:
    """One minus the relative Frobenius gap between required and actual coverage."""
    norm = float(np.linalg.norm(pair.required))
    if norm == 0:
        raise ValueError("required matrix is all zero")
    z = 1.0 - float(np.linalg.norm(pair.required - pair.actual)) / norm
    return min(max(z, 0.0), 1.0)


def select_top_n(candidates: Sequence[SmartVehicle], n: int) -> list[SmartVehicle]:
    if n > len(candidates):
        raise ValueError(f"cannot select {n} from {len(candidates)} candidates")
    ranked = sorted(candidates, key=lambda sv: (-sv.zeta, sv.id))
    return ranked[:n]
