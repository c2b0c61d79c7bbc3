"""Value of the global model to the provider, discounted for staleness."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .contracts import ContractMenu, PaymentProportions, SvCost, VSPProfile, _costs_vector, stack_menus


@dataclass(frozen=True)
class FreshnessParams:
    a: float = 1.0  # weight on accuracy
    b: float = 0.05  # decay per learning round

    def __post_init__(self):
        if self.a <= 0 or self.b < 0:
            raise ValueError("need a > 0 and b >= 0")


def model_value(chi: float, t: float, params: FreshnessParams = FreshnessParams()) -> float:
    """Accuracy ``chi`` scaled by ``a`` and decayed exponentially in the round index."""
    if not 0.0 <= chi <= 1.0:
        raise ValueError("accuracy must lie in [0, 1]")
    if t < 0:
        raise ValueError("round index must be non-negative")
    return params.a * chi * math.exp(-params.b * t)


def _purchased(j, menus, proportions):
    Z, P = stack_menus(menus)
    rho = proportions.rho[j]
    return rho, Z[j], P[j]


def net_vsp_profit(j: int, menus: Sequence[ContractMenu], proportions: PaymentProportions,
                   profile: VSPProfile, omega: float) -> float:
    rho, z, p = _purchased(j, menus, proportions)
    sat = profile.lam * math.sqrt(max(float(rho @ z), 0.0))
    return profile.types[j] * omega * sat - float(rho @ p)


def net_social_welfare(j: int, menus: Sequence[ContractMenu], proportions: PaymentProportions,
                       profile: VSPProfile, costs: SvCost | Sequence[SvCost], omega: float) -> float:
    rho, z, _ = _purchased(j, menus, proportions)
    xi = _costs_vector(costs, len(menus))
    sat = profile.lam * math.sqrt(max(float(rho @ z), 0.0))
    return profile.types[j] * omega * sat - float(np.sum(rho * z * xi))
