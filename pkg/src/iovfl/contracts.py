"""Multi-principal one-agent contract game between learning vehicles and the provider.

Conventions used throughout:

* ``J`` provider types, ``N`` selected vehicles.
* Menus are stacked into ``J x N`` arrays ``Z`` (offered significance) and
  ``P`` (requested payment); row ``j`` is what every vehicle offers a provider
  of type ``j``.
* Payment proportions are a ``J x N`` array in ``[0, 1]``.
* Type indices are 0-based in code; ``VSPProfile.true_type`` is 1-based to
  match how types are quoted in configs ("type 10").
"""
from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

log = logging.getLogger(__name__)

# Slack accepted by feasibility filters inside the search. Tighter than the
# 1e-9 used by the verification reports so accepted menus always verify.
FEAS_TOL = 1e-10
VERIFY_TOL = 1e-9


@dataclass(frozen=True)
class VSPProfile:
    types: np.ndarray
    distribution: np.ndarray
    budget_max: float
    lam: float
    true_type: int = 0  # 1-based; 0 means "highest type"

    def __post_init__(self):
        types = np.asarray(self.types, dtype=float)
        dist = np.asarray(self.distribution, dtype=float)
        object.__setattr__(self, "types", types)
        object.__setattr__(self, "distribution", dist)
        if types.ndim != 1 or types.size == 0:
            raise ValueError("types must be a non-empty vector")
        if np.any(types <= 0) or np.any(np.diff(types) <= 0):
            raise ValueError("types must be positive and strictly increasing")
        if dist.shape != types.shape or np.any(dist < 0) or abs(dist.sum() - 1.0) > 1e-9:
            raise ValueError("distribution must be a probability vector over the types")
        if self.budget_max < 0 or self.lam <= 0:
            raise ValueError("budget_max must be >= 0 and lam > 0")
        if self.true_type == 0:
            object.__setattr__(self, "true_type", types.size)
        if not 1 <= self.true_type <= types.size:
            raise ValueError("true_type out of range")

    @property
    def J(self) -> int:
        return self.types.size

    @property
    def true_row(self) -> int:
        return self.true_type - 1

    @property
    def budgets(self) -> np.ndarray:
        """Per-type budgets, scaled linearly from the top type's budget."""
        return self.types / self.types[-1] * self.budget_max


@dataclass
class ContractMenu:
    """One vehicle's offer: significance and payment for every provider type."""

    sv_id: int
    zeta: np.ndarray
    phi: np.ndarray
    significance: float  # the vehicle's collected significance, upper bound for zeta

    def __post_init__(self):
        self.zeta = np.asarray(self.zeta, dtype=float)
        self.phi = np.asarray(self.phi, dtype=float)
        if self.zeta.shape != self.phi.shape or self.zeta.ndim != 1:
            raise ValueError("zeta and phi must be vectors of equal length")

    def copy(self) -> "ContractMenu":
        return ContractMenu(self.sv_id, self.zeta.copy(), self.phi.copy(), self.significance)


@dataclass(frozen=True)
class SvCost:
    xi: float  # training cost per unit significance
    price_unit: float  # initial price per unit significance

    def __post_init__(self):
        if self.xi < 0 or self.price_unit < 0:
            raise ValueError("costs must be non-negative")


@dataclass(frozen=True)
class ContractGrid:
    levels_per_dim: int = 21
    gamma: float = 1e-6
    max_iters: int = 200
    price_headroom: float = 2.0
    # True: a vehicle evaluates each candidate menu against the provider's
    # re-optimised purchase. False: purchase proportions stay frozen during
    # the search and are refreshed once per sweep.
    anticipate: bool = True

    def __post_init__(self):
        if self.levels_per_dim < 2:
            raise ValueError("levels_per_dim must be >= 2")
        if self.gamma <= 0:
            raise ValueError("gamma must be positive")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")

    def zeta_levels(self, significance: float) -> np.ndarray:
        return np.linspace(0.0, significance, self.levels_per_dim)

    def phi_levels(self, significance: float, price_unit: float) -> np.ndarray:
        return np.linspace(0.0, self.price_headroom * price_unit * significance, self.levels_per_dim)


@dataclass
class PaymentProportions:
    rho: np.ndarray  # J x N
    flagged: np.ndarray = field(default=None)  # per-row: no profitable purchase exists

    def __post_init__(self):
        self.rho = np.asarray(self.rho, dtype=float)
        if self.flagged is None:
            self.flagged = np.zeros(self.rho.shape[0], dtype=bool)


def stack_menus(menus: Sequence[ContractMenu]) -> tuple[np.ndarray, np.ndarray]:
    Z = np.column_stack([m.zeta for m in menus])
    P = np.column_stack([m.phi for m in menus])
    return Z, P


def initial_menus(significances: Sequence[float], sv_ids: Sequence[int],
                  profile: VSPProfile, price_unit: float) -> list[ContractMenu]:
    """Opening offers: significance scaled by relative type, priced at ``price_unit``."""
    scale = profile.types / profile.types[-1]
    menus = []
    for sv_id, sig in zip(sv_ids, significances):
        zeta = scale * sig
        menus.append(ContractMenu(int(sv_id), zeta, price_unit * zeta, float(sig)))
    return menus


def _costs_vector(costs: SvCost | Sequence[SvCost], n: int) -> np.ndarray:
    if isinstance(costs, SvCost):
        return np.full(n, costs.xi)
    if len(costs) != n:
        raise ValueError("need one SvCost per vehicle")
    return np.array([c.xi for c in costs], dtype=float)


# --- provider side -----------------------------------------------------------

def satisfaction(rho_row, zeta_row, lam: float) -> float:
    return lam * math.sqrt(max(float(np.dot(rho_row, zeta_row)), 0.0))


def cost(rho_row, phi_row) -> float:
    return float(np.dot(rho_row, phi_row))


def vsp_profit(j: int, rho_row, zeta_row, phi_row, profile: VSPProfile) -> float:
    return profile.types[j] * satisfaction(rho_row, zeta_row, profile.lam) - cost(rho_row, phi_row)


def _solve_rows_exact(weight, Zb: np.ndarray, Pb: np.ndarray, budget) -> np.ndarray:
    """Maximise ``weight*sqrt(rho.zeta) - rho.phi`` on the box under ``rho.phi <= budget``.

    Solves a batch of independent rows (``C x N``) at once; ``weight`` and
    ``budget`` are scalars or per-row vectors. For a fixed
    purchased significance the cheapest way to buy it is to fill vehicles in
    order of price per unit significance (ties to the lower index), so each
    row reduces to a one-dimensional concave search along that
    piecewise-linear path.
    """
    C, N = Zb.shape
    rho = np.zeros((C, N))
    if N == 0:
        return rho
    weight = np.broadcast_to(np.asarray(weight, dtype=float), (C,))
    budget = np.broadcast_to(np.asarray(budget, dtype=float), (C,))
    usable = Zb > 0
    safe_z = np.where(usable, Zb, 1.0)
    with np.errstate(over="ignore"):
        ratio = np.where(usable, Pb / safe_z, np.inf)
    order = np.lexsort((np.broadcast_to(np.arange(N), (C, N)), ratio), axis=-1)
    rows = np.arange(C)
    s = np.zeros(C)
    spent = np.zeros(C)
    active = np.ones(C, dtype=bool)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        for step in range(N):
            k = order[:, step]
            z, p, r = Zb[rows, k], Pb[rows, k], ratio[rows, k]
            go = active & usable[rows, k]
            marginal = np.where(s > 0, weight / (2.0 * np.sqrt(s)), np.inf)
            go &= ~((s > 0) & (r >= marginal))
            pos = r > 0
            safe_r = np.where(pos, r, 1.0)
            cap = np.minimum((weight / (2.0 * safe_r)) ** 2 - s, (budget - spent) / safe_r)
            room = np.maximum(np.where(pos, np.minimum(z, cap), z), 0.0)
            frac = np.where(go, np.minimum(room / safe_z[rows, k], 1.0), 0.0)
            rho[rows, k] = np.where(go, frac, rho[rows, k])
            s = s + frac * z
            spent = spent + frac * p
            active = go & (frac >= 1.0)
    return rho


def _solve_row_exact(weight: float, zeta: np.ndarray, phi: np.ndarray, budget: float) -> np.ndarray:
    return _solve_rows_exact(weight, np.asarray(zeta, float)[None, :], np.asarray(phi, float)[None, :], budget)[0]


def _project_box_budget(y: np.ndarray, phi: np.ndarray, budget: float, tol: float = 1e-14) -> np.ndarray:
    x = np.clip(y, 0.0, 1.0)
    if float(x @ phi) <= budget:
        return x
    lo, hi = 0.0, 1.0
    while float(np.clip(y - hi * phi, 0.0, 1.0) @ phi) > budget:
        hi *= 2.0
    while hi - lo > tol * max(1.0, hi):
        mid = 0.5 * (lo + hi)
        if float(np.clip(y - mid * phi, 0.0, 1.0) @ phi) > budget:
            lo = mid
        else:
            hi = mid
    return np.clip(y - hi * phi, 0.0, 1.0)


def _solve_row_pga(weight: float, zeta: np.ndarray, phi: np.ndarray, budget: float,
                   tol: float = 1e-8, max_iter: int = 10_000) -> np.ndarray:
    """Projected gradient ascent with backtracking; projection bisects the budget multiplier."""

    def objective(r):
        return weight * math.sqrt(max(float(r @ zeta), 0.0)) - float(r @ phi)

    if not np.any(zeta > 0) or budget <= 0:
        return np.zeros_like(zeta)
    rho = _project_box_budget(np.full(zeta.size, 0.5), phi, budget)
    step = 1.0
    for _ in range(max_iter):
        # the square root is not differentiable at zero purchase; a floor keeps the
        # gradient finite and still points into the positive orthant
        s = max(float(rho @ zeta), 1e-12)
        grad = weight * zeta / (2.0 * math.sqrt(s)) - phi
        f0 = objective(rho)
        while True:
            cand = _project_box_budget(rho + step * grad, phi, budget)
            gain = objective(cand) - f0
            if gain >= 1e-4 * float(grad @ (cand - rho)) or step < 1e-20:
                break
            step *= 0.5
        if gain < 0:
            break
        moved = float(np.max(np.abs(cand - rho)))
        rho = cand
        step = min(step * 2.0, 1e6)
        if moved < tol * 1e-2:
            break
    return rho


def solve_payment_proportions(menus: Sequence[ContractMenu], profile: VSPProfile,
                              method: str = "exact") -> PaymentProportions:
    """Provider's optimal purchase proportions for every type, given the menus."""
    if not menus:
        raise ValueError("need at least one menu")
    Z, P = stack_menus(menus)
    return solve_payment_proportions_arrays(Z, P, profile, method)


def solve_payment_proportions_arrays(Z: np.ndarray, P: np.ndarray, profile: VSPProfile,
                                     method: str = "exact") -> PaymentProportions:
    budgets = profile.budgets
    weights = profile.types * profile.lam
    if method == "exact":
        rho = _solve_rows_exact(weights, np.asarray(Z, float), np.asarray(P, float), budgets)
    elif method == "pga":
        rho = np.array([_solve_row_pga(weights[j], Z[j], P[j], budgets[j]) for j in range(profile.J)])
    else:
        raise ValueError(f"unknown method {method!r}")
    flagged = ~np.any(rho > 0, axis=1)
    return PaymentProportions(rho, flagged)


def kkt_residual(rho_row, zeta_row, phi_row, weight: float, budget: float) -> float:
    """Largest violation of the first-order optimality conditions of the purchase problem."""
    rho = np.asarray(rho_row, float)
    zeta = np.asarray(zeta_row, float)
    phi = np.asarray(phi_row, float)
    s = float(rho @ zeta)
    if s <= 0:
        # Only optimal if nothing can be bought: no budget or nothing on offer.
        buyable = (zeta > 0) & ((phi == 0) | (budget > 0))
        return 0.0 if not np.any(buyable) else math.inf
    grad = weight * zeta / (2.0 * math.sqrt(s)) - phi
    spent = float(rho @ phi)
    mu = 0.0
    if spent >= budget - 1e-12 and np.any(phi > 0):
        with np.errstate(divide="ignore", invalid="ignore"):
            implied = np.where(phi > 0, grad / phi, np.nan)
        interior = (rho > 1e-12) & (rho < 1 - 1e-12) & (phi > 0)
        if np.any(interior):
            mu = float(np.nanmean(implied[interior]))
        else:
            lower = implied[(rho <= 1e-12) & (phi > 0)]
            mu = float(np.nanmax(lower)) if lower.size else 0.0
        mu = max(mu, 0.0)
    g = grad - mu * phi
    viol = np.where(rho <= 1e-12, np.maximum(g, 0.0),
                    np.where(rho >= 1 - 1e-12, np.maximum(-g, 0.0), np.abs(g)))
    scale = max(1.0, float(np.max(np.abs(phi))))
    return float(np.max(viol)) / scale + max(spent - budget, 0.0)


# --- vehicle side ------------------------------------------------------------

def expected_sv_profit(n: int, menus: Sequence[ContractMenu], proportions: PaymentProportions,
                       profile: VSPProfile, costs: SvCost | Sequence[SvCost]) -> float:
    xi = _costs_vector(costs, len(menus))[n]
    rho = proportions.rho[:, n]
    m = menus[n]
    return float(np.sum((rho * m.phi - rho * m.zeta * xi) * profile.distribution))


def actual_sv_profits(j: int, menus: Sequence[ContractMenu], proportions: PaymentProportions,
                      costs: SvCost | Sequence[SvCost]) -> np.ndarray:
    """Per-vehicle realised profit when the provider's type is ``j``."""
    Z, P = stack_menus(menus)
    xi = _costs_vector(costs, len(menus))
    rho = proportions.rho[j]
    return rho * P[j] - rho * Z[j] * xi


def social_welfare(j: int, menus: Sequence[ContractMenu], proportions: PaymentProportions,
                   costs: SvCost | Sequence[SvCost], profile: VSPProfile) -> float:
    Z, _ = stack_menus(menus)
    xi = _costs_vector(costs, len(menus))
    rho = proportions.rho[j]
    return profile.types[j] * satisfaction(rho, Z[j], profile.lam) - float(np.sum(rho * Z[j] * xi))


# --- constraint machinery ----------------------------------------------------

def cross_profits(rho: np.ndarray, Z: np.ndarray, P: np.ndarray, profile: VSPProfile) -> np.ndarray:
    """``U[j, k]``: profit of a type-``j`` provider taking the contract row designed for type ``k``."""
    S = profile.lam * np.sqrt(np.maximum(np.sum(rho * Z, axis=1), 0.0))
    C = np.sum(rho * P, axis=1)
    return profile.types[:, None] * S[None, :] - C[None, :]


def p2_slacks(rho: np.ndarray, Z: np.ndarray, P: np.ndarray, profile: VSPProfile) -> np.ndarray:
    """Slack of every original constraint: J budgets, J IR, J(J-1) pairwise IC."""
    J = profile.J
    U = cross_profits(rho, Z, P, profile)
    budget = profile.budgets - np.sum(rho * P, axis=1)
    ir = np.diag(U).copy()
    ic = [U[j, j] - U[j, k] for j in range(J) for k in range(J) if k != j]
    return np.concatenate([budget, ir, np.asarray(ic, dtype=float)])


def p3_slacks(rho: np.ndarray, Z: np.ndarray, P: np.ndarray, profile: VSPProfile) -> np.ndarray:
    """Slack of the reduced constraints: J budgets, lowest-type IR, J-1 LDIC, J-1 monotonicity."""
    U = cross_profits(rho, Z, P, profile)
    budget = profile.budgets - np.sum(rho * P, axis=1)
    ir1 = np.array([U[0, 0]])
    j = np.arange(1, profile.J)
    ldic = U[j, j] - U[j, j - 1]
    mono = np.min(Z[1:] - Z[:-1], axis=1) if profile.J > 1 else np.empty(0)
    return np.concatenate([budget, ir1, ldic, mono])


def p3_feasible(rho, Z, P, profile, tol: float = FEAS_TOL) -> bool:
    return bool(np.all(p3_slacks(rho, Z, P, profile) >= -tol))


@dataclass
class IrIcReport:
    ir: np.ndarray  # per type
    ic_margins: np.ndarray  # J x J, nan on the diagonal
    passed: bool

    @property
    def worst_ir(self) -> float:
        return float(np.min(self.ir))

    @property
    def worst_ic(self) -> float:
        off = self.ic_margins[~np.isnan(self.ic_margins)]
        return float(np.min(off)) if off.size else 0.0


def verify_ir_ic(menus: Sequence[ContractMenu], proportions: PaymentProportions,
                 profile: VSPProfile, tol: float = VERIFY_TOL) -> IrIcReport:
    Z, P = stack_menus(menus)
    U = cross_profits(proportions.rho, Z, P, profile)
    ir = np.diag(U).copy()
    margins = np.diag(U)[:, None] - U
    np.fill_diagonal(margins, np.nan)
    ok = bool(np.all(ir >= -tol)) and bool(np.all(np.nan_to_num(margins, nan=0.0) >= -tol))
    return IrIcReport(ir, margins, ok)


@dataclass
class MonotonicityReport:
    zeta_ok: bool
    phi_ok: bool
    profit_ok: bool
    type_profits: np.ndarray

    @property
    def passed(self) -> bool:
        return self.zeta_ok and self.phi_ok and self.profit_ok


def check_monotonicity(menus: Sequence[ContractMenu], proportions: PaymentProportions,
                       profile: VSPProfile, tol: float = VERIFY_TOL) -> MonotonicityReport:
    Z, P = stack_menus(menus)
    profits = np.diag(cross_profits(proportions.rho, Z, P, profile)).copy()
    return MonotonicityReport(
        zeta_ok=bool(np.all(np.diff(Z, axis=0) >= -tol)),
        phi_ok=bool(np.all(np.diff(P, axis=0) >= -tol)),
        profit_ok=bool(np.all(np.diff(profits) >= -tol)),
        type_profits=profits,
    )


# --- best response and alternating iteration ---------------------------------

@dataclass
class BestResponse:
    menu: ContractMenu
    profit: float
    incumbent_profit: float
    improved: bool
    incumbent_feasible: bool
    flagged: bool = False  # no feasible grid menu at all


def _grid_states(menu: ContractMenu, price_unit: float, grid: ContractGrid):
    zl = grid.zeta_levels(menu.significance)
    pl = grid.phi_levels(menu.significance, price_unit)
    L = grid.levels_per_dim
    zi, pi = np.divmod(np.arange(L * L), L)
    return zl[zi], pl[pi], zi, pi


def _row_outcomes(n, Z, P, rho, zs, ps, profile, anticipate):
    """Row totals and vehicle ``n``'s proportion for every candidate grid state.

    Returns ``J x S`` arrays of purchased significance, provider spend and
    ``rho[:, n]``. The purchase problem separates by type row, so a candidate
    state in row ``j`` only moves row ``j``'s optimal proportions.
    """
    J = Z.shape[0]
    S = zs.size
    if not anticipate:
        others_z = np.sum(rho * Z, axis=1) - rho[:, n] * Z[:, n]
        others_c = np.sum(rho * P, axis=1) - rho[:, n] * P[:, n]
        tot_z = others_z[:, None] + rho[:, n][:, None] * zs[None, :]
        tot_c = others_c[:, None] + rho[:, n][:, None] * ps[None, :]
        return tot_z, tot_c, np.repeat(rho[:, n][:, None], S, axis=1)
    N = Z.shape[1]
    Zb = np.repeat(Z, S, axis=0)  # row j * S + s
    Pb = np.repeat(P, S, axis=0)
    Zb[:, n] = np.tile(zs, J)
    Pb[:, n] = np.tile(ps, J)
    rb = _solve_rows_exact(np.repeat(profile.types * profile.lam, S), Zb, Pb, np.repeat(profile.budgets, S))
    tot_z = np.sum(rb * Zb, axis=1).reshape(J, S)
    tot_c = np.sum(rb * Pb, axis=1).reshape(J, S)
    return tot_z, tot_c, rb[:, n].reshape(J, S)


def best_response(n: int, menus: Sequence[ContractMenu], proportions: PaymentProportions,
                  profile: VSPProfile, costs: SvCost | Sequence[SvCost],
                  grid: ContractGrid) -> BestResponse:
    """Vehicle ``n``'s most profitable feasible grid menu, the other menus held fixed.

    ``proportions`` must be the provider's optimum for ``menus``. Feasibility
    means the reduced constraint set (budgets, lowest-type IR, local downward
    IC, monotone significance) plus a non-decreasing price. Those couple only
    adjacent type rows, so the search over all monotone grid menus is an exact
    dynamic programme along the type chain. Grid states are indexed
    ``zeta_level * L + phi_level``; ties resolve to the lowest index at the
    lowest type first.
    """
    J = profile.J
    N = len(menus)
    rho = proportions.rho
    Z, P = stack_menus(menus)
    xi = _costs_vector(costs, N)[n]
    unit = costs.price_unit if isinstance(costs, SvCost) else costs[n].price_unit
    theta, lam, budgets = profile.types, profile.lam, profile.budgets

    zs, ps, zi, pi = _grid_states(menus[n], unit, grid)
    tot_z, tot_c, rho_n = _row_outcomes(n, Z, P, rho, zs, ps, profile, grid.anticipate)
    sat = lam * np.sqrt(np.maximum(tot_z, 0.0))
    reward = profile.distribution[:, None] * rho_n * (ps[None, :] - zs[None, :] * xi)

    unary = tot_c <= budgets[:, None] + FEAS_TOL
    unary[0] &= theta[0] * sat[0] - tot_c[0] >= -FEAS_TOL
    if J > 1:
        # monotone significance across rows is also required of the other vehicles
        others_ok = np.all(np.delete(Z[1:] - Z[:-1], n, axis=1) >= -FEAS_TOL)
        if not others_ok:
            unary[:] = False
    order_ok = _order_mask(zi, pi)  # [prev, next]
    own = theta[:, None] * sat - tot_c  # type j's profit from row j, by state
    dev = np.full_like(own, np.nan)
    dev[1:] = theta[1:, None] * sat[:-1] - tot_c[:-1]  # type j's profit from row j-1, by state of row j-1

    def transition(j, prev=slice(None)):
        return order_ok[prev] & (own[j][None, :] >= np.atleast_1d(dev[j][prev])[:, None] - FEAS_TOL)

    values = _values_to_go(reward, unary, transition, J)

    inc = menus[n]
    inc_feasible = p3_feasible(rho, Z, P, profile)
    inc_profit = float(np.sum(profile.distribution * rho[:, n] * (inc.phi - inc.zeta * xi)))
    if not np.isfinite(np.max(values[0])):
        return BestResponse(inc.copy(), inc_profit, inc_profit, False, inc_feasible, flagged=True)

    path = [int(np.argmax(values[0]))]
    for j in range(1, J):
        cand = np.where(transition(j, path[-1])[0], values[j], -np.inf)
        path.append(int(np.argmax(cand)))
    path = np.array(path)
    new = ContractMenu(inc.sv_id, zs[path], ps[path], inc.significance)
    profit = float(np.max(values[0]))

    # an infeasible incumbent is always replaced by the best feasible menu
    baseline = inc_profit if inc_feasible else -np.inf
    if profit - baseline > grid.gamma:
        return BestResponse(new, profit, inc_profit, True, inc_feasible)
    return BestResponse(inc.copy(), inc_profit, inc_profit, False, inc_feasible)


def _order_mask(zi: np.ndarray, pi: np.ndarray) -> np.ndarray:
    return (zi[None, :] >= zi[:, None]) & (pi[None, :] >= pi[:, None])


def _values_to_go(reward, unary, transition, J):
    """Value-to-go per row (row ``j`` value includes rows ``j..J-1``).

    ``transition(j)`` is the ``prev x next`` feasibility mask between rows
    ``j-1`` and ``j``. The best feasible successor is found by scanning
    successors in order of decreasing value (ties: lower index first) and
    taking the first feasible one.
    """
    values = [None] * J
    v = np.where(unary[J - 1], reward[J - 1], -np.inf)
    values[J - 1] = v
    for j in range(J - 1, 0, -1):
        order = np.argsort(-v, kind="stable")
        mask = transition(j)[:, order]
        first = np.argmax(mask, axis=1)
        found = mask[np.arange(mask.shape[0]), first]
        best_next = np.where(found, v[order[first]], -np.inf)
        v = np.where(unary[j - 1], reward[j - 1] + best_next, -np.inf)
        values[j - 1] = v
    return values


@dataclass
class EquilibriumResult:
    menus: list[ContractMenu]
    proportions: PaymentProportions
    iterations: int
    converged: bool
    profit_trace: list[np.ndarray]  # expected vehicle profits after each sweep
    cycled: bool = False

    def sv_profits(self, profile: VSPProfile, costs) -> np.ndarray:
        return np.array([expected_sv_profit(n, self.menus, self.proportions, profile, costs)
                         for n in range(len(self.menus))])


def iterate_to_equilibrium(menus: Sequence[ContractMenu], profile: VSPProfile,
                           costs: SvCost | Sequence[SvCost], grid: ContractGrid) -> EquilibriumResult:
    """Alternate the provider's purchase optimisation with vehicle best responses.

    Vehicles respond in ascending id order and each sees the latest menus of
    the others. With ``grid.anticipate`` the purchase is re-solved after every
    accepted change, otherwise once per sweep. Stops after the first sweep in
    which no vehicle gains more than ``gamma``, when a sweep reproduces an
    earlier joint profile (a best-response cycle), or at ``max_iters``.
    """
    current = sorted((m.copy() for m in menus), key=lambda m: m.sv_id)
    position = {m.sv_id: i for i, m in enumerate(current)}
    if isinstance(costs, SvCost):
        cost_seq: SvCost | list[SvCost] = costs
    else:
        by_id = {m.sv_id: c for m, c in zip(menus, costs)}
        cost_seq = [by_id[m.sv_id] for m in current]

    trace = []
    seen = set()
    converged = cycled = False
    sweeps = 0
    proportions = solve_payment_proportions(current, profile)
    while sweeps < grid.max_iters:
        sweeps += 1
        changed = False
        for n in range(len(current)):
            br = best_response(n, current, proportions, profile, cost_seq, grid)
            if br.improved:
                current[n] = br.menu
                changed = True
                if grid.anticipate:
                    proportions = solve_payment_proportions(current, profile)
        if not grid.anticipate:
            proportions = solve_payment_proportions(current, profile)
        trace.append(np.array([expected_sv_profit(n, current, proportions, profile, cost_seq)
                               for n in range(len(current))]))
        if not changed:
            converged = True
            break
        key = b"".join(m.zeta.tobytes() + m.phi.tobytes() for m in current)
        if key in seen:
            cycled = True
            break
        seen.add(key)
    if not converged:
        log.warning("contract iteration stopped after %d sweeps without converging%s",
                    sweeps, " (best-response cycle)" if cycled else "")
    # restore the caller's ordering
    by_id = {m.sv_id: m for m in current}
    out = [by_id[m.sv_id] for m in menus]
    idx = [position[m.sv_id] for m in menus]
    props = PaymentProportions(proportions.rho[:, idx], proportions.flagged)
    return EquilibriumResult(out, props, sweeps, converged, [t[idx] for t in trace], cycled)


def random_instance(rng: np.random.Generator, N: int, J: int, budget_max: float,
                    lam: float = 12.0, upsilon: float = 21.0, xi: float = 5.0,
                    significance: tuple[float, float] = (0.2, 0.9)):
    """Uniform type distribution over ``theta_j = j``, significances drawn uniformly.

    Returns ``(menus, profile, costs)`` with the opening menus.
    """
    profile = VSPProfile(np.arange(1, J + 1, dtype=float), np.full(J, 1.0 / J), budget_max, lam)
    sig = rng.uniform(*significance, N)
    costs = SvCost(xi, upsilon)
    return initial_menus(sig, range(N), profile, upsilon), profile, costs


# --- brute-force oracle ------------------------------------------------------

def _monotone_grid_menus(menu: ContractMenu, price_unit: float, grid: ContractGrid, J: int):
    zl = grid.zeta_levels(menu.significance)
    pl = grid.phi_levels(menu.significance, price_unit)
    seqs = list(itertools.combinations_with_replacement(range(grid.levels_per_dim), J))
    return [(zl[list(a)], pl[list(b)]) for a in seqs for b in seqs]


def brute_force_equilibrium(menus: Sequence[ContractMenu], profile: VSPProfile,
                            costs: SvCost | Sequence[SvCost], grid: ContractGrid,
                            include_given: bool = True) -> list[tuple[list[ContractMenu], np.ndarray]]:
    """Enumerate every joint monotone grid profile and keep the grid equilibria.

    Intended as a test oracle for tiny instances. A profile qualifies if it
    satisfies the reduced constraints (and non-decreasing prices) under its
    own optimal purchase proportions and no vehicle can gain more than
    ``gamma`` by switching to another feasible strategy. With
    ``grid.anticipate`` a deviation is scored under the purchase re-solved for
    the deviated profile; otherwise under the profile's proportions. With
    ``include_given`` the supplied menus join each vehicle's strategy set.
    Returns ``(menus, expected_profits)`` pairs.
    """
    N, J, L = len(menus), profile.J, grid.levels_per_dim
    if N > 2 or J > 2 or L > 5:
        raise ValueError("brute force limited to N<=2, J<=2, levels_per_dim<=5")
    xi = _costs_vector(costs, N)
    units = [costs.price_unit if isinstance(costs, SvCost) else costs[n].price_unit for n in range(N)]
    strat_z, strat_p = [], []
    for n, m in enumerate(menus):
        s = _monotone_grid_menus(m, units[n], grid, J)
        if include_given:
            s.append((m.zeta.copy(), m.phi.copy()))
        strat_z.append(np.stack([a for a, _ in s]))
        strat_p.append(np.stack([b for _, b in s]))
    sizes = [z.shape[0] for z in strat_z]
    combos = np.indices(sizes).reshape(N, -1).T  # every joint profile
    K = combos.shape[0]
    Zj = np.stack([strat_z[n][combos[:, n]] for n in range(N)], axis=2)  # K x J x N
    Pj = np.stack([strat_p[n][combos[:, n]] for n in range(N)], axis=2)
    rho = np.empty_like(Zj)
    for j in range(J):
        rho[:, j] = _solve_rows_exact(profile.types[j] * profile.lam, Zj[:, j], Pj[:, j], profile.budgets[j])
    sat = profile.lam * np.sqrt(np.maximum(np.sum(rho * Zj, axis=2), 0.0))  # K x J
    spend = np.sum(rho * Pj, axis=2)
    own = profile.types[None, :] * sat - spend
    feasible = np.all(spend <= profile.budgets[None, :] + FEAS_TOL, axis=1) & (own[:, 0] >= -FEAS_TOL)
    if J > 1:
        down = profile.types[None, 1:] * sat[:, :-1] - spend[:, :-1]
        feasible &= np.all(own[:, 1:] - down >= -FEAS_TOL, axis=1)
        feasible &= np.all(np.diff(Zj, axis=1) >= -FEAS_TOL, axis=(1, 2))
    feasible &= np.all(np.diff(Pj, axis=1) >= -FEAS_TOL, axis=(1, 2))
    profits = np.einsum("j,kjn->kn", profile.distribution, rho * (Pj - Zj * xi[None, None, :]))

    shape = tuple(sizes)
    F = feasible.reshape(shape)
    stable = F.copy()
    for n in range(N):
        if grid.anticipate:
            Pn = np.where(F, profits[:, n].reshape(shape), -np.inf)
            best = np.max(Pn, axis=n, keepdims=True)
            stable &= profits[:, n].reshape(shape) >= best - grid.gamma
        else:
            stable &= _fixed_rho_stable(n, Zj, Pj, rho, profits, feasible, strat_z[n], strat_p[n],
                                        xi[n], profile, grid).reshape(shape)
    results = []
    for k in np.flatnonzero(stable.reshape(-1)):
        out = [ContractMenu(m.sv_id, Zj[k, :, n].copy(), Pj[k, :, n].copy(), m.significance)
               for n, m in enumerate(menus)]
        results.append((out, profits[k].copy()))
    return results


def _fixed_rho_stable(n, Zj, Pj, rho, profits, feasible, dev_z, dev_p, xi, profile, grid):
    theta, lam = profile.types, profile.lam
    mono_p = np.all(np.diff(dev_p, axis=1) >= -FEAS_TOL, axis=1)
    out = np.zeros(Zj.shape[0], dtype=bool)
    for k in np.flatnonzero(feasible):
        r = rho[k]
        base_z = np.sum(r * Zj[k], axis=1) - r[:, n] * Zj[k, :, n]
        base_c = np.sum(r * Pj[k], axis=1) - r[:, n] * Pj[k, :, n]
        tz = base_z[None, :] + dev_z * r[:, n][None, :]
        tc = base_c[None, :] + dev_p * r[:, n][None, :]
        S = lam * np.sqrt(np.maximum(tz, 0.0))
        ok = mono_p & np.all(tc <= profile.budgets[None, :] + FEAS_TOL, axis=1)
        ok &= theta[0] * S[:, 0] - tc[:, 0] >= -FEAS_TOL
        for j in range(1, profile.J):
            ok &= (theta[j] * S[:, j] - tc[:, j]) - (theta[j] * S[:, j - 1] - tc[:, j - 1]) >= -FEAS_TOL
            ok &= dev_z[:, j] >= dev_z[:, j - 1]
        gains = (dev_p[ok] - dev_z[ok] * xi) @ (profile.distribution * r[:, n])
        out[k] = not gains.size or float(np.max(gains)) - profits[k, n] <= grid.gamma
    return out
