"""Round-by-round federated learning simulation with contract-based vehicle recruitment.

Each round: vehicles move and collect data, a scheduler picks ``N`` of them,
the contract game is solved for the selected vehicles, they train locally,
the provider aggregates, and the round's learning and economic metrics are
recorded.
"""
from __future__ import annotations

import csv
import dataclasses
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

import numpy as np
import yaml

from . import contracts as ct
from .areas import AreaPartition, kmeans_binary, total_aadf
from .economics import FreshnessParams, model_value, net_social_welfare, net_vsp_profit
from .fl import (
    AdamConfig, EncodedData, ModelParams, accuracy, encode_accidents, fed_avg, forward,
    global_loss, init_model, local_loss, local_train, partition_data, steps_for_epochs,
)
from .ingestion import SynthConfig, parse_accident_csv, parse_aadf_csv, synth_generate
from .schema import NUM_DAYS, NUM_SEVERITIES, ColumnMapping
from .selection import (
    SmartVehicle, Tier, build_variability, count_cells, info_significance, location_filter,
    required_matrix, select_top_n,
)

log = logging.getLogger(__name__)

SCHEDULERS = ("random", "round_robin", "location_significance", "location_info_significance")
_ALIASES = {"rr": "round_robin", "ls": "location_significance", "lis": "location_info_significance"}


@dataclass
class SimConfig:
    """Every knob of an experiment. Money is in units per unit significance."""

    seed: int = 0
    rounds: int = 30  # t_th
    num_svs: int = 100  # I
    N: int = 10
    J: int = 10
    theta: list[float] | None = None  # None -> 1..J
    rho: list[float] | None = None  # None -> uniform
    budget_max: float = 250.0
    lam: float = 12.0
    upsilon: float = 21.0
    xi: float = 5.0
    true_type: int = 0  # 1-based, 0 -> J
    gamma: float = 1e-6
    grid_levels: int = 21
    price_headroom: float = 2.0
    max_contract_iters: int = 200
    anticipate: bool = True
    hidden: list[int] = field(default_factory=lambda: [128, 64])
    local_epochs: int = 5
    tau_th: int | None = None  # local Adam steps; None -> local_epochs passes over the shard
    batch_size: int = 32
    kappa0: float = 0.01
    beta_p: float = 0.9
    beta_q: float = 0.999
    epsilon: float = 1e-8
    iid: bool = False
    test_fraction: float = 0.2
    a: float = 1.0
    b: float = 0.05
    convergence_tol: float = 1e-3
    convergence_window: int = 3
    tier_mix: list[float] = field(default_factory=lambda: [0.2, 0.3, 0.5])  # high, medium, low
    tier_weights: list[float] = field(default_factory=lambda: [5.0, 2.0, 1.0])  # relative shard sizes
    collect_high: list[float] = field(default_factory=lambda: [0.7, 1.0])
    collect_medium: list[float] = field(default_factory=lambda: [0.4, 0.7])
    collect_low: list[float] = field(default_factory=lambda: [0.1, 0.4])
    insignificant_factor: float = 0.5
    required_per_cell: float = 1.0
    data_mode: str = "synthetic"  # or "files"
    aadf_path: str | None = None
    accident_path: str | None = None
    mapping_path: str | None = None
    num_areas: int = 190
    num_locations: int = 20
    num_samples: int = 20_000
    significant_fraction: float = 0.5
    aadf_high_mean: float = 8000.0
    aadf_low_mean: float = 2000.0
    label_noise: float = 0.35
    location_effect: float = 1.0
    condition_effect: float = 0.8
    class_skew: float = 1.0

    def __post_init__(self):
        if self.N < 1 or self.num_svs < 1 or self.N > self.num_svs:
            raise ValueError("need 1 <= N <= num_svs")
        if self.rounds < 0:
            raise ValueError("rounds must be >= 0")
        if self.theta is not None and len(self.theta) != self.J:
            raise ValueError("theta must have J entries")
        if self.rho is not None and (len(self.rho) != self.J or abs(sum(self.rho) - 1) > 1e-9):
            raise ValueError("rho must have J entries summing to 1")
        if min(self.budget_max, self.lam, self.upsilon, self.xi, self.gamma) < 0 or self.lam == 0:
            raise ValueError("economic parameters must be positive")
        if len(self.tier_mix) != 3 or abs(sum(self.tier_mix) - 1) > 1e-9:
            raise ValueError("tier_mix must hold three fractions summing to 1")
        if self.data_mode not in ("synthetic", "files"):
            raise ValueError("data_mode must be 'synthetic' or 'files'")
        if not 0 < self.test_fraction < 1:
            raise ValueError("test_fraction must lie in (0, 1)")

    @classmethod
    def from_dict(cls, doc: dict[str, Any]) -> "SimConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(doc) - names
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**doc)

    @classmethod
    def load(cls, path) -> "SimConfig":
        with open(path) as fh:
            return cls.from_dict(yaml.safe_load(fh) or {})

    def replace(self, **changes) -> "SimConfig":
        return dataclasses.replace(self, **changes)

    # derived objects
    def profile(self) -> ct.VSPProfile:
        theta = self.theta or list(range(1, self.J + 1))
        rho = self.rho or [1.0 / self.J] * self.J
        return ct.VSPProfile(np.array(theta, float), np.array(rho, float), self.budget_max, self.lam,
                             self.true_type)

    def grid(self) -> ct.ContractGrid:
        return ct.ContractGrid(self.grid_levels, self.gamma, self.max_contract_iters,
                               self.price_headroom, self.anticipate)

    def sv_cost(self) -> ct.SvCost:
        return ct.SvCost(self.xi, self.upsilon)

    def adam(self) -> AdamConfig:
        return AdamConfig(self.kappa0, self.beta_p, self.beta_q, self.epsilon)


@dataclass
class RoundMetrics:
    round: int
    scheduler: str
    selected_sv_ids: list[int]
    zeta_values: list[float]
    num_candidates: int  # vehicles in significant areas this round
    vsp_profit_per_type: list[float]
    sv_profits: list[float]
    social_welfare_per_type: list[float]
    global_loss: float
    accuracy: float
    omega: float
    net_vsp_profit: float
    net_social_welfare: float
    contract_iterations: int
    contract_converged: bool

    def check(self) -> None:
        floats = [self.global_loss, self.accuracy, self.omega, self.net_vsp_profit,
                  self.net_social_welfare, *self.zeta_values, *self.vsp_profit_per_type,
                  *self.sv_profits, *self.social_welfare_per_type]
        if not np.all(np.isfinite(floats)):
            raise ValueError(f"round {self.round}: non-finite metric")
        if not 0.0 <= self.accuracy <= 1.0:
            raise ValueError(f"round {self.round}: accuracy out of range")


class Scheduler:
    """Chooses which vehicles take part in a round."""

    def __init__(self, kind: str, rng: np.random.Generator):
        kind = _ALIASES.get(kind, kind)
        if kind not in SCHEDULERS:
            raise ValueError(f"unknown scheduler {kind!r}; choose from {SCHEDULERS}")
        self.kind = kind
        self.rng = rng
        self.cursor = 0

    def select(self, svs: Sequence[SmartVehicle], partition: AreaPartition,
               n: int) -> tuple[list[SmartVehicle], int]:
        """Returns the chosen vehicles and the number of location-filtered candidates."""
        candidates = location_filter(svs, partition)
        if self.kind == "random":
            idx = self.rng.choice(len(svs), n, replace=False)
            return [svs[i] for i in idx], len(candidates)
        if self.kind == "round_robin":
            idx = [(self.cursor + k) % len(svs) for k in range(n)]
            self.cursor = (self.cursor + n) % len(svs)
            return [svs[i] for i in idx], len(candidates)
        if len(candidates) < n:
            # too few vehicles in significant areas: take them all and top up from the rest
            chosen_ids = {sv.id for sv in candidates}
            rest = [sv for sv in svs if sv.id not in chosen_ids]
            need = n - len(candidates)
            if self.kind == "location_significance":
                extra = [rest[i] for i in self.rng.choice(len(rest), need, replace=False)]
            else:
                extra = select_top_n(rest, need)
            ranked = select_top_n(candidates, len(candidates)) if self.kind != "location_significance" \
                else candidates
            return list(ranked) + extra, len(candidates)
        if self.kind == "location_significance":
            idx = self.rng.choice(len(candidates), n, replace=False)
            return [candidates[i] for i in idx], len(candidates)
        return select_top_n(candidates, n), len(candidates)


@dataclass
class SimState:
    config: SimConfig
    partition: AreaPartition
    area_ids: np.ndarray
    train: EncodedData
    test: EncodedData
    svs: list[SmartVehicle]
    shards: list[np.ndarray]  # full local datasets; SmartVehicle.data_shard holds this round's collection
    model: ModelParams
    scheduler: Scheduler
    obs_rng: np.random.Generator
    required: np.ndarray
    t: int = 0
    contract_log: list[dict] = field(default_factory=list)


def load_data(config: SimConfig):
    """Returns (area records, accident records, number of locations)."""
    if config.data_mode == "files":
        if not (config.aadf_path and config.accident_path):
            raise ValueError("data_mode 'files' needs aadf_path and accident_path")
        mapping = ColumnMapping.load(config.mapping_path) if config.mapping_path else None
        areas = parse_aadf_csv(config.aadf_path, mapping).records
        accidents = parse_accident_csv(config.accident_path, mapping).records
        num_loc = max(r.location_id for r in accidents)
        return areas, accidents, num_loc
    synth = SynthConfig(config.num_areas, config.num_locations, config.num_samples,
                        config.significant_fraction, config.aadf_high_mean, config.aadf_low_mean,
                        config.seed, label_noise=config.label_noise,
                        location_effect=config.location_effect, condition_effect=config.condition_effect,
                        class_skew=config.class_skew)
    areas, accidents = synth_generate(synth)
    return areas, accidents, config.num_locations


def init_state(config: SimConfig, scheduler: str) -> SimState:
    seeds = np.random.SeedSequence(config.seed).spawn(4)
    split_rng, obs_rng, sched_rng, model_rng = (np.random.default_rng(s) for s in seeds)
    areas, accidents, num_loc = load_data(config)
    if len(accidents) < 2:
        raise ValueError("need at least two accident records")
    partition = kmeans_binary(total_aadf(areas), seed=config.seed)
    data = encode_accidents(accidents, num_loc)
    perm = split_rng.permutation(len(data))
    n_test = max(1, int(round(config.test_fraction * len(data))))
    test, train = data.subset(np.sort(perm[:n_test])), data.subset(np.sort(perm[n_test:]))

    tiers = _assign_tiers(config, split_rng)
    weights = dict(zip(Tier, config.tier_weights))
    shards = partition_data(train.classes, tiers, "iid" if config.iid else "noniid",
                            seed=int(split_rng.integers(2**32)), tier_weights=weights)
    area_ids = np.array(sorted(partition.assignments), dtype=np.int64)
    svs = [SmartVehicle(i, int(area_ids[0]), tiers[i], np.zeros((NUM_DAYS, num_loc))) for i in range(config.num_svs)]
    widths = [train.features.shape[1], *config.hidden, NUM_SEVERITIES]
    model = init_model(widths, int(model_rng.integers(2**32)))
    required = required_matrix(NUM_DAYS, num_loc, config.required_per_cell)
    return SimState(config, partition, area_ids, train, test, svs, shards, model,
                    Scheduler(scheduler, sched_rng), obs_rng, required)


def _assign_tiers(config: SimConfig, rng: np.random.Generator) -> list[Tier]:
    counts = np.floor(np.array(config.tier_mix) * config.num_svs).astype(int)
    counts[0] += config.num_svs - counts.sum()
    tiers = [t for t, c in zip(Tier, counts) for _ in range(c)]
    return [tiers[i] for i in rng.permutation(config.num_svs)]


def observe(state: SimState) -> None:
    """Vehicles move to a random area and collect part of their local data."""
    cfg, rng = state.config, state.obs_rng
    ranges = {Tier.HIGH: cfg.collect_high, Tier.MEDIUM: cfg.collect_medium, Tier.LOW: cfg.collect_low}
    K, L = state.required.shape
    for sv, shard in zip(state.svs, state.shards):
        sv.current_area = int(rng.choice(state.area_ids))
        lo, hi = ranges[sv.tier]
        frac = rng.uniform(lo, hi)
        if state.partition.group(sv.current_area) == 0:
            frac *= cfg.insignificant_factor
        k = min(shard.size, max(1, int(round(frac * shard.size))))
        sv.data_shard = np.sort(rng.choice(shard, k, replace=False))
        sv.eta_cells = count_cells(state.train.day[sv.data_shard], state.train.location[sv.data_shard], K, L)
        sv.zeta = info_significance(build_variability(sv.eta_cells, state.required))


def run_round(state: SimState) -> RoundMetrics:
    cfg = state.config
    t = state.t
    try:
        observe(state)
        selected, m_count = state.scheduler.select(state.svs, state.partition, cfg.N)
        profile, costs, eq = _contracts(state, selected)
        Z, P = ct.stack_menus(eq.menus)
        rho = eq.proportions.rho
        U = ct.cross_profits(rho, Z, P, profile)
        vsp_per_type = [float(U[j, j]) for j in range(profile.J)]
        sw_per_type = [float(ct.social_welfare(j, eq.menus, eq.proportions, costs, profile)) for j in range(profile.J)]
        sv_profits = [float(x) for x in eq.sv_profits(profile, costs)]

        # local training and aggregation, in ascending vehicle id
        order = sorted(range(len(selected)), key=lambda i: selected[i].id)
        local_models, etas = [], []
        for i in order:
            sv = selected[i]
            X, G = state.train.features[sv.data_shard], state.train.labels[sv.data_shard]
            steps = cfg.tau_th if cfg.tau_th is not None else steps_for_epochs(len(X), cfg.local_epochs, cfg.batch_size)
            seed = _train_seed(cfg.seed, t, sv.id)
            model, _ = local_train(state.model, X, G, steps, cfg.batch_size, seed, cfg.adam())
            local_models.append(model)
            etas.append(len(X))
        state.model = fed_avg(local_models, etas)
        losses = []
        for i in order:
            sv = selected[i]
            _, out = forward(state.model, state.train.features[sv.data_shard])
            losses.append(local_loss(out, state.train.labels[sv.data_shard]))
        psi = global_loss(losses, len(losses))
        chi = accuracy(state.model, state.test.features, state.test.labels)
        omega = model_value(chi, t, FreshnessParams(cfg.a, cfg.b))
        j = profile.true_row
        metrics = RoundMetrics(
            round=t, scheduler=state.scheduler.kind,
            selected_sv_ids=[int(sv.id) for sv in selected],
            zeta_values=[float(sv.zeta) for sv in selected],
            num_candidates=m_count,
            vsp_profit_per_type=vsp_per_type, sv_profits=sv_profits, social_welfare_per_type=sw_per_type,
            global_loss=psi, accuracy=chi, omega=omega,
            net_vsp_profit=float(net_vsp_profit(j, eq.menus, eq.proportions, profile, omega)),
            net_social_welfare=float(net_social_welfare(j, eq.menus, eq.proportions, profile, costs, omega)),
            contract_iterations=eq.iterations, contract_converged=eq.converged,
        )
        metrics.check()
    except Exception as exc:
        raise RuntimeError(f"round {t} ({state.scheduler.kind}) failed: {exc}") from exc
    state.t += 1
    return metrics


def _contracts(state: SimState, selected: Sequence[SmartVehicle]):
    cfg = state.config
    profile, costs, grid = cfg.profile(), cfg.sv_cost(), cfg.grid()
    menus = ct.initial_menus([sv.zeta for sv in selected], [sv.id for sv in selected], profile, costs.price_unit)
    eq = ct.iterate_to_equilibrium(menus, profile, costs, grid)
    Z, P = ct.stack_menus(eq.menus)
    U = ct.cross_profits(eq.proportions.rho, Z, P, profile)
    for n, m in enumerate(eq.menus):
        for j in range(profile.J):
            r = eq.proportions.rho[j, n]
            state.contract_log.append(dict(
                round=state.t, iteration=eq.iterations, sv_id=m.sv_id, type_index=j + 1,
                zeta=float(m.zeta[j]), phi=float(m.phi[j]),
                sv_profit=float(r * m.phi[j] - r * m.zeta[j] * costs.xi), vsp_profit=float(U[j, j])))
    return profile, costs, eq


def _train_seed(seed: int, t: int, sv_id: int) -> int:
    return int(np.random.SeedSequence([seed, t, sv_id]).generate_state(1)[0])


def converged(losses: Sequence[float], window: int, tol: float) -> bool:
    """Relative change between the latest trailing mean and the one a round earlier."""
    if len(losses) < window + 1:
        return False
    now = float(np.mean(losses[-window:]))
    before = float(np.mean(losses[-window - 1:-1]))
    return abs(now - before) <= tol * max(abs(before), 1e-12)


def run_experiment(config: SimConfig, scheduler: str = "location_info_significance",
                   state: SimState | None = None) -> list[RoundMetrics]:
    if config.rounds == 0:
        return []
    state = state or init_state(config, scheduler)
    out: list[RoundMetrics] = []
    while state.t < config.rounds:
        out.append(run_round(state))
        if converged([m.global_loss for m in out], config.convergence_window, config.convergence_tol):
            log.info("global loss converged after %d rounds", len(out))
            break
    return out


def centralized_accuracy(state: SimState, epochs: int = 30, seed: int = 0) -> float:
    """Test accuracy of the same network trained on the pooled training set."""
    cfg = state.config
    widths = [state.train.features.shape[1], *cfg.hidden, NUM_SEVERITIES]
    model = init_model(widths, seed)
    steps = steps_for_epochs(len(state.train), epochs, cfg.batch_size)
    model, _ = local_train(model, state.train.features, state.train.labels, steps, cfg.batch_size, seed, cfg.adam())
    return accuracy(model, state.test.features, state.test.labels)


# --- output -------------------------------------------------------------------------

METRIC_FIELDS = [f.name for f in dataclasses.fields(RoundMetrics)]
_LIST_FIELDS = {"selected_sv_ids", "zeta_values", "vsp_profit_per_type", "sv_profits", "social_welfare_per_type"}


def _fmt(v) -> str:
    if isinstance(v, bool):
        return str(v).lower()
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def emit_metrics(metrics: Sequence[RoundMetrics], path, fmt: str = "csv") -> None:
    """One row (csv) or object (jsonl) per round. List fields are ';'-joined in csv."""
    if fmt not in ("csv", "jsonl"):
        raise ValueError("format must be csv or jsonl")
    try:
        with open(path, "w", newline="") as fh:
            if fmt == "jsonl":
                for m in metrics:
                    fh.write(json.dumps(dataclasses.asdict(m), sort_keys=False) + "\n")
                return
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(METRIC_FIELDS)
            for m in metrics:
                row = dataclasses.asdict(m)
                w.writerow([";".join(_fmt(x) for x in row[k]) if k in _LIST_FIELDS else _fmt(row[k])
                            for k in METRIC_FIELDS])
    except OSError as exc:
        raise OSError(f"cannot write metrics to {path}: {exc}") from exc


def read_metrics_csv(path) -> list[dict[str, Any]]:
    ints = {"round", "num_candidates", "contract_iterations"}
    out = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            rec: dict[str, Any] = {}
            for k, v in row.items():
                if k in _LIST_FIELDS:
                    conv = int if k == "selected_sv_ids" else float
                    rec[k] = [conv(x) for x in v.split(";")] if v else []
                elif k in ints:
                    rec[k] = int(v)
                elif k == "contract_converged":
                    rec[k] = v == "true"
                elif k == "scheduler":
                    rec[k] = v
                else:
                    rec[k] = float(v)
            out.append(rec)
    return out


CONTRACT_TRACE_FIELDS = ["round", "iteration", "sv_id", "type_index", "zeta", "phi", "sv_profit", "vsp_profit"]


def write_contract_trace(rows: Sequence[dict], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CONTRACT_TRACE_FIELDS)
        for r in rows:
            w.writerow([_fmt(r[k]) for k in CONTRACT_TRACE_FIELDS])
