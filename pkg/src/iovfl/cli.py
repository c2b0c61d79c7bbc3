"""Command line entry point: ``iovfl simulate | classify-areas | verify-contracts | gen-synth``."""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import contracts as ct
from .areas import kmeans_binary, total_aadf, write_partition_csv
from .ingestion import SynthConfig, parse_aadf_csv, synth_generate, write_accident_csv, write_aadf_csv
from .schema import ColumnMapping
from .sim import SCHEDULERS, SimConfig, emit_metrics, run_experiment, write_contract_trace, init_state

log = logging.getLogger("iovfl")


def _cmd_simulate(args) -> int:
    config = SimConfig.load(args.config) if args.config else SimConfig()
    if args.seed is not None:
        config = config.replace(seed=args.seed)
    if args.rounds is not None:
        config = config.replace(rounds=args.rounds)
    state = init_state(config, args.scheduler)
    metrics = run_experiment(config, args.scheduler, state)
    out = Path(args.out or f"metrics_{state.scheduler.kind}.{args.format}")
    emit_metrics(metrics, out, args.format)
    if args.contract_trace:
        write_contract_trace(state.contract_log, args.contract_trace)
    unconverged = [m.round for m in metrics if not m.contract_converged]
    print(f"{len(metrics)} rounds written to {out}; final accuracy "
          f"{metrics[-1].accuracy:.4f}" if metrics else f"0 rounds written to {out}")
    if unconverged:
        print(f"contract iteration did not converge in rounds {unconverged}", file=sys.stderr)
        if args.strict:
            return 2
    return 0


def _cmd_classify_areas(args) -> int:
    mapping = ColumnMapping.load(args.mapping) if args.mapping else None
    parsed = parse_aadf_csv(args.aadf, mapping)
    partition = kmeans_binary(total_aadf(parsed.records), seed=args.seed)
    if args.out:
        write_partition_csv(partition, args.out)
    print(f"{parsed.rows_read} rows read, {parsed.skipped} skipped")
    print(f"{len(partition.assignments)} areas: {len(partition.significant)} significant, "
          f"centroids {partition.centroid_low:.3f} / {partition.centroid_high:.3f}, "
          f"{partition.iterations} iterations")
    return 0


def _cmd_verify_contracts(args) -> int:
    rng = np.random.default_rng(args.seed)
    failures = 0
    print(f"{'inst':>4} {'N':>3} {'sweeps':>6} {'conv':>5} {'worst IR':>10} {'true IC':>10} "
          f"{'pair IC':>10} {'mono':>5}")
    for i in range(args.instances):
        N = int(rng.choice(args.N))
        menus, profile, costs = ct.random_instance(rng, N, args.J, float(rng.choice(args.budget_max)))
        grid = ct.ContractGrid(levels_per_dim=args.levels, anticipate=not args.fixed_proportions)
        eq = ct.iterate_to_equilibrium(menus, profile, costs, grid)
        rep = ct.verify_ir_ic(eq.menus, eq.proportions, profile)
        mono = ct.check_monotonicity(eq.menus, eq.proportions, profile)
        true_ic = np.nanmin(rep.ic_margins[profile.true_row]) if profile.J > 1 else 0.0
        ok = rep.worst_ir >= -ct.VERIFY_TOL and true_ic >= -ct.VERIFY_TOL and mono.passed
        failures += not ok
        print(f"{i:>4} {N:>3} {eq.iterations:>6} {str(eq.converged):>5} {rep.worst_ir:>10.4f} "
              f"{true_ic:>10.4f} {rep.worst_ic:>10.4f} {str(mono.passed):>5}")

    oracle_hits = no_nash = 0
    for i in range(args.oracle_instances):
        menus, profile, costs = ct.random_instance(rng, 2, 2, float(rng.uniform(5.0, 40.0)))
        grid = ct.ContractGrid(levels_per_dim=5, anticipate=not args.fixed_proportions)
        eq = ct.iterate_to_equilibrium(menus, profile, costs, grid)
        got = eq.sv_profits(profile, costs)
        nash = ct.brute_force_equilibrium(menus, profile, costs, grid)
        if not nash and eq.cycled:
            no_nash += 1  # nothing to match; the sweeps correctly report a cycle
            continue
        oracle_hits += any(np.max(np.abs(p - got)) <= grid.gamma for _, p in nash)
    if args.oracle_instances:
        print(f"oracle: {oracle_hits}/{args.oracle_instances - no_nash} equilibria match a brute-force "
              f"Nash profile; {no_nash} instances have no pure equilibrium on the grid (cycle reported)")
    failures += args.oracle_instances - no_nash - oracle_hits
    print("PASS" if failures == 0 else f"FAIL ({failures} problems)")
    return 0 if failures == 0 else 1


def _cmd_gen_synth(args) -> int:
    cfg = SynthConfig(num_areas=args.areas, num_locations=args.locations, num_samples=args.samples,
                      significant_fraction=args.significant_fraction, seed=args.seed)
    areas, accidents = synth_generate(cfg)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_aadf_csv(areas, out / "aadf.csv")
    write_accident_csv(accidents, out / "accidents.csv")
    print(f"wrote {len(areas)} AADF rows and {len(accidents)} accident rows to {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="iovfl", description=__doc__)
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="run one experiment and write per-round metrics")
    s.add_argument("--config", help="YAML file of SimConfig fields")
    s.add_argument("--scheduler", default="location_info_significance",
                   choices=[*SCHEDULERS, "rr", "ls", "lis"])
    s.add_argument("--seed", type=int)
    s.add_argument("--rounds", type=int, help="override the config's round limit")
    s.add_argument("--out", help="metrics file (default metrics_<scheduler>.<format>)")
    s.add_argument("--format", choices=["csv", "jsonl"], default="csv")
    s.add_argument("--contract-trace", help="also write every round's equilibrium menus to this CSV")
    s.add_argument("--strict", action="store_true", help="exit nonzero if any contract iteration fails to converge")
    s.set_defaults(func=_cmd_simulate)

    c = sub.add_parser("classify-areas", help="split areas into significant/insignificant by traffic volume")
    c.add_argument("aadf", help="AADF CSV file")
    c.add_argument("--mapping", help="YAML column mapping for non-canonical exports")
    c.add_argument("--out", help="write the partition as CSV")
    c.add_argument("--seed", type=int, default=0)
    c.set_defaults(func=_cmd_classify_areas)

    v = sub.add_parser("verify-contracts", help="check equilibrium contracts on random instances")
    v.add_argument("--instances", type=int, default=20)
    v.add_argument("--oracle-instances", type=int, default=10)
    v.add_argument("--seed", type=int, default=0)
    v.add_argument("--N", type=int, nargs="+", default=[5, 10])
    v.add_argument("--J", type=int, default=10)
    v.add_argument("--budget-max", type=float, nargs="+", default=[125.0, 250.0])
    v.add_argument("--levels", type=int, default=21)
    v.add_argument("--fixed-proportions", action="store_true",
                   help="score candidate menus at the current purchase instead of the re-optimised one")
    v.set_defaults(func=_cmd_verify_contracts)

    g = sub.add_parser("gen-synth", help="write synthetic AADF and accident CSVs")
    g.add_argument("out_dir")
    g.add_argument("--areas", type=int, default=190)
    g.add_argument("--locations", type=int, default=20)
    g.add_argument("--samples", type=int, default=20_000)
    g.add_argument("--significant-fraction", type=float, default=0.5)
    g.add_argument("--seed", type=int, default=0)
    g.set_defaults(func=_cmd_gen_synth)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (OSError, ValueError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
