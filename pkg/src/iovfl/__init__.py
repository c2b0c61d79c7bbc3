"""Federated learning over vehicular networks with location- and information-aware
vehicle recruitment and a multi-principal contract game for payments."""

from .areas import AreaPartition, kmeans_binary, total_aadf
from .contracts import (
    ContractGrid, ContractMenu, EquilibriumResult, PaymentProportions, SvCost, VSPProfile,
    check_monotonicity, iterate_to_equilibrium, solve_payment_proportions, verify_ir_ic,
)
from .ingestion import AccidentRecord, AreaRecord, SynthConfig, parse_accident_csv, parse_aadf_csv, synth_generate
from .sim import RoundMetrics, Scheduler, SimConfig, emit_metrics, run_experiment, run_round

__version__ = "0.1.0"
