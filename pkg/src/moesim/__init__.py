"""Circuit scheduling and dispatch-compute-combine simulation for MoE all-to-all traffic."""

__version__ = "0.1.0"

from .assignment import Permutation, max_weight_assignment, support_perfect_matching
from .costmodel import ComputeModel, NetworkModel, compute_time, load_profile, matching_time, wire_time
from .decompose import (
    Matching,
    Schedule,
    bvn_allocate,
    bvn_decompose,
    bvn_normalize,
    bvn_schedule,
    greedy_maxweight,
    order_schedule,
)
from .simulator import SimReport, Strategy, run_matrix_suite, simulate
from .sinkhorn import BistochasticMatrix, normalize
from .traffic import (
    ExpertPlacement,
    RoutingTrace,
    TrafficMatrix,
    build_matrix,
    gen_synthetic,
    load_trace,
    transpose,
)

__all__ = [
    "BistochasticMatrix",
    "ComputeModel",
    "ExpertPlacement",
    "Matching",
    "NetworkModel",
    "Permutation",
    "RoutingTrace",
    "Schedule",
    "SimReport",
    "Strategy",
    "TrafficMatrix",
    "build_matrix",
    "bvn_allocate",
    "bvn_decompose",
    "bvn_normalize",
    "bvn_schedule",
    "compute_time",
    "gen_synthetic",
    "greedy_maxweight",
    "load_profile",
    "load_trace",
    "matching_time",
    "max_weight_assignment",
    "normalize",
    "order_schedule",
    "run_matrix_suite",
    "simulate",
    "support_perfect_matching",
    "transpose",
    "wire_time",
]
