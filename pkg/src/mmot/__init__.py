"""Entropic multi-period martingale optimal transport on one-dimensional grids."""
from .grid import Grid, SparseGridConfig, make_sparse, make_uniform
from .marginals import (
    CalibrationConfig,
    Marginal,
    MarginalSequence,
    ModelParams,
    OptionQuote,
    calibrate,
    check_convex_order,
    generate,
)
from .reference import ReferenceChain, build_reference
from .solver import (
    CostSpec,
    DualPotentials,
    SolveReport,
    SolverConfig,
    TransportPlan,
    solve,
)
from .decoupled import solve_decoupled
from .pricing import PayoffSpec, PriceBounds, TransactionCostSpec, price_bounds, widen
from .hedging import build_policy, simulate_hedge
from .incremental import IncrementalConfig, append_period
from .oracle import TinyInstance, lp_bounds
from .estimators import BoundPricer, MarginalCalibrator, MartingaleSinkhorn, SparseGridBuilder

__all__ = [
    "Grid", "SparseGridConfig", "make_sparse", "make_uniform",
    "CalibrationConfig", "Marginal", "MarginalSequence", "ModelParams", "OptionQuote",
    "calibrate", "check_convex_order", "generate",
    "ReferenceChain", "build_reference",
    "CostSpec", "DualPotentials", "SolveReport", "SolverConfig", "TransportPlan", "solve",
    "solve_decoupled",
    "PayoffSpec", "PriceBounds", "TransactionCostSpec", "price_bounds", "widen",
    "build_policy", "simulate_hedge",
    "IncrementalConfig", "append_period",
    "TinyInstance", "lp_bounds",
    "BoundPricer", "MarginalCalibrator", "MartingaleSinkhorn", "SparseGridBuilder",
]
