"""Constrained state estimation for linear descriptor systems.

Full-information estimation, moving horizon estimation with an unconstrained
arrival cost, and the multiple-window variant that keeps past constrained
stretches in the problem while eliminating the unconstrained ones.
"""
from .dkf import (
    DescriptorKalmanFilter, FilterState, Propagator, RiccatiSolution, coupling_norm,
    coupling_norms, kalman_filter, riccati_steady_state, select_horizon,
)
from .estimators import (
    ArrivalCost, EstimateSeries, WindowLedger, arrival_cost, fie_solve, mhe_run, mwmhe_run,
)
from .model import (
    ConstraintSet, DescriptorSystem, MeasurementRecord, Prior, Trajectory, simulate,
    validate_system,
)

__version__ = "0.1.0"

__all__ = [
    "ArrivalCost", "ConstraintSet", "DescriptorKalmanFilter", "DescriptorSystem",
    "EstimateSeries", "FilterState", "MeasurementRecord", "Prior", "Propagator",
    "RiccatiSolution", "Trajectory", "WindowLedger", "arrival_cost", "coupling_norm",
    "coupling_norms", "fie_solve", "kalman_filter", "mhe_run", "mwmhe_run",
    "riccati_steady_state", "select_horizon", "simulate", "validate_system",
]
