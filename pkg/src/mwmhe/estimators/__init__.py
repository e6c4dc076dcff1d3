from .fie import fie_problem, fie_solve, fie_trajectory
from .mhe import mhe_run, mhe_step
from .mwmhe import MWContext, mwmhe_run, mwmhe_step
from .series import EstimateSeries, StepResult
from .stages import ArrivalCost, StageBuilder, arrival_cost
from .windows import (
    FixedWindow, SmootherStep, UnconstrainedWindow, WindowLedger,
    build_fixed_cost, build_unconstrained_cost,
)

__all__ = [
    "ArrivalCost", "EstimateSeries", "FixedWindow", "MWContext", "SmootherStep",
    "StageBuilder", "StepResult", "UnconstrainedWindow", "WindowLedger", "arrival_cost",
    "build_fixed_cost", "build_unconstrained_cost", "fie_problem", "fie_solve",
    "fie_trajectory", "mhe_run", "mhe_step", "mwmhe_run", "mwmhe_step",
]
