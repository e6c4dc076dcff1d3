from .active import ActiveSetReport, active_set, active_set_report
from .ipm import QPSolution, SolverSettings, kkt_residuals, solve
from .problem import LinearRows, QPProblem, QuadTerm, VariableLayout, assemble

__all__ = [
    "ActiveSetReport", "LinearRows", "QPProblem", "QPSolution", "QuadTerm",
    "SolverSettings", "VariableLayout", "active_set", "active_set_report",
    "assemble", "kkt_residuals", "solve",
]
