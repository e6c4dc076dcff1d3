"""Exception hierarchy shared by all modules."""


class MWMHEError(Exception):
    """Base class for every error raised by this package."""


class StructuralError(MWMHEError, ValueError):
    """Matrix dimensions are mutually inconsistent."""


class InfeasibleDynamicsError(MWMHEError):
    """The descriptor equation has no solution at some simulation step."""

    def __init__(self, step, residual):
        super().__init__(f"inconsistent dynamics at step {step} (residual {residual:.3e})")
        self.step = step
        self.residual = residual


class SingularUpdateError(MWMHEError, ArithmeticError):
    """A matrix that must be SPD could not be factorized."""


class DivergenceError(MWMHEError):
    """Riccati iteration or an estimator run failed to settle."""


class SelectionError(MWMHEError):
    """The coupling bound cannot be met within the allowed lag."""

    def __init__(self, bound, q_max, achieved):
        super().__init__(
            f"coupling bound {bound:g} not reached within {q_max} steps "
            f"(achieved {achieved:.6g})"
        )
        self.bound = bound
        self.q_max = q_max
        self.achieved = achieved


class QPError(MWMHEError):
    """Base class for solver failures."""


class MaxIterationsError(QPError):
    pass


class NumericalFailureError(QPError, ArithmeticError):
    pass


class InfeasibleProblemError(QPError):
    pass


class LedgerError(MWMHEError):
    """Window bookkeeping became inconsistent."""


class ConfigError(MWMHEError, ValueError):
    """Experiment configuration failed to parse or validate."""
