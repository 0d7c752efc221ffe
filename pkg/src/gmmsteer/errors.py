"""Exception hierarchy shared by every module of the package."""


class GmmSteerError(Exception):
    """Base class for all errors raised by gmmsteer."""


class DegenerateComponentError(GmmSteerError):
    """A Gaussian covariance is singular even after regularization."""

    def __init__(self, index, message=None):
        self.index = index
        super().__init__(message or f"component {index} has a singular covariance")


class SingularityError(GmmSteerError):
    """A drift or Jacobian was evaluated inside a model's singular set."""

    def __init__(self, model_name, message=None):
        self.model_name = model_name
        super().__init__(message or f"{model_name}: state lies in the singular set")


class InfeasibleProblemError(GmmSteerError):
    """The covariance-steering SDP was reported infeasible by the conic solver."""

    def __init__(self, pair=None, status=None):
        self.pair = pair
        self.status = status
        where = f" for pair {pair}" if pair is not None else ""
        super().__init__(
            f"covariance steering SDP infeasible{where} (status={status}); "
            "try a larger noise regularization"
        )


class SolverError(GmmSteerError):
    """A numerical solver failed for reasons other than infeasibility."""

    def __init__(self, message, pair=None, status=None):
        self.pair = pair
        self.status = status
        super().__init__(message)


class UncontrollableError(GmmSteerError):
    """The controllability Gramian of a linear system is rank deficient."""


class InvalidMarginalsError(GmmSteerError):
    """Transport marginals do not sum to one (or to each other)."""


class NoDataError(GmmSteerError):
    """A statistic was requested but no usable samples remain."""


class PipelineError(GmmSteerError):
    """A subproblem of the policy construction failed."""

    def __init__(self, message, pair=None, partial=None):
        self.pair = pair
        self.partial = partial
        super().__init__(message)


class ConfigError(GmmSteerError):
    """A scenario configuration failed schema or invariant checks."""

    def __init__(self, diagnostics):
        self.diagnostics = list(diagnostics)
        super().__init__("; ".join(self.diagnostics))
