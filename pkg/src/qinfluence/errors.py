"""Exception types shared across the package."""


class ResourceError(RuntimeError):
    """A computation would exceed a documented size limit."""


class PrecisionError(ValueError):
    """Input data cannot be represented at the requested bit precision."""


class DegeneracyError(ValueError):
    """A geometric estimate is undetermined by its input."""


class SolverError(RuntimeError):
    """The linear-programming backend failed to reach an optimum."""


class UndefinedMetricError(ValueError):
    """A metric is undefined for the given inputs (e.g. a single class)."""


class EstimationError(RuntimeError):
    """No candidate model could be fitted."""


class PipelineError(RuntimeError):
    """Hypothesis sampling failed persistently."""
