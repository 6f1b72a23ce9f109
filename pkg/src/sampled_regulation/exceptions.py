"""Exception types shared across the package."""


class RegulationError(Exception):
    """Base class for all package errors."""


class DimensionError(RegulationError, ValueError):
    """Matrix shapes are mutually inconsistent."""


class SamplingError(RegulationError, ValueError):
    """A sampling sequence violates the dwell-time / MATI bounds.

    ``index`` is the position of the offending gap (gap ``k`` lies between
    ``times[k-1]`` and ``times[k]``, with ``times[-1] := 0``).
    """

    def __init__(self, message, index=None):
        super().__init__(message)
        self.index = index


class FrancisError(RegulationError):
    """Regulator equations are resonant and inconsistent."""

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class InternalModelError(RegulationError, ValueError):
    pass


class LmiInfeasibleError(RegulationError):
    """Raised by :func:`sampled_regulation.lmi.solve_feasibility`.

    Attributes
    ----------
    reason : str
        ``"infeasible"``, ``"iteration-limit"`` or ``"numerical"``.
    best_values : dict or None
        Best primal iterate returned by the solver, by variable name.
    worst_margin : float or None
        Worst (most violated) normalized margin of ``best_values``.
    """

    def __init__(self, message, reason="infeasible", best_values=None,
                 worst_margin=None, worst_constraint=None):
        super().__init__(message)
        self.reason = reason
        self.best_values = best_values
        self.worst_margin = worst_margin
        self.worst_constraint = worst_constraint


class IllConditionedError(RegulationError):
    pass


class SynthesisError(RegulationError):
    """A design pipeline could not produce a certified regulator."""

    def __init__(self, message, worst_margin=None, hyperparams=None):
        super().__init__(message)
        self.worst_margin = worst_margin
        self.hyperparams = hyperparams or {}


class NotHurwitzError(SynthesisError):
    def __init__(self, message, eigenvalue=None):
        super().__init__(message)
        self.eigenvalue = eigenvalue


class SimulationError(RegulationError):
    pass
