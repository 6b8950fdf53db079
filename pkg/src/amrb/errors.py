"""Exception types shared across the solver and reduction pipeline."""

from __future__ import annotations


class AmrbError(Exception):
    """Base class for library failures.

    Keyword arguments are kept in ``info`` so callers can attach context
    (residuals, step indices, achieved basis sizes, partial results)
    without changing the exception signature.
    """

    def __init__(self, message: str, **info):
        super().__init__(message)
        self.info = info


class AssemblyError(AmrbError):
    """Operator assembly produced a matrix that is not usable (e.g. not SPD)."""


class SolverDivergenceError(AmrbError):
    """Active-set iteration did not settle within the iteration budget."""


class NumericalBreakdownError(AmrbError):
    """A linear subsystem inside an iteration turned out singular."""


class IllConditionedBasisError(AmrbError):
    """A projection basis is too close to linearly dependent to use."""


class DegenerateInputError(AmrbError):
    """Input vectors vanish in the relevant norm; the operation is undefined."""


class SaturationError(AmrbError):
    """A greedy loop ran out of usable snapshot directions.

    ``info['achieved']`` holds the basis size reached; the partial result
    is carried alongside so pipelines can keep going with what was built.
    """

    @property
    def achieved(self) -> int:
        return int(self.info.get("achieved", 0))


class BasisSaturationError(SaturationError):
    """Primal snapshot set exhausted before the requested basis size."""


class ConeSaturationError(SaturationError):
    """Multiplier snapshot set exhausted before the requested cone size."""


class InfSupFailureError(AmrbError):
    """Reduced primal-dual coupling lost full column rank."""


class ModelCorruptionError(AmrbError):
    """A reduced model violates its structural invariants."""


class ModelLoadError(AmrbError):
    """A model file is missing fields, malformed, or inconsistent."""


class ModelVersionError(ModelLoadError):
    """A model file carries an unsupported schema version."""
