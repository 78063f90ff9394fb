"""Exception hierarchy.

Domain errors derive from :class:`AsipLabError` so the CLI can map them to
exit code 3; :class:`ConfigError` maps to exit code 2.
"""


class AsipLabError(Exception):
    """Base class for all domain errors."""


class OverlapError(AsipLabError, ValueError):
    pass


class DegenerateError(AsipLabError, ValueError):
    pass


class GrazingError(AsipLabError):
    """Tangential collision (the singular set of the collision map)."""


class HorizonError(AsipLabError):
    """No scatterer hit inside the periodic search window."""


class SingularityStraddle(AsipLabError):
    """Finite-difference stencil crosses a singularity curve."""


class TruncatedOrbit(AsipLabError):
    pass


class QuadratureDivergence(AsipLabError):
    pass


class MissingCell(AsipLabError, KeyError):
    pass


class InsufficientSamples(AsipLabError):
    pass


class InsufficientPairs(AsipLabError):
    pass


class SpecError(AsipLabError, ValueError):
    """Malformed observable specification."""


class GammaRangeError(AsipLabError, ValueError):
    pass


class HypothesisError(AsipLabError, ValueError):
    pass


class NonCentered(AsipLabError):
    pass


class DegenerateVariance(AsipLabError):
    pass


class ConfigError(Exception):
    """Invalid experiment configuration; carries the offending field."""

    def __init__(self, message, field=None, line=None):
        self.field = field
        self.line = line
        where = ""
        if field is not None:
            where += f"[{field}] "
        if line is not None:
            where += f"(line {line}) "
        super().__init__(where + message)


class MissingInput(AsipLabError):
    pass
