"""Exception types shared across the package."""


class AlphaLabError(Exception):
    """Base class for all package-specific errors."""


class UnsupportedDimensionError(AlphaLabError):
    """Manifold dimension outside the supported range."""


class UnknownCatalogError(AlphaLabError):
    """Requested metric, map, or field kind is not in the built-in catalog."""


class MetricError(AlphaLabError):
    """Catalog metric parameters give a non-positive-definite metric."""


class AlphaRangeError(AlphaLabError):
    """The exponent must be a constant greater than one."""


class DegenerateMapError(AlphaLabError):
    """Map differential has (numerically) nontrivial kernel."""


class PreconditionError(AlphaLabError):
    """An operation's stated precondition is violated."""


class IntegrationError(AlphaLabError):
    """NaN or other failure inside quadrature."""


class SolverError(AlphaLabError):
    """Iterative solver failed to converge; carries the final residual."""


class ConfigError(AlphaLabError):
    """Scenario configuration failed schema validation."""
