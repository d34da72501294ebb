"""Exception hierarchy shared by all rootlab modules."""


class RootlabError(Exception):
    """Base class for all rootlab errors."""


class ConfigError(RootlabError):
    """Malformed experiment configuration (unknown key, bad value, bad file)."""


class OutOfValidatedRegion(RootlabError):
    """Evaluation point lies outside the truncation-validated region."""


class DivergentRegion(RootlabError):
    """Requested region touches or crosses the boundary of convergence."""


class DegenerateAllZero(RootlabError):
    """Every polynomial coefficient is zero; roots are undefined."""


class NoConvergence(RootlabError):
    """Both the simultaneous iteration and the eigenvalue fallback failed."""


class RegionNotCovered(RootlabError):
    """Query region is not contained in the region the roots were computed on."""


class ArityMismatch(RootlabError):
    """Test-function arity does not match the requested tuple shape."""


class QuadratureFailure(RootlabError):
    """Adaptive quadrature could not reach the requested tolerance."""


class AllZeroCoefficients(RootlabError):
    """A closed form needs at least one nonzero deterministic coefficient."""


class UnsupportedRegion(RootlabError):
    """Region descriptor has no computable area for this operation."""


class UnsupportedFamily(RootlabError):
    """The ensemble family has no real Gaussian version on the real line."""


class DegenerateZeroFunction(RootlabError):
    """Grid maximum of |f| underflowed; the function is numerically zero."""


class GridTooCoarse(RootlabError):
    """Successive grid refinements disagree by more than the allowed factor."""


class NumericFailureBudget(RootlabError):
    """More than the allowed fraction of Monte Carlo trials failed."""
