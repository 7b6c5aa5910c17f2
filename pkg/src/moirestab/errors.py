"""Exception types shared across the toolkit."""


class MoirestabError(Exception):
    """Base class for all toolkit errors."""


class SingularMoire(MoirestabError):
    """A1^-1 - A2^-1 is numerically singular (zero twist or degenerate pair)."""


class NotLatticePoint(MoirestabError):
    """A point claimed to be a lattice point deviates from integer coordinates."""


class NoClosedForm(MoirestabError):
    """No closed-form curvature formula exists for this potential family."""


class QuadratureNotConverged(MoirestabError):
    """A quadrature error estimate stalled above the requested tolerance."""


class NoRootInBracket(MoirestabError):
    """Sign-transition search found no root in the supplied bracket."""


class CutoffTooSmall(MoirestabError):
    """Lattice-sum cutoff leaves a tail above the requested tolerance."""


class NotConverged(MoirestabError):
    """An iterative solver stopped before reaching its tolerance."""


class ConfigInvalid(MoirestabError):
    """A run configuration failed validation.

    The message names the offending key path.
    """

    def __init__(self, key_path, message):
        self.key_path = key_path
        super().__init__(f"{key_path}: {message}")
