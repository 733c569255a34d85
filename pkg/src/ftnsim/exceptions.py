"""Exception types raised by ftnsim."""


class ParameterError(ValueError):
    """An argument is outside its valid domain."""


class FactorizationError(ArithmeticError):
    """The ISI sequence cannot be split into a causal minimum-phase factor."""


class RankError(ArithmeticError):
    """A least-squares system is rank deficient."""

    def __init__(self, message, deficient_dim=None):
        super().__init__(message)
        self.deficient_dim = deficient_dim


class BudgetError(RuntimeError):
    """An exhaustive search would exceed its evaluation budget."""


class SearchError(RuntimeError):
    """Every start of a numerical search failed."""


class SingularityError(ArithmeticError):
    """An equalizer system matrix is singular."""


class FramingError(ValueError):
    """Bit or symbol counts do not fit the frame or puncturing layout."""


class ConfigError(ValueError):
    """Invalid experiment configuration."""
