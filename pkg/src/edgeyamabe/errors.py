"""Exception hierarchy shared by all subpackages."""


class EdgeYamabeError(Exception):
    """Base class for every error raised by this package."""


class DomainError(EdgeYamabeError, ValueError):
    """A geometric quantity was requested outside its domain of definition."""


class PositivityError(EdgeYamabeError, ValueError):
    """A conformal factor that must be strictly positive is not."""


class AssemblyError(EdgeYamabeError):
    """The discrete operator could not be assembled."""


class DominanceError(EdgeYamabeError):
    """A tridiagonal system failed the diagonal dominance check."""


class SingularPivotError(EdgeYamabeError):
    """The tridiagonal elimination hit a zero pivot."""


class ConvergenceError(EdgeYamabeError):
    """An iterative method did not reach its tolerance."""


class DivergenceError(EdgeYamabeError):
    """A descent method kept increasing its objective."""


class HypothesisError(EdgeYamabeError, ValueError):
    """The input violates a hypothesis the requested check relies on."""


class InsufficientDataError(EdgeYamabeError, ValueError):
    """Too few samples for a fit."""


class ConfigError(EdgeYamabeError):
    """Configuration file could not be parsed or validated.

    ``problems`` lists every violation found, not just the first one.
    """

    def __init__(self, problems, line=None):
        if isinstance(problems, str):
            problems = [problems]
        self.problems = list(problems)
        self.line = line
        head = f"line {line}: " if line is not None else ""
        super().__init__(head + "; ".join(self.problems))
