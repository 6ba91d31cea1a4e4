"""Exception types raised across the recommendation pipeline."""


class MptcfError(Exception):
    """Base class for all package errors."""


class EmptyHistory(MptcfError):
    """Fewer than two return periods were supplied."""


class NonFiniteInput(MptcfError):
    """A return, price or market value is NaN or infinite."""


class DimensionMismatch(MptcfError, ValueError):
    """Array shapes disagree."""


class SolverDivergence(MptcfError):
    """The portfolio solver hit its iteration cap without converging."""

    def __init__(self, message, gamma=None):
        super().__init__(message)
        self.gamma = gamma


class NoValidDays(MptcfError):
    """Every day of the estimation window has an empty portfolio."""


class InvalidCutoff(MptcfError, ValueError):
    """The CF cutoff k is outside [1, n]."""


class ParseError(MptcfError):
    """An input file is malformed."""

    def __init__(self, message, path=None, line=None):
        where = ""
        if path is not None:
            where = f"{path}"
            if line is not None:
                where += f":{line}"
            where += ": "
        super().__init__(where + message)
        self.path = path
        self.line = line


class UniverseMismatch(MptcfError):
    """Price and snapshot files share no assets."""
