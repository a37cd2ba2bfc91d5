"""Exception types shared across modules.

Input problems raise plain ValueError / OSError; these classes mark
numerical failures so the CLI can map them to its exit-code contract
(2 = input error, 1 = numerical failure).
"""


class NumericalError(Exception):
    """Base class for numerical failures (exit code 1 at the CLI)."""


class RankDeficiencyError(NumericalError):
    def __init__(self, message, columns=None):
        super().__init__(message)
        self.columns = columns or []


class NonConvergenceError(NumericalError):
    pass


class AiccUndefinedError(NumericalError):
    pass
