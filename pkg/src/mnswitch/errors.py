"""Failure taxonomy shared across the package.

ValueError covers validation failures (bad shapes, malformed files,
inconsistent configuration).  NumericalError marks breakdowns of the
arithmetic itself (zero filter mass, non-finite posteriors).
ConvergenceError is raised only when a caller demands converged chains.
"""


class NumericalError(RuntimeError):
    pass


class ConvergenceError(RuntimeError):
    pass
