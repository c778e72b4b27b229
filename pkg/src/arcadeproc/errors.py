"""Exception hierarchy shared across the package.

Every error raised by the library derives from :class:`ArcadeError` so CLI
and test code can map failures to exit codes without string matching.
"""


class ArcadeError(Exception):
    """Base class for all library errors."""


class ConfigError(ArcadeError):
    """Invalid configuration: bad partition, unknown family, grid mismatch."""


class DomainError(ArcadeError):
    """A time or probability argument lies outside its admissible range."""


class DegenerateError(ArcadeError):
    """An operation hit a zero-variance state where its formula is undefined."""


class NumericError(ArcadeError):
    """A numerical routine failed to converge or produced non-finite output."""


class InfeasibleError(ArcadeError):
    """A transport problem has an empty feasible set.

    Carries an optional human-readable witness (e.g. the violated call-function
    inequality) in :attr:`witness`.
    """

    def __init__(self, message: str, witness: dict | None = None):
        super().__init__(message)
        self.witness = witness or {}


class UnboundedError(ArcadeError):
    """A linear program is unbounded below."""
