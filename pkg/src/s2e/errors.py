"""Exception hierarchy shared across the package."""


class S2EError(Exception):
    """Base class for all package-specific errors."""


class DomainMismatch(S2EError):
    pass


class IllegalColumn(S2EError):
    pass


class WrongPlayer(S2EError):
    pass


class GameOver(S2EError):
    pass


class SteppedTerminal(S2EError):
    pass


class NotInCatalog(S2EError):
    pass


class UnknownSet(S2EError):
    pass


class UnknownToken(S2EError):
    pass


class ShapeMismatch(S2EError):
    pass


class NonFinite(S2EError):
    pass


class BadZ(S2EError):
    pass


class BadK(S2EError):
    pass


class EmptyTestSet(S2EError):
    pass


class EmptyTrace(S2EError):
    pass


class EmptyFold(S2EError):
    pass


class PolicyUnavailable(S2EError):
    pass


class RetrievalUnavailable(S2EError):
    pass


class DivergedValues(S2EError):
    pass


class UnrenderablePattern(S2EError):
    pass


class SchemaVersionMismatch(S2EError):
    pass


class IoError(S2EError):
    pass
