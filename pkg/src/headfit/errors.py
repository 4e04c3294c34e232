"""Exception hierarchy shared across the package.

Every error carries a stable ``code`` (the class name) so the service can
return machine-readable error payloads.
"""


class HeadfitError(Exception):
    @property
    def code(self) -> str:
        return type(self).__name__


class DimensionMismatch(HeadfitError):
    pass


class DegenerateInput(HeadfitError):
    pass


class UnknownSubset(HeadfitError):
    pass


class InvalidCounts(HeadfitError):
    pass


class DegenerateExtent(HeadfitError):
    pass


class BehindCamera(HeadfitError):
    pass


class EmptyPins(HeadfitError):
    pass


class SingularSystem(HeadfitError):
    pass


class DegenerateConfiguration(HeadfitError):
    pass


class InvalidN(HeadfitError):
    pass


class TooFewAnnotators(HeadfitError):
    pass


class MissingAttribute(HeadfitError):
    pass


class NoFaces(HeadfitError):
    pass


class ParseError(HeadfitError):
    pass


class SchemaMismatch(HeadfitError):
    pass


class ChecksumMismatch(HeadfitError):
    pass


class UnknownModel(HeadfitError):
    pass


class UnknownSession(HeadfitError):
    pass


class InvalidVertex(HeadfitError):
    pass


class UnknownPin(HeadfitError):
    pass


class ConflictingRevision(HeadfitError):
    pass
