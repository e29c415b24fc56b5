"""Exception hierarchy.

Every error carries a stable machine-readable ``code`` (the class name) and a
``kind`` used by the command line to pick an exit status: ``"data"`` for bad
input, ``"numerical"`` for failures inside the linear algebra.
"""


class CspNmaError(Exception):
    kind = "data"

    @property
    def code(self) -> str:
        return type(self).__name__


class InvalidMatrix(CspNmaError):
    kind = "numerical"


class DimError(CspNmaError):
    pass


class MalformedStudy(CspNmaError):
    pass


class NonPsdStudy(MalformedStudy):
    pass


class DisconnectedNetwork(CspNmaError):
    pass


class UnknownContrast(CspNmaError):
    pass


class TauNotEstimable(CspNmaError):
    pass


class DegenerateInformation(CspNmaError):
    kind = "numerical"


class NotInConsistencySubspace(CspNmaError):
    kind = "numerical"


class DecompositionFailure(CspNmaError):
    kind = "numerical"


class EmptyTarget(CspNmaError):
    pass
