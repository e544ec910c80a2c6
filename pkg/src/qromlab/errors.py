"""Exception types shared across the package."""


class QromlabError(Exception):
    """Base class for all package-specific errors."""


class DomainError(QromlabError, ValueError):
    """An argument is outside the domain an operation is defined on."""


class DimensionMismatchError(QromlabError, ValueError):
    """Operator and register dimensions do not line up."""


class NonUnitaryError(QromlabError, ValueError):
    """A matrix that must be unitary is not, beyond tolerance."""


class ZeroProbabilityError(QromlabError):
    """Post-selection on a branch whose probability is numerically zero."""


class LayoutError(QromlabError, ValueError):
    """A register layout is malformed or a register name cannot be resolved."""


class CapacityError(QromlabError):
    """A state or trace would exceed the configured size cap."""


class ProtocolShapeError(QromlabError, ValueError):
    """A protocol description violates a structural requirement."""


class UnsupportedProtocolError(QromlabError):
    """The requested operation is outside the model this code supports."""


class ReplayMismatchError(QromlabError):
    """A recomputed quantity disagrees with the recorded one."""
