"""Exception and warning types shared across the package."""


class FedVaeError(Exception):
    """Base class for all errors raised by this package."""


# trajectory data

class MalformedRecord(FedVaeError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class OutOfRangeCoordinate(FedVaeError):
    pass


class InvertedInterval(FedVaeError):
    pass


class EmptyTrajectory(FedVaeError):
    pass


class MissingLabel(FedVaeError):
    pass


class FormatError(FedVaeError):
    """A binary container could not be decoded."""


class NonMonotonicTime(UserWarning):
    pass


class ClampedPoints(UserWarning):
    pass


# autodiff engine

class ShapeMismatch(FedVaeError):
    pass


class NonFiniteValue(FedVaeError):
    pass


class AllMasked(FedVaeError):
    pass


class GraphConsumed(FedVaeError):
    pass


class MissingGradient(FedVaeError):
    pass


# training / federation

class EmptyDataset(FedVaeError):
    pass


class TooFewSegments(FedVaeError):
    pass


class SchemaMismatch(FedVaeError):
    pass


class EmptyUpdateSet(FedVaeError):
    pass


class NotConverged(FedVaeError):
    def __init__(self, message, rounds=None):
        self.rounds = rounds
        super().__init__(message)


class ClientTrainingError(FedVaeError):
    def __init__(self, client_id, cause):
        self.client_id = client_id
        super().__init__(f"client {client_id!r}: {cause}")


# anonymizers / evaluation

class NoZoneFound(UserWarning):
    pass


class InsufficientNonsensitivePoints(FedVaeError):
    pass


class NoOverlap(FedVaeError):
    pass


class MissingLinkage(FedVaeError):
    pass


# driver

class UnknownMethod(FedVaeError):
    pass


class MissingInput(FedVaeError):
    pass


class ConfigError(FedVaeError):
    pass
