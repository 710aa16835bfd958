"""Exception hierarchy shared across the package."""


class FlowAugError(Exception):
    """Base class for every error raised by flowaug."""


class UsageError(FlowAugError):
    """Bad input supplied by the caller (files, configs, plans). CLI exit code 2."""


class FlowValidationError(UsageError, ValueError):
    pass


class SchemaError(UsageError):
    pass


class EmptyDataset(UsageError):
    pass


class ClassTooSmall(UsageError):
    pass


class ClassNotFound(UsageError, KeyError):
    def __str__(self):
        return Exception.__str__(self)


class InvalidSpec(UsageError):
    pass


class InvalidPlan(UsageError):
    pass


class ConfigError(UsageError):
    pass


class InsufficientSamples(FlowAugError, ValueError):
    pass


class DegenerateSamples(FlowAugError, ValueError):
    pass


class InvalidBandwidth(FlowAugError, ValueError):
    pass


class InvalidRange(FlowAugError, ValueError):
    pass


class ShapeMismatch(FlowAugError, ValueError):
    pass


class NoForwardPass(FlowAugError, RuntimeError):
    pass


class EmptyClass(FlowAugError, ValueError):
    pass


class EmptyCorpus(FlowAugError, ValueError):
    pass


class ModelMissing(FlowAugError, KeyError):
    def __str__(self):
        return Exception.__str__(self)


class InvalidDirection(FlowAugError, ValueError):
    pass


class EmptyStats(FlowAugError, ValueError):
    pass


class InvalidConfig(UsageError, ValueError):
    pass


class EncodingMismatch(FlowAugError, ValueError):
    pass


class LengthMismatch(FlowAugError, ValueError):
    pass


class LabelOutOfRange(FlowAugError, ValueError):
    pass


class ArchiveError(UsageError):
    pass
