"""Exception types raised across the engine.

Every error the engine can raise deliberately derives from DproxyError so the
CLI can map them onto exit codes: validation problems (bad files, bad flags,
bad shapes) exit 1, everything unexpected exits 2.
"""


class DproxyError(Exception):
    """Base class for all deliberate engine errors."""


class ValidationError(DproxyError):
    """Input or configuration rejected before any computation ran."""


# ---- ioformats ----

class BadMagic(ValidationError):
    pass


class TruncatedFile(ValidationError):
    pass


class NonFiniteValue(ValidationError):
    pass


class ZeroNormRow(ValidationError):
    pass


class SchemaError(ValidationError):
    pass


class DimensionMismatch(ValidationError):
    pass


class LabelOutOfRange(ValidationError):
    pass


class EmptyClass(ValidationError):
    pass


class IoError(DproxyError):
    pass


# ---- diffmath ----

class ShapeMismatch(ValidationError):
    pass


class NonFiniteDetected(DproxyError):
    pass


# ---- proxy / losses ----

class EmptyCandidateSet(ValidationError):
    pass


class BatchTooSmall(ValidationError):
    pass


# ---- clustering ----

class TooFewPoints(ValidationError):
    pass


class ZeroNormCentroid(ValidationError):
    pass


# ---- metrics ----

class LengthMismatch(ValidationError):
    pass


# ---- trainer ----

class ConfigInvalid(ValidationError):
    pass


class NonFiniteLoss(DproxyError):
    def __init__(self, message, epoch=None, batch=None):
        super().__init__(message)
        self.epoch = epoch
        self.batch = batch


class PerspectiveUnknown(ValidationError):
    pass


# ---- synth ----

class SpecInvalid(ValidationError):
    pass
