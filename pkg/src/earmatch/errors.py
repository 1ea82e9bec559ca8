"""Exception hierarchy shared by all earmatch modules."""


class EarmatchError(Exception):
    """Base class for every error raised by this package."""


class InvalidLandmarkError(EarmatchError):
    """A landmark has non-finite coordinates or an out-of-range label."""


class IncompleteLandmarkSetError(EarmatchError):
    """An operation needed landmark labels that are missing from the set."""


class SizeMismatchError(EarmatchError):
    """An image or landmark frame does not have the expected pixel size."""


class ReframeError(EarmatchError):
    """The landmark bounding box cannot be mapped onto the output frame."""


class EmptyCorpusError(EarmatchError):
    """A corpus load produced zero usable image/landmark pairs."""


class ShapeError(EarmatchError):
    """A tensor fed to a network layer has the wrong shape.

    Carries the name of the offending layer in ``layer``.
    """

    def __init__(self, layer: str, message: str):
        super().__init__(f"{layer}: {message}")
        self.layer = layer


class TrainingDivergedError(EarmatchError):
    """Training hit a non-finite loss.

    ``checkpoint`` holds the last parameter snapshot that produced finite
    losses (taken at the preceding epoch boundary) and ``history`` the
    epochs completed before the abort.
    """

    def __init__(self, message: str, checkpoint=None, history=None):
        super().__init__(message)
        self.checkpoint = checkpoint
        self.history = history


class ModelFormatError(EarmatchError):
    """A model container file is truncated, corrupt, or of an unknown version."""


class CalibrationDegenerateError(EarmatchError):
    """A conversion factor would require dividing by a non-positive pixel distance."""


class CalibrationFormatError(EarmatchError):
    """A calibration or factors CSV has a malformed header or row."""


class DatabaseFormatError(EarmatchError):
    """An anthropometric database CSV has a malformed or duplicate row."""


class EmptyDatabaseError(EarmatchError):
    """A match was requested against a database with no records."""


class NoHrtfAttachedError(EarmatchError):
    """The matched record carries no HRTF file reference."""


class HrtfNotFoundError(EarmatchError):
    """The matched record's HRTF reference points at a missing local file."""


class StlError(EarmatchError):
    """Base class for STL parsing failures."""


class StlFormatError(StlError):
    """The file is neither a parseable ASCII nor a plausible binary STL."""


class CorruptStlError(StlError):
    """The STL declares more data than the file contains (or vice versa)."""


class EmptyMeshError(EarmatchError):
    """A render was requested for a mesh with no triangles."""


class AnnotationFormatError(EarmatchError):
    """An annotation document or file failed validation."""


class ConfigError(EarmatchError):
    """A pipeline configuration file or flag is invalid."""
