"""Exception hierarchy shared across the package.

Every failure mode that callers are expected to handle gets its own class;
all inherit from PathoscopeError so a CLI can catch one thing.
"""


class PathoscopeError(Exception):
    """Base class for all pathoscope errors."""


# --- tensor / layer errors ---

class ShapeMismatchError(PathoscopeError):
    """Operand shapes are inconsistent with the operation's contract."""


class IndexOutOfRangeError(PathoscopeError):
    """A routing index refers outside the tensor it indexes."""


class NonFiniteTensorError(PathoscopeError):
    """A tensor holds NaN or Inf where only finite values are allowed."""


# --- patch pipeline errors ---

class FactorTooLargeError(PathoscopeError):
    """Downsampling would leave the raster smaller than a patch."""


class SamplingExhaustedError(PathoscopeError):
    """Negative-window rejection sampling gave up (image saturated with objects)."""


class NoPositivesError(PathoscopeError):
    """An operation that needs positive patches got none."""


class NotSquareError(PathoscopeError):
    """Dihedral augmentation requires a square patch."""


class CorpusTooSmallError(PathoscopeError):
    """Too few images to split."""


# --- model errors ---

class PatchTooSmallError(PathoscopeError):
    """Patch size too small for the fixed layer stack."""


class SingleClassDatasetError(PathoscopeError):
    """Training data contains only one class."""


class DivergedLossError(PathoscopeError):
    """Training loss became non-finite."""


# --- model file errors ---

class ModelFileError(PathoscopeError):
    """Base class for model/cache file problems."""


class BadMagicError(ModelFileError):
    """File does not start with the expected magic bytes."""


class VersionUnsupportedError(ModelFileError):
    """File version is newer than this code understands."""


class TruncatedFileError(ModelFileError):
    """File ends before the declared payload does."""


class ChecksumMismatchError(ModelFileError):
    """Payload bytes fail their checksum."""


# --- detection errors ---

class ImageTooSmallError(PathoscopeError):
    """Image is smaller than one patch window after downsampling."""


# --- evaluation errors ---

class SingleClassError(PathoscopeError):
    """A curve needs both classes present."""


class EmptyTrainingError(PathoscopeError):
    """Classifier training set is empty."""


class LengthMismatchError(PathoscopeError):
    """Paired sequences differ in length."""


# --- generation / config errors ---

class ConfigInvalidError(PathoscopeError):
    """A configuration value violates its documented range."""
