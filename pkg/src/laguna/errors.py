"""Exception types raised across the package.

Everything derives from :class:`LagunaError` so callers (and the CLI) can
distinguish domain errors from programming errors.
"""


class LagunaError(Exception):
    """Base class for all errors raised by this package."""


# --- numeric core ---

class ShapeMismatchError(LagunaError):
    """Operands have incompatible or degenerate shapes."""


class NonPositiveTemperatureError(LagunaError):
    """Softmax temperature must be strictly positive."""


class NotSymmetricError(LagunaError):
    """Matrix expected to be symmetric (within tolerance) is not."""


class NotPositiveDefiniteError(LagunaError):
    """Triangular factorization failed; matrix is not positive definite."""


class NonScalarLossError(LagunaError):
    """backward() requires a 1x1 loss node."""


class EmptyParameterListError(LagunaError):
    """Optimizer constructed with no parameters."""


# --- data model ---

class BadMagicError(LagunaError):
    """Embedding file does not start with the expected magic bytes."""


class TruncatedFileError(LagunaError):
    """Embedding file payload shorter or longer than its header promises."""


class DimMismatchError(LagunaError):
    """Dimension or count disagreement between related inputs."""


class MissingSourceLabelsError(LagunaError):
    """Source domain must ship a label file."""


class ClassCountMismatchError(LagunaError):
    """Anchor rows or label ids disagree with the manifest class list."""


class DanglingReferenceError(LagunaError):
    """Manifest references a file that does not exist."""


class RatioOutOfRangeError(LagunaError):
    """Subsample ratio must lie in (0, 1]."""


# --- relative encoding ---

class ZeroVectorError(LagunaError):
    """Query vector (or emitted representation) has near-zero norm."""


class DimTooSmallError(LagunaError):
    """Anchor dimensionality below the class count makes the Gram singular."""


# --- losses ---

class LengthMismatchError(LagunaError):
    """Encodings being compared have different lengths."""


class LabelOutOfRangeError(LagunaError):
    """Class index outside [0, n_classes)."""


# --- pipeline stages ---

class MissingPseudoLabelsError(LagunaError):
    """Pseudo-label table does not cover every target sample in training."""


class NoLabelsForSplitError(LagunaError):
    """Requested split carries no labels (not even evaluation-only ones)."""


class InvalidConfigError(LagunaError):
    """Configuration values are inconsistent or out of range."""
