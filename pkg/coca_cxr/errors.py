"""
Error Types
-----------
Exception hierarchy shared by every coca_cxr component.
"""


class CocaCxrError(Exception):
    """Base class for all library errors."""


class ConfigurationError(CocaCxrError, ValueError):
    """Invalid configuration value or inconsistent shapes in a config."""


class ShapeMismatchError(CocaCxrError, ValueError):
    pass


class EmptyAttentionSupportError(CocaCxrError, ValueError):
    def __init__(self, message="empty attention support"):
        super().__init__(message)


class NonFiniteError(CocaCxrError, ArithmeticError):
    pass


class NonFiniteTensorError(NonFiniteError):
    pass


class NonFiniteGradientError(NonFiniteError):
    def __init__(self, param_name):
        self.param_name = param_name
        super().__init__(f"non-finite gradient for parameter '{param_name}'")


class NonFiniteLossError(NonFiniteError):
    def __init__(self, iteration, checkpoint_path=None):
        self.iteration = iteration
        self.checkpoint_path = checkpoint_path
        where = f", last finite state saved to {checkpoint_path}" if checkpoint_path else ""
        super().__init__(f"non-finite loss at iteration {iteration}{where}")


class VocabularyError(CocaCxrError, KeyError):
    def __str__(self):
        return str(self.args[0]) if self.args else "vocabulary error"


class AnnotationParseError(CocaCxrError, ValueError):
    """Scene-annotation text could not be parsed; `position` is a character offset."""

    def __init__(self, message, position=0):
        self.position = position
        super().__init__(f"{message} (at position {position})")


class UnknownConditionError(AnnotationParseError):
    pass


class UnknownProgressionError(AnnotationParseError):
    pass


class UnknownOrganError(AnnotationParseError):
    pass


class BoxFormatError(AnnotationParseError):
    pass


class BoxOrderingError(AnnotationParseError):
    pass


class LabelDerivationError(CocaCxrError, ValueError):
    pass


class DatasetError(CocaCxrError):
    pass


class EmptyDatasetError(DatasetError, ValueError):
    pass


class DegenerateBoxError(CocaCxrError, ValueError):
    pass


class MissingClassError(CocaCxrError, ValueError):
    pass


class CheckpointError(CocaCxrError):
    pass


class CheckpointVersionError(CheckpointError):
    pass


class CheckpointCorruptError(CheckpointError):
    pass


class UsageError(CocaCxrError):
    """Bad command-line usage; maps to exit code 1."""


class EmptyReferenceError(CocaCxrError, ValueError):
    """A text metric was asked to score against an empty reference."""
