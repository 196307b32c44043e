"""Exception hierarchy shared by every stage of the pipeline."""


class ModsegError(Exception):
    """Base class for all errors raised by this package."""


class ValidationError(ModsegError, ValueError):
    pass


class SizingError(ValidationError):
    """Image dimension the backend cannot process."""

    def __init__(self, dimension: str, value: int, multiple: int = 64):
        self.dimension = dimension
        self.value = value
        self.multiple = multiple
        super().__init__(f"image {dimension}={value} is not a multiple of {multiple}")


class UnsupportedSiteError(ModsegError, KeyError):
    def __str__(self):
        return str(self.args[0]) if self.args else "unsupported site"


class InvalidKError(ValidationError):
    pass


class UndefinedMetricError(ModsegError, ArithmeticError):
    pass


class TextEmbeddingError(ModsegError):
    def __init__(self, class_name: str, cause: BaseException):
        self.class_name = class_name
        self.cause = cause
        super().__init__(f"text embedding failed for class {class_name!r}: {cause}")


class StageError(ModsegError):
    """A pipeline stage failed; carries the stage name for CLI diagnostics."""

    def __init__(self, stage: str, cause: BaseException):
        self.stage = stage
        self.cause = cause
        super().__init__(f"[{stage}] {type(cause).__name__}: {cause}")


class MaskFailure(ModsegError):
    def __init__(self, mask_index: int, cause: BaseException):
        self.mask_index = mask_index
        self.cause = cause
        super().__init__(f"modulation failed for mask {mask_index}: {cause}")
