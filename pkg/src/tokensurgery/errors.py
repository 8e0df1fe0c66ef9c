"""Exception types shared across the toolkit."""


class SurgeryError(Exception):
    """Base class for all errors raised by tokensurgery."""


class ValidationError(SurgeryError):
    """Configuration or input failed validation before any work was done."""


class FormatError(SurgeryError):
    """A file on disk does not match the expected binary or text layout."""


class VocabularyUnderfullError(SurgeryError):
    def __init__(self, shortfall: int):
        self.shortfall = shortfall
        super().__init__(f"vocabulary underfull: {shortfall} slot(s) could not be filled")


class NumericError(SurgeryError):
    """Non-finite or degenerate values where finite ones are required."""


class DegenerateEmbeddingError(NumericError):
    pass


class CounterOverflowError(SurgeryError):
    pass


class TrainingAborted(SurgeryError):
    def __init__(self, message: str, last_checkpoint=None):
        self.last_checkpoint = last_checkpoint
        suffix = f" (last checkpoint: {last_checkpoint})" if last_checkpoint else " (no checkpoint written)"
        super().__init__(message + suffix)


class StageError(SurgeryError):
    def __init__(self, stage: str, cause: BaseException):
        self.stage = stage
        self.cause = cause
        super().__init__(f"[{stage}] {cause}")
