"""Exception types shared across the corpus, model and CLI layers."""


class DBTMError(Exception):
    """Base class for every error raised by this package."""


class CorpusError(DBTMError, ValueError):
    """Bad input data: unreadable review files, empty vocabularies, bad splits."""


class CheckpointError(DBTMError):
    """Checkpoint container could not be written or read back."""


class TrainingError(DBTMError):
    """Optimization produced a non-finite objective or kept skipping steps."""
