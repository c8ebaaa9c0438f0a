"""Exception hierarchy shared across the pipeline.

Exit-code mapping used by the CLI: usage errors exit 2, DataError
subclasses exit 3, BackendError subclasses exit 4.
"""


class MindError(Exception):
    """Base class for all errors raised by this package."""


class DataError(MindError):
    """Invalid or inconsistent input data (CLI exit code 3)."""


class BackendError(MindError):
    """Inference or embedding endpoint failure (CLI exit code 4)."""


# --- catalog ---------------------------------------------------------------

class MalformedLine(DataError):
    """A line in an input file could not be parsed."""

    def __init__(self, path: str, line_no: int, reason: str):
        super().__init__(f"{path}:{line_no}: {reason}")
        self.path = path
        self.line_no = line_no
        self.reason = reason


class DuplicateId(DataError):
    def __init__(self, entity_id: str):
        super().__init__(f"duplicate id: {entity_id!r}")
        self.entity_id = entity_id


class NotFound(DataError):
    def __init__(self, what: str, key: str):
        super().__init__(f"{what} not found: {key!r}")
        self.key = key


# --- prompt rendering ------------------------------------------------------

class PromptError(DataError):
    """A prompt could not be rendered from the given entities."""


class MissingImage(PromptError):
    pass


class FeaturesMissing(PromptError):
    pass


class EmptyIntention(PromptError):
    pass


# --- inference gateway -----------------------------------------------------

class AuthFailed(BackendError):
    pass


class PayloadTooLarge(BackendError):
    pass


class ExhaustedRetries(BackendError):
    """All retry attempts failed; carries the last underlying cause."""

    def __init__(self, attempts: int, last_cause: object):
        super().__init__(f"gave up after {attempts} attempts: {last_cause}")
        self.attempts = attempts
        self.last_cause = last_cause


# --- pipeline --------------------------------------------------------------

class CheckpointMismatch(DataError):
    """Resume attempted with a config fingerprint different from the run's."""


class PipelineAborted(BackendError):
    """Dead-letter fraction exceeded the configured abort threshold."""


# --- knowledge base --------------------------------------------------------

class EmptyExport(DataError):
    pass


# --- annotation ------------------------------------------------------------

class AnnotationError(DataError):
    pass


class InsufficientRecords(AnnotationError):
    pass


class DuplicateSubmission(AnnotationError):
    pass


class TaskComplete(AnnotationError):
    pass


class UnknownTask(AnnotationError):
    pass


class TaskIncomplete(AnnotationError):
    pass


class RowSumMismatch(AnnotationError):
    pass


class TooFewItems(AnnotationError):
    pass


class TooFewCategories(AnnotationError):
    pass


class LengthMismatch(AnnotationError):
    pass


# --- analytics -------------------------------------------------------------

class AnalyticsError(DataError):
    pass


class DimensionMismatch(AnalyticsError):
    pass


class ZeroVector(AnalyticsError):
    pass


class EmptyInput(AnalyticsError):
    pass


class EmptyTaxonomy(AnalyticsError):
    pass
