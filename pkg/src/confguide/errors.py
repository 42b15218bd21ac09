"""Exception types shared across the pipeline."""


class ConfguideError(Exception):
    """Base class for every error raised by this package."""


class ParseError(ConfguideError):
    """A file could not be parsed under its declared format."""


class SchemaMismatch(ConfguideError):
    """Matrix columns do not line up with the label schema."""


class AlignmentError(ConfguideError):
    """Case identifiers differ between inputs that must be aligned."""


class RangeError(ConfguideError):
    """A value fell outside its permitted interval."""


class MissingSplitTag(ConfguideError):
    """A case has no calibration/test split assignment."""


class EmptyDataset(ConfguideError):
    """An operation requires at least one case."""


class EmptyGrid(ConfguideError):
    """An operation requires a non-empty parameter grid."""


class EmptyInput(ConfguideError):
    """An operation requires a non-empty input list."""


class UnknownLabel(ConfguideError):
    """Label name not present in the bound schema."""


class ImageUnreadable(ConfguideError):
    """The image referenced by a case could not be read."""


class VerdictOutsideSet(ConfguideError):
    """A verdict was supplied for a label the prediction set never flagged."""


class IncompleteReview(ConfguideError):
    """A flagged label is missing its verdict."""


class MissingGuidance(ConfguideError):
    """A guidance-backed review was requested without guidance for a flag."""


class UnknownCase(ConfguideError):
    """Requested case id does not exist in the served split."""


class UnknownSession(ConfguideError):
    """Requested review session id does not exist."""


class DuplicateDecision(ConfguideError):
    """A decision for this (case, config, reviewer) already exists."""


class MissingArtifact(ConfguideError):
    """An upstream pipeline artifact has not been produced yet."""


class StaleArtifact(ConfguideError):
    """An upstream artifact was built from inputs that have since changed."""
