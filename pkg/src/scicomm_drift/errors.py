"""Exception hierarchy shared by all pipeline stages."""
from __future__ import annotations


class PipelineError(Exception):
    """Base class for everything this package raises on purpose."""


class ValidationError(PipelineError):
    """Malformed input data or configuration. CLI exit code 1."""


class FormatError(ValidationError):
    """A serialized file does not follow its declared layout."""
