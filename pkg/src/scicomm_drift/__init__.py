"""Measure how faithfully news stories and tweets retell scientific findings.

The pipeline: ingest documents, extract finding sentences, pair findings
across linked papers and mentions, collect and aggregate human ratings on a
1..5 information-matching scale, evaluate automatic scorers, and analyze
what drives the drift.
"""

__version__ = "0.1.0"

from .errors import FormatError, PipelineError, ValidationError

__all__ = ["FormatError", "PipelineError", "ValidationError", "__version__"]
