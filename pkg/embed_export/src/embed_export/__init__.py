"""Offline adapter: run a sentence encoder or a pair-scoring model over
interchange files and write vectors (SPCV) or scores (JSON lines) that the
main pipeline loads without ever importing this package."""

__version__ = "0.1.0"

from .jobs import ExportJob, ExportError
from .exporter import export_embeddings, export_pair_scores

__all__ = ["ExportJob", "ExportError", "export_embeddings",
           "export_pair_scores", "__version__"]
