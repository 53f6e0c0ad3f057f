"""Model-side bridge: exports decoder-state bundles for the QE toolkit."""

from .embedder import HashEmbedder, parse_embedder
from .errors import ExportError, UsageError
from .export import (
    ExportJob,
    ExportResult,
    export_embeddings,
    export_test_side,
    export_train_side,
    run_export,
)
from .formats import SentenceRecord, write_manifest, write_tensor
from .toy_model import BOS, EOS, UNK, ToyModel, new_toy_model

__all__ = [
    "BOS",
    "EOS",
    "UNK",
    "ExportError",
    "ExportJob",
    "ExportResult",
    "HashEmbedder",
    "SentenceRecord",
    "ToyModel",
    "UsageError",
    "export_embeddings",
    "export_test_side",
    "export_train_side",
    "new_toy_model",
    "parse_embedder",
    "run_export",
    "write_manifest",
    "write_tensor",
]
