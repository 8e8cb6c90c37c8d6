"""Offline exporter from summary texts to an embedding cache file."""

from .export import (
    BridgeError,
    BridgeJob,
    DEFAULT_BATCH_SIZE,
    DEFAULT_MODEL,
    export_texts,
    load_encoder,
    normalize_rows,
    read_texts_file,
    run_job,
    write_cache,
)

__all__ = [
    "BridgeError",
    "BridgeJob",
    "DEFAULT_BATCH_SIZE",
    "DEFAULT_MODEL",
    "export_texts",
    "load_encoder",
    "normalize_rows",
    "read_texts_file",
    "run_job",
    "write_cache",
]

__version__ = "0.1.0"
