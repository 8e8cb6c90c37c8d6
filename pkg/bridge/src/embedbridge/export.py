"""Encode summary texts with a sentence encoder and write a cache file.

The cache byte layout belongs to the consumer and is frozen: magic
``EMBCACHE``, version u16 LE, model-name length u16 LE, model-name
UTF-8, dim u32 LE, then one record per unique text holding the 32-byte
SHA-256 digest of the exact text followed by dim little-endian
float32s, records sorted by digest. Identical entry sets must produce
byte-identical files, whichever side wrote them.
"""

import hashlib
import json
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Mapping, Optional, Sequence, Union

import numpy as np

CACHE_MAGIC = b"EMBCACHE"
CACHE_VERSION = 1
DEFAULT_MODEL = "all-distilroberta-v1"
DEFAULT_BATCH_SIZE = 64

Encoder = Callable[[Sequence[str]], np.ndarray]


class BridgeError(Exception):
    """Any condition that should stop an export with a clear message."""


def read_texts_file(path: Union[str, Path]) -> list[str]:
    """Read a line-delimited JSON texts file; returns texts in file order.

    Each line is an object with ``id`` and ``text`` keys, the format the
    summarize exporter emits. Ids are only used in error messages here;
    the cache keys records by text digest alone.
    """
    path = Path(path)
    if not path.exists():
        raise BridgeError(f"texts file not found: {path}")
    texts = []
    with path.open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                raise BridgeError(f"{path}:{lineno}: blank line")
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise BridgeError(f"{path}:{lineno}: not valid JSON: {exc}") from exc
            if not isinstance(record, dict) or set(record) != {"id", "text"}:
                raise BridgeError(
                    f"{path}:{lineno}: expected an object with id and text keys"
                )
            if not isinstance(record["text"], str) or not record["text"]:
                raise BridgeError(
                    f"{path}:{lineno}: text must be a non-empty string "
                    f"(id {record['id']!r})"
                )
            texts.append(record["text"])
    return texts


def normalize_rows(matrix: np.ndarray) -> np.ndarray:
    """L2-normalize each row in float64, return float32 rows.

    Mirrors the consumer's normalization step exactly so a vector takes
    the same float32 bits whichever side computed it.
    """
    matrix = np.asarray(matrix)
    if matrix.ndim != 2 or matrix.shape[1] == 0:
        raise BridgeError("encoder output must be a non-empty two-dimensional array")
    out = np.empty(matrix.shape, dtype=np.float32)
    for i in range(matrix.shape[0]):
        row = matrix[i].astype(np.float64)
        if not np.all(np.isfinite(row)):
            raise BridgeError(f"encoder produced non-finite values in row {i}")
        norm = float(np.linalg.norm(row))
        if norm == 0.0:
            raise BridgeError(f"encoder produced a zero vector in row {i}")
        out[i] = (row / norm).astype(np.float32)
    return out


def write_cache(
    path: Union[str, Path],
    records: Mapping[str, np.ndarray],
    model_name: str,
) -> int:
    """Write unit-norm float32 vectors keyed by their source text."""
    if not model_name:
        raise BridgeError("model name must be non-empty")
    name_bytes = model_name.encode("utf-8")
    if len(name_bytes) > 0xFFFF:
        raise BridgeError("model name too long for the cache header")
    if not records:
        raise BridgeError("refusing to write an empty cache")
    dims = {vec.shape[0] for vec in records.values()}
    if len(dims) != 1:
        raise BridgeError(f"records mix dims {sorted(dims)}")
    (dim,) = dims
    table = {
        hashlib.sha256(text.encode("utf-8")).digest(): vec
        for text, vec in records.items()
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    try:
        with path.open("wb") as fh:
            fh.write(CACHE_MAGIC)
            fh.write(struct.pack("<H", CACHE_VERSION))
            fh.write(struct.pack("<H", len(name_bytes)))
            fh.write(name_bytes)
            fh.write(struct.pack("<I", dim))
            for digest in sorted(table):
                fh.write(digest)
                fh.write(table[digest].astype("<f4").tobytes())
    except OSError as exc:
        raise BridgeError(f"cannot write cache {path}: {exc}") from exc
    return len(table)


def export_texts(
    texts: Iterable[str],
    encoder: Encoder,
    model_name: str,
    out_path: Union[str, Path],
    batch_size: int = DEFAULT_BATCH_SIZE,
) -> int:
    """Encode every unique text and write the cache; returns record count.

    Duplicates collapse before encoding, so each distinct text costs one
    encoder call slot and one record.
    """
    if batch_size < 1:
        raise BridgeError("batch size must be positive")
    unique = list(dict.fromkeys(texts))
    if not unique:
        raise BridgeError("no texts to export")
    rows = []
    for start in range(0, len(unique), batch_size):
        batch = unique[start:start + batch_size]
        encoded = np.asarray(encoder(batch))
        if encoded.ndim != 2 or encoded.shape[0] != len(batch):
            raise BridgeError(
                f"encoder returned shape {encoded.shape} for a batch of {len(batch)}"
            )
        rows.append(encoded)
    matrix = normalize_rows(np.concatenate(rows, axis=0))
    records = {text: matrix[i] for i, text in enumerate(unique)}
    return write_cache(out_path, records, model_name)


def load_encoder(model_name: str) -> Encoder:
    """Load a sentence-transformers model as a batch-encode callable."""
    try:
        from sentence_transformers import SentenceTransformer
    except ImportError as exc:
        raise BridgeError(
            "sentence-transformers is not installed; install it or pass "
            "an encoder callable"
        ) from exc
    try:
        model = SentenceTransformer(model_name)
    except Exception as exc:
        raise BridgeError(f"cannot load encoder {model_name!r}: {exc}") from exc

    def encode(batch: Sequence[str]) -> np.ndarray:
        return np.asarray(
            model.encode(list(batch), convert_to_numpy=True,
                         normalize_embeddings=False, show_progress_bar=False)
        )

    return encode


@dataclass(frozen=True)
class BridgeJob:
    """One export: texts file in, cache file out."""

    input_path: Path
    output_path: Path
    model_name: str = DEFAULT_MODEL
    batch_size: int = DEFAULT_BATCH_SIZE

    def __post_init__(self):
        if not self.model_name:
            raise BridgeError("model name must be non-empty")
        if self.batch_size < 1:
            raise BridgeError("batch size must be positive")


def run_job(job: BridgeJob, encoder: Optional[Encoder] = None) -> tuple[int, int]:
    """Execute a job; returns (records written, dim)."""
    texts = read_texts_file(job.input_path)
    if encoder is None:
        encoder = load_encoder(job.model_name)
    count = export_texts(texts, encoder, job.model_name, job.output_path,
                         batch_size=job.batch_size)
    with Path(job.output_path).open("rb") as fh:
        header = fh.read(len(CACHE_MAGIC) + 4)
        name_len = struct.unpack("<H", header[-2:])[0]
        fh.seek(name_len, 1)
        dim = struct.unpack("<I", fh.read(4))[0]
    return count, dim
