"""Exception hierarchy shared across the toolkit.

The CLI maps these to exit codes: ConfigError -> 1, DataError -> 2,
ProviderError -> 3.
"""

from __future__ import annotations


class EmbedharError(Exception):
    """Base class for all toolkit errors."""


class ConfigError(EmbedharError):
    """A configuration file is missing, malformed, or inconsistent."""


class DataError(EmbedharError):
    """Input data violates a documented invariant."""


class DimensionMismatchError(DataError):
    """Vectors (or a vector and its provider) disagree on dimension."""


class ProviderError(EmbedharError):
    """An embedding backend failed to produce embeddings."""


class RetryExhaustedError(ProviderError):
    """The HTTP backend gave up after the configured number of attempts."""

    def __init__(self, message: str, attempts: int):
        super().__init__(f"{message} (after {attempts} attempt(s))")
        self.attempts = attempts


class CacheMissError(ProviderError):
    """A read-only cache does not contain one or more requested texts."""

    def __init__(self, missing_digests: list[str]):
        preview = ", ".join(missing_digests[:20])
        super().__init__(
            f"{len(missing_digests)} text(s) missing from embedding cache: {preview}"
        )
        self.missing_digests = list(missing_digests)


class CorruptCacheError(ProviderError):
    """An embedding cache file failed structural validation."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset
