"""Shared error types mapped onto CLI exit codes."""


class DataError(ValueError):
    """Malformed or inconsistent input data (exit code 3)."""


class BitstreamError(ValueError):
    """Truncated or corrupt coded stream / container (exit code 4)."""


class HashMismatchError(BitstreamError):
    """Container was produced by a different model build (exit code 4)."""
