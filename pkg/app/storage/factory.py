from app.internal.exceptions import ConfigError

from .base import StorageBackend
from .local import LocalBackend

REMOTE_SCHEMES = ("s3://", "gs://", "http://", "https://")


class StorageFactory:
    """Resolves an output or input location to its backend."""

    _local: LocalBackend | None = None

    @classmethod
    def get_storage(cls, path: str) -> StorageBackend:
        """
        Returns the shared local backend. Runs write next to the machine
        that computes them, so remote locations are a configuration error.

        Examples:
            >>> isinstance(StorageFactory.get_storage("results/run-1"),
            ...            LocalBackend)
            True
        """
        if path.startswith(REMOTE_SCHEMES):
            raise ConfigError(f"Remote locations are not supported: {path}")
        if cls._local is None:
            cls._local = LocalBackend()
        return cls._local

    @classmethod
    def clear_cache(cls):
        cls._local = None
