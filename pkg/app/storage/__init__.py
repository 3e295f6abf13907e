"""Storage abstraction layer for experiment artifacts."""

from .base import StorageBackend
from .factory import StorageFactory
from .local import LocalBackend

__all__ = [
    "StorageBackend",
    "LocalBackend",
    "StorageFactory",
]
