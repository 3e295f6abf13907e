from abc import ABC, abstractmethod

import polars as pl


class StorageBackend(ABC):
    """
    Where run artifacts live. Writers address artifacts by path strings
    and never touch the filesystem directly, so a backend owns directory
    creation and the guarantee that a written artifact is complete.
    """

    @abstractmethod
    def read_text(self, path: str) -> str:
        """Read a UTF-8 artifact."""

    @abstractmethod
    def write_text(self, text: str, path: str) -> None:
        """Write a UTF-8 artifact, replacing any previous version whole."""

    @abstractmethod
    def write_csv(self, df: pl.DataFrame, path: str) -> None:
        """Write a frame as CSV with a header row."""

    @abstractmethod
    def exists(self, path: str) -> bool: ...

    @abstractmethod
    def makedirs(self, path: str) -> None:
        """Create a directory and its parents; existing ones are kept."""

    @abstractmethod
    def join_path(self, *parts: str) -> str: ...
