import logging
import os
import tempfile
from pathlib import Path
from typing import Any, Callable

import polars as pl

from .base import StorageBackend

logger = logging.getLogger(__name__)


class LocalBackend(StorageBackend):
    """Artifacts on the local filesystem."""

    def read_text(self, path: str) -> str:
        return Path(path).read_text(encoding="utf-8")

    def write_text(self, text: str, path: str) -> None:
        self._replace(path, lambda tmp: tmp.write_text(text, encoding="utf-8"))

    def write_csv(self, df: pl.DataFrame, path: str) -> None:
        self._replace(path, df.write_csv)

    def exists(self, path: str) -> bool:
        return Path(path).exists()

    def makedirs(self, path: str) -> None:
        os.makedirs(path, exist_ok=True)

    def join_path(self, *parts: str) -> str:
        return os.path.join(*parts)

    def _replace(
        self, path: str, write: Callable[[Path], Any]
    ) -> None:
        # a killed run leaves either the old artifact or the new one
        target = Path(path)
        self.makedirs(str(target.parent))
        fd, tmp_name = tempfile.mkstemp(
            dir=target.parent, prefix=f".{target.name}.", suffix=".tmp"
        )
        os.close(fd)
        tmp = Path(tmp_name)
        try:
            write(tmp)
            os.replace(tmp, target)
        except BaseException:
            tmp.unlink(missing_ok=True)
            raise
        logger.debug("Wrote %s", target)
