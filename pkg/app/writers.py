import logging
import math
from datetime import datetime, timezone
from enum import Enum
from typing import Any, Sequence

import numpy as np
import polars as pl
import pyjson5

from app import __version__
from app.readers import FIELD_HEADER
from app.services.fields import ScalarField2D
from app.services.oned import OneDSolution
from app.storage import StorageBackend, StorageFactory

logger = logging.getLogger(__name__)


def _plain(value: Any) -> Any:
    """Converts records to values ``pyjson5`` can encode."""
    if isinstance(value, dict):
        return {str(k): _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    if isinstance(value, Enum):
        return value.value
    if isinstance(value, np.ndarray):
        return [_plain(v) for v in value.tolist()]
    if isinstance(value, np.bool_):
        return bool(value)
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, (float, np.floating)):
        value = float(value)
        # plain JSON readers reject NaN and Infinity
        return value if math.isfinite(value) else repr(value)
    return value


def format_field(field: ScalarField2D) -> str:
    grid = field.grid
    lines = [
        FIELD_HEADER,
        "# "
        + " ".join(
            [str(grid.nx), str(grid.ny)]
            + [
                repr(float(v))
                for v in (grid.x_min, grid.x_max, grid.y_min, grid.y_max)
            ]
        ),
        "value",
    ]
    lines.extend(repr(float(v)) for v in field.values.ravel())
    return "\n".join(lines) + "\n"


def format_oned_solution(solution: OneDSolution) -> str:
    t0 = "none" if solution.t0 is None else repr(float(solution.t0))
    header = f"# c = {solution.c!r}\n# t0 = {t0}\n"
    return header + solution.to_frame().write_csv()


def format_curve(
    x: Sequence[float], y: Sequence[float], columns: tuple[str, str]
) -> str:
    lines = [f"# {columns[0]} {columns[1]}"]
    lines.extend(f"{float(a)!r} {float(b)!r}" for a, b in zip(x, y))
    return "\n".join(lines) + "\n"


class ArtifactWriter:
    """
    Writes every artifact of a run below ``out_dir`` and remembers it for
    the manifest.
    """

    def __init__(self, out_dir: str):
        self.out_dir = out_dir
        self.storage: StorageBackend = StorageFactory.get_storage(out_dir)
        self.artifacts: list[str] = []
        self.storage.makedirs(out_dir)

    def path(self, name: str) -> str:
        return self.storage.join_path(self.out_dir, name)

    def _register(self, name: str):
        self.artifacts.append(name)
        logger.info("Wrote %s", self.path(name))

    def field(self, field: ScalarField2D, name: str):
        self.storage.write_text(format_field(field), self.path(name))
        self._register(name)

    def oned_solution(self, solution: OneDSolution, name: str):
        self.storage.write_text(
            format_oned_solution(solution), self.path(name)
        )
        self._register(name)

    def frame(self, df: pl.DataFrame, name: str):
        self.storage.write_csv(df, self.path(name))
        self._register(name)

    def record(self, record: Any, name: str):
        text = pyjson5.encode(_plain(record))
        self.storage.write_text(text + "\n", self.path(name))
        self._register(name)

    def curve(
        self,
        x: Sequence[float],
        y: Sequence[float],
        name: str,
        columns: tuple[str, str] = ("h", "value"),
    ):
        self.storage.write_text(format_curve(x, y, columns), self.path(name))
        self._register(name)

    def plots_dir(self) -> str:
        path = self.path("plots")
        self.storage.makedirs(path)
        return path

    def register_plot(self, name: str):
        self._register(self.storage.join_path("plots", name))

    def manifest(
        self,
        config: dict[str, Any],
        checks: Sequence[Any],
        status: int,
    ):
        record = {
            "version": __version__,
            "created_at": datetime.now(timezone.utc).isoformat(),
            "config": config,
            "artifacts": list(self.artifacts),
            "checks": [check.to_record() for check in checks],
            "exit_status": status,
        }
        self.storage.write_text(
            pyjson5.encode(_plain(record)) + "\n", self.path("manifest.json")
        )
        logger.info("Wrote %s", self.path("manifest.json"))
