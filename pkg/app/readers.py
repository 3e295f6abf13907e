import io

import numpy as np
import polars as pl

from app.internal.exceptions import ConfigError, DimensionError
from app.services.fields import Grid2D, ScalarField2D
from app.storage import StorageBackend, StorageFactory

FIELD_HEADER = "# nx ny x_min x_max y_min y_max"


def _parse_grid(line: str, path: str) -> Grid2D:
    parts = line.lstrip("#").split()
    if len(parts) != 6:
        raise ConfigError(f"{path}: malformed grid line '{line.strip()}'")
    try:
        nx, ny = int(parts[0]), int(parts[1])
        x_min, x_max, y_min, y_max = (float(v) for v in parts[2:])
    except ValueError:
        raise ConfigError(
            f"{path}: malformed grid line '{line.strip()}'"
        ) from None
    return Grid2D(nx, ny, x_min, x_max, y_min, y_max)


def parse_field(text: str, path: str = "<field>") -> ScalarField2D:
    """
    Fields are stored as two comment lines (the column names and the grid)
    followed by a ``value`` column in row-major order.
    """
    lines = text.splitlines()
    if len(lines) < 2 or lines[0].strip() != FIELD_HEADER:
        raise ConfigError(f"{path}: missing field header '{FIELD_HEADER}'")
    grid = _parse_grid(lines[1], path)
    df = pl.read_csv(
        io.StringIO(text),
        comment_prefix="#",
        schema={"value": pl.Float64},
    )
    values = df["value"].to_numpy()
    if values.size != grid.nx * grid.ny:
        raise DimensionError(
            f"{path}: {values.size} values for a {grid.nx}x{grid.ny} grid"
        )
    return ScalarField2D(grid, values.reshape(grid.shape).copy())


def read_field(
    path: str, storage: StorageBackend | None = None
) -> ScalarField2D:
    storage = storage or StorageFactory.get_storage(path)
    if not storage.exists(path):
        raise ConfigError(f"Field file not found: {path}")
    return parse_field(storage.read_text(path), path)


def read_field_pair(
    f_path: str, g_path: str
) -> tuple[ScalarField2D, ScalarField2D]:
    f = read_field(f_path)
    g = read_field(g_path)
    if not f.same_grid(g):
        raise DimensionError(f"{f_path} and {g_path} use different grids")
    if not np.all(np.isfinite(f.values)) or not np.all(np.isfinite(g.values)):
        raise DimensionError("Field files must hold finite values")
    return f, g
