import tempfile
from collections.abc import Generator
from pathlib import Path

import numpy as np
import pytest

from app.services.fields import Grid2D, ScalarField2D
from app.services.problems import get_problem
from app.storage import StorageFactory


@pytest.fixture
def temp_output_dir() -> Generator[Path, None, None]:
    """Temporary directory for test outputs."""
    with tempfile.TemporaryDirectory() as tmpdir:
        yield Path(tmpdir)


@pytest.fixture(autouse=True)
def fresh_storage():
    """Each test starts without cached storage backends."""
    StorageFactory.clear_cache()
    yield
    StorageFactory.clear_cache()


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)


@pytest.fixture
def grid_65() -> Grid2D:
    """65 x 65 nodes on [-1, 1]²."""
    return Grid2D.square(65)


@pytest.fixture
def sharp_w_129() -> tuple[ScalarField2D, ScalarField2D]:
    """The sharp example ``w = -|x|^{4/3}`` and its right-hand side."""
    problem = get_problem("sharp-w")
    grid = problem.grid(129)
    return problem.g_field(grid), problem.f_field(grid)


@pytest.fixture
def sharp_w_sequence() -> list[ScalarField2D]:
    """Samples of w with spacings 2^-4 ... 2^-9."""
    problem = get_problem("sharp-w")
    return [
        ScalarField2D.from_function(Grid2D.square(2 ** (k + 1) + 1), problem.g)
        for k in range(4, 10)
    ]


@pytest.fixture
def sample_config_dict() -> dict:
    """Small configuration touching every section."""
    return {
        "command": "solve1d",
        "problem": "interior-t0",
        "seed": 3,
        "oned": {"n": 513, "quadrature": "exact"},
        "viscous": {"n": 33, "eps_start": 0.5, "eps_stop": 0.05},
        "scan": {
            "alpha": 2.0,
            "p": 1.5,
            "region": {"shape": "ball", "center": [0.0, 0.0], "radius": 0.5},
        },
        "identities": {"polynomials": 5},
        "gehring": {"q": [2.0, 3.0]},
        "postprocessing": {"plots": False},
    }
