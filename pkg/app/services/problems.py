"""
Named problems: right-hand sides, Dirichlet data and, where known, exact
solutions for the 2-D and 1-D solvers.
"""

from dataclasses import dataclass
from typing import Callable

import numpy as np

from app.internal.constants import SHARP_W_EXPONENT, SHARP_W_RHS
from app.internal.exceptions import ConfigError
from app.services.fields import Grid2D, ScalarField2D
from app.services.oned import OneDProblem

Function2D = Callable[[np.ndarray, np.ndarray], np.ndarray | float]


def sharp_w(X: np.ndarray, Y: np.ndarray) -> np.ndarray:
    return -np.abs(X) ** SHARP_W_EXPONENT + 0.0 * Y


def ridge_mask(grid: Grid2D) -> np.ndarray:
    """Nodes within one cell of the line ``x = 0``."""
    X, _ = grid.mesh()
    return np.abs(X) <= grid.hx * (1.0 + 1e-9)


@dataclass(frozen=True)
class Problem2D:
    name: str
    f: Function2D
    g: Function2D
    description: str = ""
    exact: Function2D | None = None
    ridge: Callable[[Grid2D], np.ndarray] | None = None
    half_width: float = 1.0

    def grid(self, n: int) -> Grid2D:
        return Grid2D.square(n, self.half_width)

    def f_field(self, grid: Grid2D) -> ScalarField2D:
        return ScalarField2D.from_function(grid, self.f)

    def g_field(self, grid: Grid2D) -> ScalarField2D:
        return ScalarField2D.from_function(grid, self.g)

    def exact_field(self, grid: Grid2D) -> ScalarField2D | None:
        if self.exact is None:
            return None
        return ScalarField2D.from_function(grid, self.exact)

    def ridge_mask(self, grid: Grid2D) -> np.ndarray | None:
        return self.ridge(grid) if self.ridge is not None else None


PROBLEMS_2D: dict[str, Problem2D] = {
    "sharp-w": Problem2D(
        name="sharp-w",
        f=lambda X, Y: np.full_like(X, SHARP_W_RHS),
        g=sharp_w,
        description="f = 64/81, g = -|x|^{4/3}; exact solution known",
        exact=sharp_w,
        ridge=ridge_mask,
    ),
    "const-f-zero-g": Problem2D(
        name="const-f-zero-g",
        f=lambda X, Y: np.ones_like(X),
        g=lambda X, Y: np.zeros_like(X),
        description="f = 1, g = 0",
    ),
    "tilted-f": Problem2D(
        name="tilted-f",
        f=lambda X, Y: 1.0 + 0.5 * X + 0.0 * Y,
        g=lambda X, Y: np.zeros_like(X),
        description="f = 1 + x/2, g = 0",
    ),
}


@dataclass(frozen=True)
class OneDSpec:
    name: str
    f: Callable[[np.ndarray], np.ndarray | float]
    u0: float
    u1: float
    description: str = ""
    exact: Callable[[np.ndarray], np.ndarray] | None = None

    def build(self, n: int) -> OneDProblem:
        return OneDProblem(
            f=self.f, u0=self.u0, u1=self.u1, n=n, name=self.name
        )


PROBLEMS_1D: dict[str, OneDSpec] = {
    "sharp-1d": OneDSpec(
        name="sharp-1d",
        f=lambda t: np.full_like(t, SHARP_W_RHS),
        u0=0.0,
        u1=-1.0,
        description="f = 64/81, u = -t^{4/3}, degenerate point at t = 0",
        exact=lambda t: -(t ** SHARP_W_EXPONENT),
    ),
    "interior-t0": OneDSpec(
        name="interior-t0",
        f=lambda t: np.full_like(t, -3.0),
        u0=0.0,
        u1=0.0,
        description="f = -3, degenerate point at t = 1/2",
    ),
    "linear-f": OneDSpec(
        name="linear-f",
        f=lambda t: 1.0 + t,
        u0=0.0,
        u1=0.0,
        description="f = 1 + t",
    ),
}


def get_problem(name: str) -> Problem2D:
    try:
        return PROBLEMS_2D[name]
    except KeyError:
        raise ConfigError(
            f"Unknown problem '{name}', expected one of {sorted(PROBLEMS_2D)}"
        ) from None


def get_oned_spec(name: str) -> OneDSpec:
    try:
        return PROBLEMS_1D[name]
    except KeyError:
        raise ConfigError(
            f"Unknown 1-D problem '{name}', expected one of"
            f" {sorted(PROBLEMS_1D)}"
        ) from None


def get_oned_problem(name: str, n: int) -> OneDProblem:
    return get_oned_spec(name).build(n)


@dataclass(frozen=True)
class Polynomial2D:
    """``Σ c_ij x^i y^j`` over ``i + j <= degree``."""

    coefficients: dict[tuple[int, int], float]

    @property
    def degree(self) -> int:
        return max(i + j for i, j in self.coefficients)

    def __call__(self, X: np.ndarray, Y: np.ndarray) -> np.ndarray:
        total = np.zeros_like(X, dtype=np.float64)
        for (i, j), c in self.coefficients.items():
            total = total + c * X**i * Y**j
        return total


def random_polynomial(
    rng: np.random.Generator, degree: int = 4
) -> Polynomial2D:
    coefficients = {
        (i, j): float(rng.standard_normal())
        for i in range(degree + 1)
        for j in range(degree + 1 - i)
    }
    return Polynomial2D(coefficients)
