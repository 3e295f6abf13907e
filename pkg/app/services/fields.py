"""
Uniform-grid scalar fields and the finite-difference operators shared by
every other service: gradient, Hessian, Laplacian, ∞-Laplacian, Hessian
determinant and discrete L^p norms over interior regions.

Arrays are indexed ``values[i, j]`` with ``i`` along x and ``j`` along y.
"""

import logging
from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import Any, Callable

import numpy as np

from app.internal.exceptions import DimensionError, DomainError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Grid2D:
    nx: int
    ny: int
    x_min: float
    x_max: float
    y_min: float
    y_max: float

    def __post_init__(self):
        if self.nx < 3 or self.ny < 3:
            raise DimensionError(
                f"Grid needs at least 3 nodes per axis, got {self.nx}x{self.ny}"
            )
        if not (self.x_max > self.x_min and self.y_max > self.y_min):
            raise DimensionError(
                "Grid bounds must satisfy x_min < x_max and y_min < y_max"
            )

    @classmethod
    def square(
        cls,
        n: int,
        half_width: float = 1.0,
        center: tuple[float, float] = (0.0, 0.0),
    ) -> "Grid2D":
        cx, cy = center
        return cls(
            nx=n,
            ny=n,
            x_min=cx - half_width,
            x_max=cx + half_width,
            y_min=cy - half_width,
            y_max=cy + half_width,
        )

    @classmethod
    def with_spacing(
        cls, h: float, x_min: float, x_max: float, y_min: float, y_max: float
    ) -> "Grid2D":
        nx = int(round((x_max - x_min) / h)) + 1
        ny = int(round((y_max - y_min) / h)) + 1
        grid = cls(nx, ny, x_min, x_max, y_min, y_max)
        if not (
            np.isclose(grid.hx, h, rtol=1e-9)
            and np.isclose(grid.hy, h, rtol=1e-9)
        ):
            raise DimensionError(
                f"Spacing {h} does not divide the domain "
                f"[{x_min}, {x_max}] x [{y_min}, {y_max}]"
            )
        return grid

    @property
    def hx(self) -> float:
        return (self.x_max - self.x_min) / (self.nx - 1)

    @property
    def hy(self) -> float:
        return (self.y_max - self.y_min) / (self.ny - 1)

    @property
    def h(self) -> float:
        return max(self.hx, self.hy)

    @property
    def cell_area(self) -> float:
        return self.hx * self.hy

    @property
    def shape(self) -> tuple[int, int]:
        return (self.nx, self.ny)

    @property
    def x(self) -> np.ndarray:
        return self.x_min + np.arange(self.nx) * self.hx

    @property
    def y(self) -> np.ndarray:
        return self.y_min + np.arange(self.ny) * self.hy

    def mesh(self) -> tuple[np.ndarray, np.ndarray]:
        return np.meshgrid(self.x, self.y, indexing="ij")

    def interior_mask(self) -> np.ndarray:
        mask = np.zeros(self.shape, dtype=bool)
        mask[1:-1, 1:-1] = True
        return mask

    def boundary_mask(self) -> np.ndarray:
        return ~self.interior_mask()

    def to_record(self) -> dict[str, Any]:
        return {
            "nx": self.nx,
            "ny": self.ny,
            "x_min": self.x_min,
            "x_max": self.x_max,
            "y_min": self.y_min,
            "y_max": self.y_max,
        }


@dataclass(frozen=True, eq=False)
class ScalarField2D:
    grid: Grid2D
    values: np.ndarray
    # False where samples are extrapolated or otherwise unreliable
    valid: np.ndarray | None = None

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.shape != self.grid.shape:
            raise DimensionError(
                f"Field shape {values.shape} does not match grid "
                f"{self.grid.shape}"
            )
        if not np.all(np.isfinite(values)):
            raise DomainError("Field contains non-finite samples")
        object.__setattr__(self, "values", values)
        if self.valid is None:
            valid = np.ones(self.grid.shape, dtype=bool)
        else:
            valid = np.asarray(self.valid, dtype=bool)
            if valid.shape != self.grid.shape:
                raise DimensionError("Validity mask does not match the grid")
        object.__setattr__(self, "valid", valid)

    @classmethod
    def from_function(
        cls,
        grid: Grid2D,
        fn: Callable[[np.ndarray, np.ndarray], np.ndarray | float],
    ) -> "ScalarField2D":
        X, Y = grid.mesh()
        values = np.asarray(fn(X, Y), dtype=np.float64)
        values = np.broadcast_to(values, grid.shape)
        return cls(grid, values.copy())

    @classmethod
    def constant(cls, grid: Grid2D, value: float) -> "ScalarField2D":
        return cls(grid, np.full(grid.shape, float(value)))

    def with_values(
        self, values: np.ndarray, valid: np.ndarray | None = None
    ) -> "ScalarField2D":
        return ScalarField2D(self.grid, values, valid)

    def same_grid(self, other: "ScalarField2D") -> bool:
        return self.grid == other.grid


@dataclass(frozen=True, eq=False)
class VectorField2D:
    grid: Grid2D
    x: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        for name in ("x", "y"):
            component = np.asarray(getattr(self, name), dtype=np.float64)
            if component.shape != self.grid.shape:
                raise DimensionError(
                    f"Component {name} has shape {component.shape}, "
                    f"expected {self.grid.shape}"
                )
            if not np.all(np.isfinite(component)):
                raise DomainError(f"Component {name} has non-finite samples")
            object.__setattr__(self, name, component)

    def magnitude(self) -> np.ndarray:
        return np.sqrt(self.x**2 + self.y**2)


@dataclass(frozen=True, eq=False)
class HessianField2D:
    grid: Grid2D
    xx: np.ndarray
    xy: np.ndarray
    yy: np.ndarray
    valid: np.ndarray


class Region(ABC):
    """Closed-form subset of the plane, rasterized by strict inequalities."""

    @abstractmethod
    def contains(self, X: np.ndarray, Y: np.ndarray) -> np.ndarray:
        pass

    @abstractmethod
    def bounds(self) -> tuple[float, float, float, float]:
        pass

    @abstractmethod
    def dilated(self, delta: float) -> "Region":
        pass

    @abstractmethod
    def to_record(self) -> dict[str, Any]:
        pass

    def fits(self, grid: Grid2D) -> bool:
        x0, x1, y0, y1 = self.bounds()
        tol = 1e-12 * max(abs(grid.x_max - grid.x_min), 1.0)
        return (
            x0 >= grid.x_min + grid.hx - tol
            and x1 <= grid.x_max - grid.hx + tol
            and y0 >= grid.y_min + grid.hy - tol
            and y1 <= grid.y_max - grid.hy + tol
        )

    def mask(self, grid: Grid2D) -> np.ndarray:
        if not self.fits(grid):
            raise DomainError(
                f"Region {self.to_record()} is not inside the grid interior "
                f"[{grid.x_min + grid.hx}, {grid.x_max - grid.hx}] x "
                f"[{grid.y_min + grid.hy}, {grid.y_max - grid.hy}]"
            )
        X, Y = grid.mesh()
        return self.contains(X, Y)


@dataclass(frozen=True)
class Ball(Region):
    center: tuple[float, float]
    radius: float

    def __post_init__(self):
        object.__setattr__(self, "center", tuple(map(float, self.center)))
        if self.radius <= 0:
            raise DomainError(
                f"Ball radius must be positive, got {self.radius}"
            )

    def contains(self, X: np.ndarray, Y: np.ndarray) -> np.ndarray:
        cx, cy = self.center
        return (X - cx) ** 2 + (Y - cy) ** 2 < self.radius**2

    def bounds(self) -> tuple[float, float, float, float]:
        cx, cy = self.center
        r = self.radius
        return (cx - r, cx + r, cy - r, cy + r)

    def dilated(self, delta: float) -> "Ball":
        return Ball(self.center, self.radius + delta)

    def doubled(self) -> "Ball":
        return Ball(self.center, 2.0 * self.radius)

    def to_record(self) -> dict[str, Any]:
        return {
            "shape": "ball",
            "center": list(self.center),
            "radius": self.radius,
        }


@dataclass(frozen=True)
class Rectangle(Region):
    x0: float
    x1: float
    y0: float
    y1: float

    def __post_init__(self):
        if not (self.x1 > self.x0 and self.y1 > self.y0):
            raise DomainError("Rectangle bounds must be increasing")

    def contains(self, X: np.ndarray, Y: np.ndarray) -> np.ndarray:
        return (X > self.x0) & (X < self.x1) & (Y > self.y0) & (Y < self.y1)

    def bounds(self) -> tuple[float, float, float, float]:
        return (self.x0, self.x1, self.y0, self.y1)

    def dilated(self, delta: float) -> "Rectangle":
        return Rectangle(
            self.x0 - delta, self.x1 + delta, self.y0 - delta, self.y1 + delta
        )

    def to_record(self) -> dict[str, Any]:
        return {"shape": "rectangle", "bounds": list(self.bounds())}


@dataclass(frozen=True)
class Annulus(Region):
    center: tuple[float, float]
    r_in: float
    r_out: float

    def __post_init__(self):
        object.__setattr__(self, "center", tuple(map(float, self.center)))
        if not (0 <= self.r_in < self.r_out):
            raise DomainError("Annulus radii must satisfy 0 <= r_in < r_out")

    def contains(self, X: np.ndarray, Y: np.ndarray) -> np.ndarray:
        cx, cy = self.center
        d2 = (X - cx) ** 2 + (Y - cy) ** 2
        return (d2 > self.r_in**2) & (d2 < self.r_out**2)

    def bounds(self) -> tuple[float, float, float, float]:
        cx, cy = self.center
        r = self.r_out
        return (cx - r, cx + r, cy - r, cy + r)

    def dilated(self, delta: float) -> "Annulus":
        return Annulus(
            self.center, max(self.r_in - delta, 0.0), self.r_out + delta
        )

    def to_record(self) -> dict[str, Any]:
        return {
            "shape": "annulus",
            "center": list(self.center),
            "r_in": self.r_in,
            "r_out": self.r_out,
        }


def interior_derivatives(
    u: np.ndarray, hx: float, hy: float
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """
    Central differences at interior nodes.

    Returns ``(gx, gy, uxx, uxy, uyy)`` with shape ``(nx - 2, ny - 2)``.
    Sums are grouped symmetrically so that mirrored data give mirrored
    results bit for bit.
    """
    if u.shape[0] < 3 or u.shape[1] < 3:
        raise DimensionError(f"Stencils need at least 3x3 nodes, got {u.shape}")
    center = u[1:-1, 1:-1]
    gx = (u[2:, 1:-1] - u[:-2, 1:-1]) / (2.0 * hx)
    gy = (u[1:-1, 2:] - u[1:-1, :-2]) / (2.0 * hy)
    uxx = ((u[2:, 1:-1] + u[:-2, 1:-1]) - 2.0 * center) / hx**2
    uyy = ((u[1:-1, 2:] + u[1:-1, :-2]) - 2.0 * center) / hy**2
    uxy = ((u[2:, 2:] + u[:-2, :-2]) - (u[2:, :-2] + u[:-2, 2:])) / (
        4.0 * hx * hy
    )
    return gx, gy, uxx, uxy, uyy


def infinity_laplacian_terms(
    gx: np.ndarray,
    gy: np.ndarray,
    uxx: np.ndarray,
    uxy: np.ndarray,
    uyy: np.ndarray,
) -> np.ndarray:
    return gx**2 * uxx + 2.0 * gx * gy * uxy + gy**2 * uyy


def _pad_from_interior(interior: np.ndarray) -> np.ndarray:
    return np.pad(interior, 1, mode="edge")


def gradient(field: ScalarField2D) -> VectorField2D:
    grid = field.grid
    # central in the interior, one-sided second order on the boundary
    gx, gy = np.gradient(field.values, grid.hx, grid.hy, edge_order=2)
    return VectorField2D(grid, gx, gy)


def hessian(field: ScalarField2D) -> HessianField2D:
    grid = field.grid
    _, _, uxx, uxy, uyy = interior_derivatives(field.values, grid.hx, grid.hy)
    return HessianField2D(
        grid=grid,
        xx=_pad_from_interior(uxx),
        xy=_pad_from_interior(uxy),
        yy=_pad_from_interior(uyy),
        valid=grid.interior_mask(),
    )


def compose_infinity_laplacian(
    grad: VectorField2D, hess: HessianField2D
) -> ScalarField2D:
    values = infinity_laplacian_terms(
        grad.x, grad.y, hess.xx, hess.xy, hess.yy
    )
    return ScalarField2D(grad.grid, values, hess.valid)


def infinity_laplacian(field: ScalarField2D) -> ScalarField2D:
    return compose_infinity_laplacian(gradient(field), hessian(field))


def laplacian(field: ScalarField2D) -> ScalarField2D:
    hess = hessian(field)
    return ScalarField2D(field.grid, hess.xx + hess.yy, hess.valid)


def det_hessian(field: ScalarField2D) -> ScalarField2D:
    hess = hessian(field)
    return ScalarField2D(
        field.grid, hess.xx * hess.yy - hess.xy**2, hess.valid
    )


def _region_samples(
    field: ScalarField2D, region: Region, exclude: np.ndarray | None
) -> np.ndarray:
    mask = region.mask(field.grid)
    if exclude is not None:
        mask = mask & ~exclude
    return field.values[mask]


def lp_norm(
    field: ScalarField2D,
    p: float,
    region: Region,
    exclude: np.ndarray | None = None,
) -> float:
    """
    Discrete L^p norm over the region nodes, optionally skipping the nodes
    flagged in ``exclude``. ``np.sum`` on the contiguous sample vector uses
    pairwise summation.
    """
    if not p >= 1:
        raise DomainError(f"L^p norms need p >= 1, got {p}")
    samples = np.abs(_region_samples(field, region, exclude))
    if samples.size == 0:
        return 0.0
    if np.isinf(p):
        return float(np.max(samples))
    total = np.sum(samples**p) * field.grid.cell_area
    return float(total ** (1.0 / p))


def sup_norm(field: ScalarField2D, region: Region) -> float:
    return lp_norm(field, np.inf, region)


def osc(field: ScalarField2D, region: Region) -> float:
    samples = _region_samples(field, region, None)
    if samples.size == 0:
        return 0.0
    return float(np.max(samples) - np.min(samples))
