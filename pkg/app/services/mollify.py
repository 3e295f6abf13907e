import logging
from dataclasses import dataclass
from functools import cached_property
from typing import Any

import numpy as np
from scipy import ndimage  # type: ignore[import-untyped]

from app.internal.exceptions import DomainError, ResolutionError
from app.services.fields import Grid2D, Region, ScalarField2D

logger = logging.getLogger(__name__)


def bump(z_squared: np.ndarray) -> np.ndarray:
    inside = z_squared < 1.0
    safe = np.where(inside, z_squared, 0.0)
    return np.where(inside, np.exp(-1.0 / (1.0 - safe)), 0.0)


@dataclass(frozen=True)
class MollifierKernel:
    """
    The bump ``exp(-1/(1-|z|²))`` of radius ``width`` sampled on the grid
    spacing and renormalized to unit discrete mass.
    """

    width: float
    hx: float
    hy: float

    def __post_init__(self):
        if self.width <= 0:
            raise DomainError(
                f"Mollifier width must be positive, got {self.width}"
            )
        spacing = max(self.hx, self.hy)
        if self.width < 2.0 * spacing:
            raise ResolutionError(
                f"Mollifier width {self.width:.4g} is below two grid"
                f" spacings ({2.0 * spacing:.4g})"
            )

    @classmethod
    def for_grid(cls, grid: Grid2D, width: float) -> "MollifierKernel":
        return cls(width, grid.hx, grid.hy)

    @property
    def radius_x(self) -> int:
        return int(np.floor(self.width / self.hx))

    @property
    def radius_y(self) -> int:
        return int(np.floor(self.width / self.hy))

    @cached_property
    def offsets(self) -> tuple[np.ndarray, np.ndarray]:
        ix = np.arange(-self.radius_x, self.radius_x + 1) * self.hx
        iy = np.arange(-self.radius_y, self.radius_y + 1) * self.hy
        return np.meshgrid(ix, iy, indexing="ij")

    @cached_property
    def weights(self) -> np.ndarray:
        dx, dy = self.offsets
        raw = bump((dx**2 + dy**2) / self.width**2)
        return raw / np.sum(raw)

    def first_moment(self) -> float:
        """``Σ w |z|``: bounds ``|f^ε - f|`` for 1-Lipschitz ``f``."""
        dx, dy = self.offsets
        return float(np.sum(self.weights * np.hypot(dx, dy)))


def eroded_mask(grid: Grid2D, kernel: MollifierKernel) -> np.ndarray:
    rx, ry = kernel.radius_x, kernel.radius_y
    mask = np.zeros(grid.shape, dtype=bool)
    mask[rx : grid.nx - rx, ry : grid.ny - ry] = True
    return mask


def mollify(f: ScalarField2D, eps: float) -> ScalarField2D:
    """
    Discrete convolution of ``f`` with the sampled bump of radius ``eps``.
    Only nodes at least one kernel radius away from the grid boundary carry
    reliable values; the others are flagged in ``valid``.
    """
    kernel = MollifierKernel.for_grid(f.grid, eps)
    valid = eroded_mask(f.grid, kernel)
    if not valid.any():
        raise DomainError(
            f"Mollifier width {eps:.4g} leaves no node with full support"
        )
    values = ndimage.convolve(f.values, kernel.weights, mode="nearest")
    if f.valid is not None:
        valid &= ndimage.binary_erosion(
            f.valid,
            structure=np.ones_like(kernel.weights, dtype=bool),
            border_value=1,
        )
    logger.debug(
        "Mollified f with eps=%.4g (%dx%d kernel)",
        eps,
        *kernel.weights.shape,
    )
    return ScalarField2D(f.grid, values, valid)


@dataclass
class SupNormReport:
    eps: float
    mollified_sup: float
    raw_sup: float

    @property
    def holds(self) -> bool:
        # averaging may round one ulp above the maximum
        return self.mollified_sup <= self.raw_sup * (1.0 + 1e-12)

    def to_record(self) -> dict[str, Any]:
        return {
            "eps": self.eps,
            "mollified_sup": self.mollified_sup,
            "raw_sup": self.raw_sup,
            "holds": self.holds,
        }


def sup_norm_control(
    f: ScalarField2D, eps: float, region: Region | None = None
) -> SupNormReport:
    """
    Compares ``sup |f^ε|`` on ``region`` with ``sup |f|`` on the region grown
    by the kernel reach, or on valid nodes against the whole grid when no
    region is given.
    """
    mollified = mollify(f, eps)
    assert mollified.valid is not None
    if region is None:
        inner = mollified.valid
        outer = np.ones(f.grid.shape, dtype=bool)
    else:
        inner = region.mask(f.grid) & mollified.valid
        X, Y = f.grid.mesh()
        outer = region.dilated(eps + f.grid.h).contains(X, Y)
    report = SupNormReport(
        eps=eps,
        mollified_sup=float(np.max(np.abs(mollified.values[inner]))),
        raw_sup=float(np.max(np.abs(f.values[outer]))),
    )
    logger.debug(
        "Sup norm control eps=%.4g: %.6g <= %.6g",
        eps,
        report.mollified_sup,
        report.raw_sup,
    )
    return report
