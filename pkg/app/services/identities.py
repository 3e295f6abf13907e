"""
Pointwise checks of the algebraic identities satisfied by solutions of
``-Δ∞u = f`` and by smooth fields in general.

All checks work on the interior nodes of the grid, optionally restricted to
a region, and drop the nodes where the gradient is too small for the
identity to be evaluated (``|Du| <= mask_threshold``).
"""

import logging
from dataclasses import dataclass
from enum import Enum
from typing import Any

import numpy as np

from app.internal.constants import DEFAULT_MASK_FACTOR
from app.internal.exceptions import DimensionError, DomainError
from app.services.fields import (
    Region,
    ScalarField2D,
    infinity_laplacian_terms,
    interior_derivatives,
)
from app.utils.metrics import (
    max_error,
    mean_error,
    relative_errors,
    vector_relative_errors,
)

logger = logging.getLogger(__name__)


class IdentityName(str, Enum):
    DETERMINANT = "determinant"
    POINTWISE = "pointwise_pw"
    CHAIN = "chain"
    DERIVATIVE_1D = "derivative_1d"


@dataclass
class IdentityReport:
    identity_name: IdentityName
    max_rel_error: float
    mean_rel_error: float
    excluded_fraction: float
    mask_threshold: float
    n_nodes: int

    def to_record(self) -> dict[str, Any]:
        return {
            "identity": self.identity_name.value,
            "max_rel_error": self.max_rel_error,
            "mean_rel_error": self.mean_rel_error,
            "excluded_fraction": self.excluded_fraction,
            "mask_threshold": self.mask_threshold,
            "n_nodes": self.n_nodes,
        }


@dataclass
class BoundReport:
    alpha: float
    max_ratio: float
    mean_ratio: float
    excluded_fraction: float
    mask_threshold: float
    n_nodes: int

    @property
    def holds(self) -> bool:
        return self.max_ratio <= 1.0

    def to_record(self) -> dict[str, Any]:
        return {
            "alpha": self.alpha,
            "max_ratio": self.max_ratio,
            "mean_ratio": self.mean_ratio,
            "excluded_fraction": self.excluded_fraction,
            "mask_threshold": self.mask_threshold,
            "n_nodes": self.n_nodes,
            "holds": self.holds,
        }


def default_mask_threshold(field: ScalarField2D) -> float:
    return DEFAULT_MASK_FACTOR * field.grid.h ** (1.0 / 3.0)


def _check_pair(u: ScalarField2D, f: ScalarField2D | None):
    if f is not None and not u.same_grid(f):
        raise DimensionError(
            f"Field shape {u.values.shape} does not match"
            f" right-hand side shape {f.values.shape}"
        )


def _selection(
    u: ScalarField2D,
    magnitude: np.ndarray,
    mask_threshold: float,
    region: Region | None,
) -> tuple[np.ndarray, float]:
    """
    Interior-shaped selection of the nodes an identity is evaluated on and
    the fraction of candidate nodes dropped by the degeneracy mask.
    """
    candidates = np.ones_like(magnitude, dtype=bool)
    if region is not None:
        candidates = region.mask(u.grid)[1:-1, 1:-1]
    if u.valid is not None:
        candidates &= u.valid[1:-1, 1:-1]
    keep = candidates
    if mask_threshold > 0:
        keep = candidates & (magnitude > mask_threshold)
    total = int(np.count_nonzero(candidates))
    excluded = total - int(np.count_nonzero(keep))
    fraction = excluded / total if total else 0.0
    return keep, fraction


def _interior_gradient(values: np.ndarray, hx: float, hy: float):
    gx = (values[2:, 1:-1] - values[:-2, 1:-1]) / (2.0 * hx)
    gy = (values[1:-1, 2:] - values[1:-1, :-2]) / (2.0 * hy)
    return gx, gy


def _magnitude_gradient(
    u: ScalarField2D, power: float
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """
    Interior values of ``Du`` and ``D(|Du|^power)``, both with central
    differences. ``Du`` on the boundary ring comes from one-sided stencils so
    that the outer interior layer still has a centred derivative of
    ``|Du|^power``.
    """
    grid = u.grid
    gx, gy = np.gradient(u.values, grid.hx, grid.hy, edge_order=2)
    powered = np.hypot(gx, gy) ** power
    px, py = _interior_gradient(powered, grid.hx, grid.hy)
    return gx[1:-1, 1:-1], gy[1:-1, 1:-1], px, py


def build_report(
    name: IdentityName,
    errors: np.ndarray,
    excluded_fraction: float,
    mask_threshold: float,
) -> IdentityReport:
    report = IdentityReport(
        identity_name=name,
        max_rel_error=max_error(errors),
        mean_rel_error=mean_error(errors),
        excluded_fraction=excluded_fraction,
        mask_threshold=mask_threshold,
        n_nodes=int(errors.size),
    )
    logger.debug(
        "%s identity: max %.3e, mean %.3e over %d nodes",
        name.value,
        report.max_rel_error,
        report.mean_rel_error,
        report.n_nodes,
    )
    return report


def check_determinant_identity(
    field: ScalarField2D,
    eps: float = 0.0,
    f: ScalarField2D | None = None,
    mask_threshold: float = 0.0,
    region: Region | None = None,
) -> IdentityReport:
    """
    Compares ``(-det D²v)|Dv|²`` with its expansion.

    Without ``f`` the structural form ``|D²v Dv|² - Δv Δ∞v`` is used,
    which holds for any smooth field. With ``f`` the field is treated as a
    solution of ``-Δ∞v - eps Δv = f`` and the right-hand side becomes
    ``|D²v Dv|² + eps (Δv)² + f Δv``.
    """
    if eps < 0:
        raise DomainError(f"eps must be nonnegative, got {eps}")
    if f is None and eps > 0:
        raise DomainError("The full form with eps > 0 needs f")
    _check_pair(field, f)
    grid = field.grid
    gx, gy, uxx, uxy, uyy = interior_derivatives(
        field.values, grid.hx, grid.hy
    )
    grad_sq = gx**2 + gy**2
    lhs = -(uxx * uyy - uxy**2) * grad_sq
    hdx = uxx * gx + uxy * gy
    hdy = uxy * gx + uyy * gy
    lap = uxx + uyy
    if f is None:
        rhs = (hdx**2 + hdy**2) - lap * infinity_laplacian_terms(
            gx, gy, uxx, uxy, uyy
        )
    else:
        f_inner = f.values[1:-1, 1:-1]
        rhs = (hdx**2 + hdy**2) + eps * lap**2 + f_inner * lap

    keep, excluded = _selection(
        field, np.sqrt(grad_sq), mask_threshold, region
    )
    errors = relative_errors(lhs[keep], rhs[keep], normalized=True)
    return build_report(
        IdentityName.DETERMINANT, errors, excluded, mask_threshold
    )


def check_pointwise_identity(
    u: ScalarField2D,
    f: ScalarField2D,
    alpha: float,
    mask_threshold: float | None = None,
    region: Region | None = None,
) -> IdentityReport:
    """
    Checks ``-<D(|Du|^α), Du> = α |Du|^(α-2) f``.

    The factor is ``α``: the identity ``(|Du|²)_i u_i = -2f`` and the chain
    rule leave no room for ``2α``.
    """
    if alpha <= 0:
        raise DomainError(f"alpha must be positive, got {alpha}")
    _check_pair(u, f)
    if mask_threshold is None:
        mask_threshold = default_mask_threshold(u)
    gx, gy, px, py = _magnitude_gradient(u, alpha)
    magnitude = np.hypot(gx, gy)
    keep, excluded = _selection(u, magnitude, mask_threshold, region)

    lhs = -(px[keep] * gx[keep] + py[keep] * gy[keep])
    rhs = (
        alpha
        * magnitude[keep] ** (alpha - 2.0)
        * f.values[1:-1, 1:-1][keep]
    )
    errors = relative_errors(lhs, rhs)
    return build_report(
        IdentityName.POINTWISE, errors, excluded, mask_threshold
    )


def check_chain_identity(
    u: ScalarField2D,
    alpha: float,
    tau: float,
    mask_threshold: float | None = None,
    region: Region | None = None,
) -> IdentityReport:
    """Checks ``|Du|^τ D|Du|^α = α/(α+τ) D|Du|^(α+τ)``."""
    if alpha <= 0 or tau <= 0:
        raise DomainError(
            f"alpha and tau must be positive, got {alpha} and {tau}"
        )
    if mask_threshold is None:
        mask_threshold = default_mask_threshold(u)
    gx, gy, ax, ay = _magnitude_gradient(u, alpha)
    _, _, sx, sy = _magnitude_gradient(u, alpha + tau)
    magnitude = np.hypot(gx, gy)
    keep, excluded = _selection(u, magnitude, mask_threshold, region)

    weight = magnitude[keep] ** tau
    factor = alpha / (alpha + tau)
    errors = vector_relative_errors(
        (weight * ax[keep], weight * ay[keep]),
        (factor * sx[keep], factor * sy[keep]),
    )
    return build_report(
        IdentityName.CHAIN, errors, excluded, mask_threshold
    )


def check_degeneracy_bound(
    u: ScalarField2D,
    f: ScalarField2D,
    alpha: float,
    mask_threshold: float | None = None,
    region: Region | None = None,
) -> BoundReport:
    """
    Pointwise lower bound ``|Du|^(2α-6) <= α^{-1} f^{-2} |D|Du|^α|²`` for
    ``α > 3/2``, reported through the ratio
    ``α f² |Du|^(2α-6) / |D|Du|^α|²`` (at most 1, equal to ``1/α`` on the
    one-dimensional profile ``-|x₁|^{4/3}``).
    """
    if alpha <= 1.5:
        raise DomainError(f"The bound needs alpha > 3/2, got {alpha}")
    _check_pair(u, f)
    if mask_threshold is None:
        mask_threshold = default_mask_threshold(u)
    gx, gy, px, py = _magnitude_gradient(u, alpha)
    magnitude = np.hypot(gx, gy)
    keep, excluded = _selection(u, magnitude, mask_threshold, region)

    numerator = (
        alpha
        * f.values[1:-1, 1:-1][keep] ** 2
        * magnitude[keep] ** (2.0 * alpha - 6.0)
    )
    denominator = px[keep] ** 2 + py[keep] ** 2
    ratio = np.divide(
        numerator,
        denominator,
        out=np.full_like(numerator, np.inf),
        where=denominator > 0,
    )
    return BoundReport(
        alpha=alpha,
        max_ratio=max_error(ratio),
        mean_ratio=mean_error(ratio),
        excluded_fraction=excluded,
        mask_threshold=mask_threshold,
        n_nodes=int(ratio.size),
    )
