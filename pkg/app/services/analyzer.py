"""
Mesh-refinement experiments on discrete Sobolev and BV quantities.

A scan evaluates one quantity on a family of samples of the same function
over decreasing spacings and classifies the resulting sequence as
convergent, logarithmically divergent or power divergent. Nodes on a known
degeneracy set (the ridge of the sharp example) are left out; the shrinking
exclusion is what the refinement measures.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Any, Callable, Sequence

import numpy as np
import polars as pl

from app.internal.constants import ENERGY_ALPHA_THRESHOLD
from app.internal.exceptions import DimensionError, DomainError
from app.services.fields import (
    Ball,
    Grid2D,
    Region,
    ScalarField2D,
    lp_norm,
    osc,
    sup_norm,
)
from app.utils.fitting import RateFit, Verdict, classify_sequence

logger = logging.getLogger(__name__)

RidgeMask = Callable[[Grid2D], np.ndarray]


@dataclass
class AnalyticVerdict:
    verdict: Verdict
    exponent: float
    rate: float

    def to_record(self) -> dict[str, Any]:
        return {
            "analytic_verdict": self.verdict.value,
            "analytic_exponent": self.exponent,
            "analytic_rate": self.rate,
        }


def _classify_exponent(exponent: float) -> AnalyticVerdict:
    """``∫_h^1 t^{-e} dt``: finite, logarithmic or like ``h^{1-e}``."""
    if math.isclose(exponent, 1.0, rel_tol=0.0, abs_tol=1e-12):
        return AnalyticVerdict(Verdict.LOG_DIVERGENT, exponent, 0.0)
    if exponent < 1.0:
        return AnalyticVerdict(Verdict.CONVERGENT, exponent, 1.0 - exponent)
    return AnalyticVerdict(Verdict.POWER_DIVERGENT, exponent, exponent - 1.0)


def analytic_verdict(alpha: float, p: float) -> AnalyticVerdict:
    """
    Integrability of ``|D|Dw|^α|^p`` near the ridge of
    ``w = -|x₁|^{4/3}``, which behaves like ``|x₁|^{-(3-α)p/3}``.
    """
    return _classify_exponent((3.0 - alpha) * p / 3.0)


def analytic_power_verdict(s: float) -> AnalyticVerdict:
    """Integrability of ``|Dw|^s ~ |x₁|^{s/3}``."""
    return _classify_exponent(-s / 3.0)


@dataclass
class SobolevScanReport:
    quantity: str
    alpha: float | None
    p: float
    kappa: float
    region: Region
    mesh_sequence: list[float]
    norms: list[float]
    fit: RateFit
    s: float | None = None

    @property
    def verdict(self) -> Verdict:
        return self.fit.verdict

    @property
    def fitted_rate(self) -> float:
        return self.fit.rate

    @property
    def rate_ci(self) -> tuple[float, float]:
        return self.fit.slope_ci

    def to_frame(self) -> pl.DataFrame:
        n = len(self.mesh_sequence)
        return pl.DataFrame(
            {
                "quantity": [self.quantity] * n,
                "alpha": [self.alpha] * n,
                "p": [self.p] * n,
                "kappa": [self.kappa] * n,
                "s": [self.s] * n,
                "h": self.mesh_sequence,
                "norm": self.norms,
            },
            schema_overrides={"alpha": pl.Float64, "s": pl.Float64},
        )

    def to_record(self) -> dict[str, Any]:
        return {
            "quantity": self.quantity,
            "alpha": self.alpha,
            "p": self.p,
            "kappa": self.kappa,
            "s": self.s,
            "region": self.region.to_record(),
            "meshes": len(self.mesh_sequence),
            **self.fit.to_record(),
        }


@dataclass
class _Mesh:
    field: ScalarField2D
    grad_x: np.ndarray
    grad_y: np.ndarray
    exclude: np.ndarray | None

    @property
    def h(self) -> float:
        return self.field.grid.h

    @property
    def magnitude_sq(self) -> np.ndarray:
        return self.grad_x**2 + self.grad_y**2


def _prepare(
    fields: Sequence[ScalarField2D], ridge: RidgeMask | None
) -> list[_Mesh]:
    meshes = []
    for u in sorted(fields, key=lambda f: f.grid.h, reverse=True):
        grid = u.grid
        gx, gy = np.gradient(u.values, grid.hx, grid.hy, edge_order=2)
        exclude = ridge(grid) if ridge is not None else None
        meshes.append(_Mesh(u, gx, gy, exclude))
    return meshes


def _power_gradient_norm(
    mesh: _Mesh, alpha: float, p: float, kappa: float, region: Region
) -> float:
    grid = mesh.field.grid
    powered = (mesh.magnitude_sq + kappa) ** (alpha / 2.0)
    px, py = np.gradient(powered, grid.hx, grid.hy, edge_order=2)
    magnitude = ScalarField2D(grid, np.hypot(px, py))
    return lp_norm(magnitude, p, region, mesh.exclude)


def _fit_values(norms: list[float], p: float) -> list[float]:
    if math.isinf(p):
        return norms
    return [n**p for n in norms]


def _scan(
    meshes: list[_Mesh],
    alpha: float,
    p: float,
    kappa: float,
    region: Region,
) -> SobolevScanReport:
    norms = [_power_gradient_norm(m, alpha, p, kappa, region) for m in meshes]
    hs = [m.h for m in meshes]
    fit = classify_sequence(hs, _fit_values(norms, p), raster_correction=True)
    return SobolevScanReport(
        quantity="gradient_power",
        alpha=alpha,
        p=p,
        kappa=kappa,
        region=region,
        mesh_sequence=hs,
        norms=norms,
        fit=fit,
    )


def sobolev_scan(
    fields: Sequence[ScalarField2D],
    alpha: float,
    p: float,
    region: Region,
    kappa: float = 0.0,
    ridge: RidgeMask | None = None,
) -> SobolevScanReport:
    """
    ``‖D(|Du|² + κ)^{α/2}‖_{L^p(region)}`` on every mesh and the verdict of
    the refinement fit on ``norm^p``.
    """
    if alpha <= 0:
        raise DomainError(f"alpha must be positive, got {alpha}")
    if p < 1:
        raise DomainError(f"p must be >= 1, got {p}")
    if kappa < 0:
        raise DomainError(f"kappa must be nonnegative, got {kappa}")
    report = _scan(_prepare(fields, ridge), alpha, p, kappa, region)
    logger.info(
        "Sobolev scan alpha=%g p=%g kappa=%g: %s (slope %.4g)",
        alpha,
        p,
        kappa,
        report.verdict.value,
        report.fit.slope,
    )
    return report


def negative_power_scan(
    fields: Sequence[ScalarField2D],
    s: float,
    region: Region,
    ridge: RidgeMask | None = None,
    mask_factor: float = 0.0,
) -> SobolevScanReport:
    """
    ``∫_region |Du|^s`` per mesh. Besides the ridge, nodes with
    ``|Du| <= mask_factor · h^{1/3}`` are dropped, and for negative ``s``
    also those where ``Du`` vanishes.
    """
    meshes = _prepare(fields, ridge)
    norms = []
    for mesh in meshes:
        grid = mesh.field.grid
        magnitude = np.sqrt(mesh.magnitude_sq)
        degenerate = np.zeros(grid.shape, dtype=bool)
        if mask_factor > 0:
            degenerate = magnitude <= mask_factor * grid.h ** (1.0 / 3.0)
        if s < 0:
            degenerate |= magnitude == 0
        exclude = degenerate
        if mesh.exclude is not None:
            exclude = exclude | mesh.exclude
        safe = np.where(exclude, 1.0, magnitude)
        powered = ScalarField2D(grid, safe**s)
        norms.append(lp_norm(powered, 1.0, region, exclude))
    hs = [m.h for m in meshes]
    fit = classify_sequence(hs, norms, raster_correction=True)
    logger.info(
        "Negative power scan s=%g: %s (slope %.4g)",
        s,
        fit.verdict.value,
        fit.slope,
    )
    return SobolevScanReport(
        quantity="gradient_negative_power",
        alpha=None,
        p=1.0,
        kappa=0.0,
        region=region,
        mesh_sequence=hs,
        norms=norms,
        fit=fit,
        s=s,
    )


def bv_norm(f: ScalarField2D, region: Region | None = None) -> float:
    """
    Anisotropic discrete total variation: ``|Δ_x f| h_y`` over horizontal
    edges plus ``|Δ_y f| h_x`` over vertical ones, counting the edges with
    both ends in ``region`` (the whole grid by default).
    """
    grid = f.grid
    inside = (
        region.mask(grid)
        if region is not None
        else np.ones(grid.shape, dtype=bool)
    )
    jumps_x = np.abs(np.diff(f.values, axis=0))
    jumps_y = np.abs(np.diff(f.values, axis=1))
    edges_x = inside[1:, :] & inside[:-1, :]
    edges_y = inside[:, 1:] & inside[:, :-1]
    return float(
        np.sum(jumps_x[edges_x]) * grid.hy + np.sum(jumps_y[edges_y]) * grid.hx
    )


@dataclass
class EnergyReport:
    """
    ``lhs = ∫_B |D|Du|^α|²`` against ``gradient_term = R^{-2} ∫_{2B}
    |Du|^{2α}`` plus ``bv_term = ‖f‖_{BV(2B)} [osc_{2B} u / R +
    (R ‖f‖_{C⁰(2B)})^{1/3}]^{2α-3}``. The oscillation stands in for the sup
    norm so that the ratio does not change when a constant is added to u.
    """

    alpha: float
    ball: Ball
    lhs: float
    gradient_term: float
    bv_term: float
    bv: float
    f_sup: float
    oscillation: float

    @property
    def doubled(self) -> Ball:
        return self.ball.doubled()

    @property
    def ratio(self) -> float:
        rhs = self.gradient_term + self.bv_term
        return self.lhs / rhs if rhs > 0 else math.inf

    def to_record(self) -> dict[str, Any]:
        return {
            "alpha": self.alpha,
            "center_x": self.ball.center[0],
            "center_y": self.ball.center[1],
            "radius": self.ball.radius,
            "lhs": self.lhs,
            "gradient_term": self.gradient_term,
            "bv_term": self.bv_term,
            "bv_norm": self.bv,
            "f_sup": self.f_sup,
            "oscillation": self.oscillation,
            "ratio": self.ratio,
        }


def energy_inequality_report(
    u: ScalarField2D,
    f: ScalarField2D,
    alpha: float,
    ball: Ball,
    exclude: np.ndarray | None = None,
) -> EnergyReport:
    if alpha <= ENERGY_ALPHA_THRESHOLD:
        raise DomainError(
            f"The energy inequality needs alpha > 3/2, got {alpha}"
        )
    if not u.same_grid(f):
        raise DimensionError("u and f live on different grids")
    grid = u.grid
    doubled = ball.doubled()
    R = ball.radius
    mesh = _prepare([u], None)[0]
    mesh.exclude = exclude

    lhs = _power_gradient_norm(mesh, alpha, 2.0, 0.0, ball) ** 2
    magnitude = ScalarField2D(grid, np.sqrt(mesh.magnitude_sq))
    gradient_term = lp_norm(magnitude, 2.0 * alpha, doubled) ** (
        2.0 * alpha
    ) / R**2
    bv = bv_norm(f, doubled)
    f_sup = sup_norm(f, doubled)
    oscillation = osc(u, doubled)
    base = oscillation / R + (R * f_sup) ** (1.0 / 3.0)
    report = EnergyReport(
        alpha=alpha,
        ball=ball,
        lhs=lhs,
        gradient_term=gradient_term,
        bv_term=bv * base ** (2.0 * alpha - 3.0),
        bv=bv,
        f_sup=f_sup,
        oscillation=oscillation,
    )
    logger.debug("Energy report alpha=%g: ratio %.6g", alpha, report.ratio)
    return report


@dataclass
class GehringReport:
    alpha: float
    scans: list[SobolevScanReport] = field(default_factory=list)
    analytic: list[AnalyticVerdict] = field(default_factory=list)

    def to_frame(self) -> pl.DataFrame:
        return pl.DataFrame(
            [
                {"q": scan.p, **scan.fit.to_record(), **exact.to_record()}
                for scan, exact in zip(self.scans, self.analytic)
            ]
        )


def gehring_probe(
    fields: Sequence[ScalarField2D],
    alpha: float,
    region: Region,
    q_list: Sequence[float],
    ridge: RidgeMask | None = None,
) -> GehringReport:
    """
    Exploratory integrability of ``|D|Du|^α|^q`` for ``q`` in ``[2, 3]``.
    The analytic column is the answer for the sharp example only.
    """
    if alpha <= ENERGY_ALPHA_THRESHOLD:
        raise DomainError(f"The probe needs alpha > 3/2, got {alpha}")
    if any(not 2.0 <= q <= 3.0 for q in q_list):
        raise DomainError(f"Exponents must lie in [2, 3], got {list(q_list)}")
    meshes = _prepare(fields, ridge)
    report = GehringReport(alpha=alpha)
    for q in q_list:
        scan = _scan(meshes, alpha, q, 0.0, region)
        report.scans.append(scan)
        report.analytic.append(analytic_verdict(alpha, q))
        logger.info(
            "Gehring probe alpha=%g q=%g: %s", alpha, q, scan.verdict.value
        )
    return report


@dataclass
class ClassificationTable:
    reports: list[SobolevScanReport]
    analytic: list[AnalyticVerdict]

    @property
    def agreement(self) -> float:
        hits = sum(
            r.verdict == a.verdict for r, a in zip(self.reports, self.analytic)
        )
        return hits / len(self.reports) if self.reports else 1.0

    def to_frame(self) -> pl.DataFrame:
        rows = []
        for report, exact in zip(self.reports, self.analytic):
            rows.append(
                {
                    "alpha": report.alpha,
                    "p": report.p,
                    **report.fit.to_record(),
                    **exact.to_record(),
                    "agrees": report.verdict == exact.verdict,
                }
            )
        return pl.DataFrame(rows)


def classification_table(
    fields: Sequence[ScalarField2D],
    alphas: Sequence[float],
    ps: Sequence[float],
    region: Region,
    ridge: RidgeMask | None = None,
) -> ClassificationTable:
    """Every ``(α, p)`` pair scanned on the same meshes and gradients."""
    meshes = _prepare(fields, ridge)
    table = ClassificationTable(reports=[], analytic=[])
    for alpha in alphas:
        for p in ps:
            table.reports.append(_scan(meshes, alpha, p, 0.0, region))
            table.analytic.append(analytic_verdict(alpha, p))
    logger.info(
        "Classification table: %d cells, agreement %.1f%%",
        len(table.reports),
        100.0 * table.agreement,
    )
    return table
