"""
Vanishing-viscosity solver for ``-Δ∞u - εΔu = f`` with Dirichlet data.

Each ε stage relaxes the parabolic problem ``u_t = Δ∞u + εΔu + f`` until
the interior residual drops below the tolerance; the next stage starts
from the current iterate. Two pseudo-time steppings are available:
explicit Jacobi sweeps, and linearly implicit steps that solve one sparse
system per step with a growing step size.

The ∞-Laplacian is discretized through

    Δ∞u = ⅓ ∂x((∂x u)³) + ⅓ ∂y((∂y u)³) + 2 ∂x u ∂y u ∂xy u

with the axis terms in conservative form (differences of cubed one-sided
slopes) and the mixed term with central differences. The axis terms are
monotone, so a kink where the gradient changes sign costs a residual of
order ``|Du|³/h`` instead of an unbounded spike, and solutions whose
gradient is aligned with an axis (such as the sharp example ``w``) are
resolved without a lower bound on ε. The mixed term is still central:
convergence to the viscosity solution is checked against exact solutions,
never assumed.
"""

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Any, Sequence

import numpy as np
import polars as pl
from scipy import sparse  # type: ignore[import-untyped]
from scipy.sparse.linalg import spsolve  # type: ignore[import-untyped]

from app.internal.constants import (
    DEFAULT_DT_SAFETY,
    DIVERGENCE_GROWTH,
    DIVERGENCE_WINDOW,
    IMPLICIT_MAX_REJECTIONS,
    IMPLICIT_MAX_STEP,
    IMPLICIT_STEP_CUT,
    IMPLICIT_STEP_GROWTH,
    SHARP_W_RHS,
    SHARP_W_SLOPE,
)
from app.internal.exceptions import (
    DimensionError,
    DivergenceError,
    DomainError,
    NotApplicableError,
)
from app.services.fields import (
    Ball,
    Grid2D,
    ScalarField2D,
    gradient,
    osc,
    sup_norm,
)
from app.services.mollify import mollify
from app.utils.metrics import rmse, sup_distance

logger = logging.getLogger(__name__)

STEPPINGS = ("explicit", "implicit")
INTERIOR = (slice(1, -1), slice(1, -1))


@dataclass
class ViscousRunConfig:
    """
    ``eps_schedule`` must be strictly decreasing. With ``stepping`` set to
    ``"implicit"`` every entry of ``max_iters`` counts one sparse solve,
    rejected steps included.
    """

    eps_schedule: list[float]
    mollify_eps: float = 0.0
    dt_safety: float = DEFAULT_DT_SAFETY
    residual_tol: float = 1e-6
    max_iters: int = 200_000
    keep_snapshots: bool = False
    grid: Grid2D | None = None
    stepping: str = "explicit"

    def __post_init__(self):
        self.eps_schedule = [float(e) for e in self.eps_schedule]
        if not self.eps_schedule:
            raise DomainError("The eps schedule is empty")
        if any(not math.isfinite(e) or e <= 0 for e in self.eps_schedule):
            raise DomainError("Every eps in the schedule must be positive")
        if any(
            b >= a for a, b in zip(self.eps_schedule, self.eps_schedule[1:])
        ):
            raise DomainError(
                "The eps schedule must be strictly decreasing, got "
                f"{self.eps_schedule}"
            )
        if self.mollify_eps < 0:
            raise DomainError("mollify_eps must be nonnegative")
        if not 0 < self.dt_safety <= 1:
            raise DomainError(
                f"dt_safety must lie in (0, 1], got {self.dt_safety}"
            )
        if not self.residual_tol > 0:
            raise DomainError("residual_tol must be positive")
        if self.max_iters <= 0:
            raise DomainError("max_iters must be positive")
        if self.stepping not in STEPPINGS:
            raise DomainError(
                f"Unknown stepping '{self.stepping}', expected one of "
                f"{STEPPINGS}"
            )

    @staticmethod
    def geometric_schedule(
        start: float, stop: float, ratio: float = 0.5
    ) -> list[float]:
        """``start, start·ratio, ...`` while above ``stop``, then ``stop``."""
        if not 0 < ratio < 1 or stop <= 0 or start < stop:
            raise DomainError(
                "Geometric schedules need 0 < ratio < 1 and start >= stop > 0"
            )
        schedule = []
        eps = start
        while eps > stop * (1.0 + 1e-12):
            schedule.append(eps)
            eps *= ratio
        schedule.append(stop)
        return schedule


@dataclass
class StageLog:
    eps: float
    iterations: int
    residual: float
    converged: bool
    # last explicit step, or last implicit step size
    dt: float
    rejected: int = 0

    def to_record(self) -> dict[str, Any]:
        return {
            "eps": self.eps,
            "iterations": self.iterations,
            "residual": self.residual,
            "converged": self.converged,
            "dt": self.dt,
            "rejected": self.rejected,
        }


@dataclass
class ViscousSolution:
    u_eps: ScalarField2D
    eps_final: float
    residual_max: float
    converged: bool
    f_used: ScalarField2D
    stages: list[StageLog] = field(default_factory=list)
    snapshots: list[ScalarField2D] = field(default_factory=list)

    @property
    def iters_used(self) -> list[int]:
        return [stage.iterations for stage in self.stages]

    def stages_frame(self) -> pl.DataFrame:
        return pl.DataFrame([stage.to_record() for stage in self.stages])

    def summary(self) -> dict[str, Any]:
        return {
            "eps_final": self.eps_final,
            "residual_max": self.residual_max,
            "converged": self.converged,
            "iters_used": self.iters_used,
        }


def coons_interpolant(g: np.ndarray) -> np.ndarray:
    """
    Bilinearly blended (transfinite) interpolant of the boundary values of
    ``g``; boundary nodes are copied from ``g`` unchanged.
    """
    nx, ny = g.shape
    s = np.linspace(0.0, 1.0, nx)[:, None]
    t = np.linspace(0.0, 1.0, ny)[None, :]
    left, right = g[0, :][None, :], g[-1, :][None, :]
    bottom, top = g[:, 0][:, None], g[:, -1][:, None]
    corners = (
        (1 - s) * (1 - t) * g[0, 0]
        + s * (1 - t) * g[-1, 0]
        + (1 - s) * t * g[0, -1]
        + s * t * g[-1, -1]
    )
    u = (1 - s) * left + s * right + (1 - t) * bottom + t * top - corners
    u[0, :], u[-1, :] = g[0, :], g[-1, :]
    u[:, 0], u[:, -1] = g[:, 0], g[:, -1]
    return u


@dataclass
class _Stencil:
    """One-sided slopes and the mixed derivative at interior nodes."""

    xp: np.ndarray
    xm: np.ndarray
    yp: np.ndarray
    ym: np.ndarray
    uxy: np.ndarray

    @classmethod
    def of(cls, u: np.ndarray, hx: float, hy: float) -> "_Stencil":
        center = u[1:-1, 1:-1]
        # grouped so that mirrored grids give bit-identical values
        diagonals = (u[2:, 2:] + u[:-2, :-2]) - (u[2:, :-2] + u[:-2, 2:])
        return cls(
            xp=(u[2:, 1:-1] - center) / hx,
            xm=(center - u[:-2, 1:-1]) / hx,
            yp=(u[1:-1, 2:] - center) / hy,
            ym=(center - u[1:-1, :-2]) / hy,
            uxy=diagonals / (4.0 * hx * hy),
        )

    @property
    def gx(self) -> np.ndarray:
        return 0.5 * (self.xp + self.xm)

    @property
    def gy(self) -> np.ndarray:
        return 0.5 * (self.yp + self.ym)


def _cube(a: np.ndarray) -> np.ndarray:
    return a * a * a


def _interior_residual(
    u: np.ndarray, f_inner: np.ndarray, eps: float, hx: float, hy: float
) -> tuple[np.ndarray, float]:
    s = _Stencil.of(u, hx, hy)
    gx, gy = s.gx, s.gy
    axis_x = (_cube(s.xp) - _cube(s.xm)) / (3.0 * hx)
    axis_y = (_cube(s.yp) - _cube(s.ym)) / (3.0 * hy)
    laplacian = (s.xp - s.xm) / hx + (s.yp - s.ym) / hy
    residual = (
        (axis_x + axis_y)
        + (2.0 * gx) * gy * s.uxy
        + eps * laplacian
        + f_inner
    )
    return residual, float(np.max(gx * gx + gy * gy))


def _jacobian(
    u: np.ndarray, eps: float, hx: float, hy: float
) -> sparse.csc_matrix:
    """
    Derivative of the interior residual with respect to the interior
    values, on the nine-point stencil; boundary values are data.
    """
    s = _Stencil.of(u, hx, hy)
    gx, gy = s.gx, s.gy
    ex, ey = eps / hx**2, eps / hy**2
    cross = gx * gy / (2.0 * hx * hy)
    bands = {
        (0, 0): -(s.xp**2 + s.xm**2) / hx**2
        - (s.yp**2 + s.ym**2) / hy**2
        - 2.0 * (ex + ey),
        (1, 0): s.xp**2 / hx**2 + gy * s.uxy / hx + ex,
        (-1, 0): s.xm**2 / hx**2 - gy * s.uxy / hx + ex,
        (0, 1): s.yp**2 / hy**2 + gx * s.uxy / hy + ey,
        (0, -1): s.ym**2 / hy**2 - gx * s.uxy / hy + ey,
        (1, 1): cross,
        (-1, -1): cross,
        (1, -1): -cross,
        (-1, 1): -cross,
    }
    m, n = gx.shape
    index = np.arange(m * n).reshape(m, n)
    rows, cols, data = [], [], []
    for (di, dj), coefficient in bands.items():
        source = (
            slice(max(0, -di), m - max(0, di)),
            slice(max(0, -dj), n - max(0, dj)),
        )
        target = (
            slice(max(0, di), m - max(0, -di)),
            slice(max(0, dj), n - max(0, -dj)),
        )
        rows.append(index[source].ravel())
        cols.append(index[target].ravel())
        data.append(coefficient[source].ravel())
    size = m * n
    return sparse.csc_matrix(
        (
            np.concatenate(data),
            (np.concatenate(rows), np.concatenate(cols)),
        ),
        shape=(size, size),
    )


def residual_field(
    u: ScalarField2D, f: ScalarField2D, eps: float
) -> ScalarField2D:
    """``Δ∞u + εΔu + f`` at interior nodes; zero and invalid elsewhere."""
    if not u.same_grid(f):
        raise DimensionError("u and f live on different grids")
    grid = u.grid
    inner, _ = _interior_residual(
        u.values, f.values[INTERIOR], eps, grid.hx, grid.hy
    )
    values = np.zeros(grid.shape)
    values[INTERIOR] = inner
    return ScalarField2D(grid, values, grid.interior_mask())


def _normalized_sign(f: ScalarField2D) -> float:
    if np.all(f.values > 0):
        return 1.0
    if np.all(f.values < 0):
        return -1.0
    raise DomainError(
        "f must be strictly positive (or strictly negative) on the grid"
    )


def _right_hand_side(f: ScalarField2D, mollify_eps: float) -> ScalarField2D:
    if mollify_eps <= 0:
        return f
    mollified = mollify(f, mollify_eps)
    assert mollified.valid is not None
    values = np.where(mollified.valid, mollified.values, f.values)
    return ScalarField2D(f.grid, values)


def _explicit_step(
    grid: Grid2D, eps: float, grad_sq: float, config: ViscousRunConfig
) -> float:
    h = min(grid.hx, grid.hy)
    return config.dt_safety * h**2 / (4.0 * eps + 8.0 * grad_sq + h**2)


class _DivergenceMonitor:
    """
    Flags a stage whose residual is not finite, or stays above
    ``DIVERGENCE_GROWTH`` times its running minimum for
    ``DIVERGENCE_WINDOW`` consecutive iterations.
    """

    def __init__(self, eps: float):
        self.eps = eps
        self.running_min = math.inf
        self.above = 0

    def update(self, res: float, iteration: int, dt: float) -> None:
        self.running_min = min(self.running_min, res)
        if res > DIVERGENCE_GROWTH * self.running_min:
            self.above += 1
        else:
            self.above = 0
        if not math.isfinite(res) or self.above >= DIVERGENCE_WINDOW:
            self.fail(res, iteration, dt, "diverged")

    def fail(self, res: float, iteration: int, dt: float, what: str):
        diagnostics = {
            "eps": self.eps,
            "sweep": iteration,
            "residual": res,
            "running_min": self.running_min,
            "dt": dt,
        }
        raise DivergenceError(
            f"Relaxation {what} at eps={self.eps:.4g} after {iteration}"
            " iterations",
            diagnostics,
        )


def _explicit_stage(
    u: np.ndarray,
    f_inner: np.ndarray,
    eps: float,
    grid: Grid2D,
    config: ViscousRunConfig,
) -> StageLog:
    monitor = _DivergenceMonitor(eps)
    dt = 0.0
    residual, grad_sq = _interior_residual(u, f_inner, eps, grid.hx, grid.hy)
    res = float(np.max(np.abs(residual)))
    if not math.isfinite(res):
        monitor.fail(res, 0, dt, "started from a non-finite residual")
    sweeps = 0
    while res > config.residual_tol and sweeps < config.max_iters:
        dt = _explicit_step(grid, eps, grad_sq, config)
        u[INTERIOR] += dt * residual
        sweeps += 1
        residual, grad_sq = _interior_residual(
            u, f_inner, eps, grid.hx, grid.hy
        )
        res = float(np.max(np.abs(residual)))
        monitor.update(res, sweeps, dt)
        if logger.isEnabledFor(logging.DEBUG) and sweeps % 1000 == 0:
            logger.debug(
                "eps=%.4g sweep %d: residual %.4e, dt %.3e",
                eps,
                sweeps,
                res,
                dt,
            )
    return StageLog(
        eps=eps,
        iterations=sweeps,
        residual=res,
        converged=res <= config.residual_tol,
        dt=dt,
    )


def _implicit_stage(
    u: np.ndarray,
    f_inner: np.ndarray,
    eps: float,
    grid: Grid2D,
    config: ViscousRunConfig,
) -> StageLog:
    """
    Steps ``(I/τ - J) δ = R`` from ``τ`` equal to the explicit step. A
    step is kept only when it lowers the sup residual, and then ``τ``
    grows; otherwise ``τ`` shrinks and the step is retried. The stage
    stops unconverged after ``IMPLICIT_MAX_REJECTIONS`` rejections in a
    row.
    """
    monitor = _DivergenceMonitor(eps)
    residual, grad_sq = _interior_residual(u, f_inner, eps, grid.hx, grid.hy)
    res = float(np.max(np.abs(residual)))
    tau = _explicit_step(grid, eps, grad_sq, config)
    if not math.isfinite(res):
        monitor.fail(res, 0, tau, "started from a non-finite residual")
    identity = sparse.identity(residual.size, format="csc")
    steps = rejected = in_a_row = 0
    while res > config.residual_tol and steps < config.max_iters:
        steps += 1
        system = identity / tau - _jacobian(u, eps, grid.hx, grid.hy)
        delta = spsolve(system, residual.ravel()).reshape(residual.shape)
        trial = u.copy()
        trial[INTERIOR] += delta
        trial_residual, _ = _interior_residual(
            trial, f_inner, eps, grid.hx, grid.hy
        )
        trial_res = float(np.max(np.abs(trial_residual)))
        if math.isfinite(trial_res) and trial_res < res:
            u[...] = trial
            residual, res = trial_residual, trial_res
            tau = min(tau * IMPLICIT_STEP_GROWTH, IMPLICIT_MAX_STEP)
            in_a_row = 0
        else:
            tau *= IMPLICIT_STEP_CUT
            rejected += 1
            in_a_row += 1
            if in_a_row >= IMPLICIT_MAX_REJECTIONS:
                logger.warning(
                    "eps=%.4g: %d rejected steps in a row, stopping at"
                    " residual %.3e",
                    eps,
                    in_a_row,
                    res,
                )
                break
        monitor.update(res, steps, tau)
        logger.debug(
            "eps=%.4g step %d: residual %.4e, tau %.3e",
            eps,
            steps,
            res,
            tau,
        )
    return StageLog(
        eps=eps,
        iterations=steps,
        residual=res,
        converged=res <= config.residual_tol,
        dt=tau,
        rejected=rejected,
    )


def solve_viscous(
    f: ScalarField2D,
    g: ScalarField2D,
    config: ViscousRunConfig,
    init: ScalarField2D | None = None,
) -> ViscousSolution:
    """
    Solves every stage of ``config.eps_schedule`` in turn. Only the boundary
    nodes of ``g`` are used. Negative ``f`` is handled by solving for
    ``-u`` with ``-f`` and ``-g``.
    """
    grid = f.grid
    if not f.same_grid(g):
        raise DimensionError("f and g live on different grids")
    if config.grid is not None and config.grid != grid:
        raise DimensionError("The configured grid does not match f")
    if init is not None and not f.same_grid(init):
        raise DimensionError("init lives on a different grid")

    sign = _normalized_sign(f)
    f_used = _right_hand_side(f, config.mollify_eps)
    f_inner = sign * f_used.values[INTERIOR]
    boundary_data = sign * g.values
    if init is None:
        u = coons_interpolant(boundary_data)
    else:
        u = sign * init.values.copy()
        boundary = grid.boundary_mask()
        u[boundary] = boundary_data[boundary]

    run_stage = (
        _implicit_stage if config.stepping == "implicit" else _explicit_stage
    )
    stages: list[StageLog] = []
    snapshots: list[ScalarField2D] = []
    for eps in config.eps_schedule:
        with np.errstate(over="ignore", invalid="ignore"):
            stage = run_stage(u, f_inner, eps, grid, config)
        stages.append(stage)
        logger.info(
            "Stage eps=%.4g: %d %s steps, residual %.3e%s",
            eps,
            stage.iterations,
            config.stepping,
            stage.residual,
            "" if stage.converged else " (not converged)",
        )
        if config.keep_snapshots:
            snapshots.append(ScalarField2D(grid, sign * u))

    final = stages[-1]
    return ViscousSolution(
        u_eps=ScalarField2D(grid, sign * u),
        eps_final=final.eps,
        residual_max=final.residual,
        converged=final.converged,
        f_used=f_used,
        stages=stages,
        snapshots=snapshots,
    )


@dataclass
class ContinuationReport:
    eps: list[float]
    sup_distances: list[float]
    rms_distances: list[float]
    exact_errors: list[float] | None
    solution: ViscousSolution

    @property
    def is_decreasing(self) -> bool:
        d = self.sup_distances
        return all(b < a for a, b in zip(d, d[1:]))

    def to_frame(self) -> pl.DataFrame:
        data: dict[str, list[Any]] = {
            "eps": self.eps,
            "sup_distance": self.sup_distances,
            "rms_distance": self.rms_distances,
        }
        if self.exact_errors is not None:
            data["exact_error"] = self.exact_errors
        return pl.DataFrame(data)


def continuation_study(
    f: ScalarField2D,
    g: ScalarField2D,
    config: ViscousRunConfig,
    exact: ScalarField2D | None = None,
) -> ContinuationReport:
    """
    Sup distance between the solutions of consecutive ε stages, one row per
    stage after the first, with the sup error against ``exact`` if given.
    """
    if len(config.eps_schedule) < 3:
        raise NotApplicableError(
            "Continuation studies need at least three eps stages"
        )
    solution = solve_viscous(f, g, replace(config, keep_snapshots=True))
    snapshots = [s.values for s in solution.snapshots]
    sup_distances = [
        sup_distance(b[INTERIOR], a[INTERIOR])
        for a, b in zip(snapshots, snapshots[1:])
    ]
    rms_distances = [
        rmse(b[INTERIOR], a[INTERIOR])
        for a, b in zip(snapshots, snapshots[1:])
    ]
    exact_errors = None
    if exact is not None:
        exact_errors = [
            sup_distance(s[INTERIOR], exact.values[INTERIOR])
            for s in snapshots[1:]
        ]
    return ContinuationReport(
        eps=config.eps_schedule[1:],
        sup_distances=sup_distances,
        rms_distances=rms_distances,
        exact_errors=exact_errors,
        solution=solution,
    )


@dataclass
class LipschitzReport:
    ball: Ball
    lipschitz: float
    oscillation: float
    f_sup: float

    @property
    def bound(self) -> float:
        R = self.ball.radius
        return self.oscillation / R + (R * self.f_sup) ** (1.0 / 3.0)

    @property
    def ratio(self) -> float:
        return self.lipschitz / self.bound

    def to_record(self) -> dict[str, Any]:
        return {
            "center_x": self.ball.center[0],
            "center_y": self.ball.center[1],
            "radius": self.ball.radius,
            "lipschitz": self.lipschitz,
            "oscillation": self.oscillation,
            "f_sup": self.f_sup,
            "bound": self.bound,
            "ratio": self.ratio,
        }


def lipschitz_bound_check(
    u: ScalarField2D, f: ScalarField2D, ball: Ball
) -> LipschitzReport:
    """
    Discrete Lipschitz constant of ``u`` on ``ball`` against
    ``(1/R) osc_{2B} u + (R sup_{2B} |f|)^{1/3}``.
    """
    if not u.same_grid(f):
        raise DimensionError("u and f live on different grids")
    doubled = ball.doubled()
    inside = doubled.mask(u.grid)
    f_inside = f.values[inside]
    if not (np.all(f_inside > 0) or np.all(f_inside < 0)):
        raise NotApplicableError(
            "The Lipschitz bound needs f of one strict sign on 2B"
        )
    lipschitz = float(np.max(gradient(u).magnitude()[ball.mask(u.grid)]))
    return LipschitzReport(
        ball=ball,
        lipschitz=lipschitz,
        oscillation=osc(u, doubled),
        f_sup=sup_norm(f, doubled),
    )


def lipschitz_family(
    u: ScalarField2D,
    f: ScalarField2D,
    center: tuple[float, float],
    radii: Sequence[float],
    min_nodes: float = 2.0,
) -> list[LipschitzReport]:
    """
    :func:`lipschitz_bound_check` on the balls ``B(center, R)``. Radii
    below ``min_nodes`` mesh widths, or whose doubled ball leaves the grid
    interior, are skipped.
    """
    h = max(u.grid.hx, u.grid.hy)
    reports = []
    for radius in radii:
        ball = Ball(center, radius)
        if radius < min_nodes * h or not ball.doubled().fits(u.grid):
            logger.debug("Skipping Lipschitz ball of radius %.4g", radius)
            continue
        reports.append(lipschitz_bound_check(u, f, ball))
    if not reports:
        raise NotApplicableError(
            f"No ball around {center} with radii {list(radii)} is resolved"
            " on this grid"
        )
    return reports


def sharp_lipschitz_ratio() -> float:
    """
    Scale-free Lipschitz ratio of the sharp example on balls centred on
    its ridge, with ``osc_{2B} w = (2R)^{4/3}``.
    """
    return SHARP_W_SLOPE / (
        2.0 ** (4.0 / 3.0) + SHARP_W_RHS ** (1.0 / 3.0)
    )
