"""
Closed-form viscosity solutions of ``-(u')² u'' = f`` on ``I = (0, 1)``.

With ``F(t) = ∫_0^t -3f`` every solution reads

    u(t) = u(0) + ∫_0^t cbrt(F(s) - c) ds

and the constant ``c`` is fixed by the right boundary value. The map
``c -> u(1)`` is strictly decreasing, so ``c`` is found by bisection.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Any, Callable, Literal, Sequence

import numpy as np
import polars as pl
from scipy.integrate import (  # type: ignore[import-untyped]
    cumulative_trapezoid,
    trapezoid,
)
from scipy.optimize import bisect  # type: ignore[import-untyped]

from app.internal.constants import (
    BISECTION_MAXITER,
    BISECTION_REFINEMENTS,
    BISECTION_XTOL_FACTOR,
    BRACKET_EXPANSIONS,
)
from app.internal.exceptions import (
    BracketError,
    DimensionError,
    DomainError,
    NotApplicableError,
)
from app.services.identities import (
    IdentityName,
    IdentityReport,
    build_report,
)
from app.utils.fitting import RateFit, classify_sequence
from app.utils.metrics import relative_errors

logger = logging.getLogger(__name__)

Quadrature = Literal["trapezoid", "exact"]
QUADRATURES = ("trapezoid", "exact")


@dataclass(frozen=True)
class OneDProblem:
    f: Callable[[np.ndarray], np.ndarray | float] | np.ndarray
    u0: float
    u1: float
    n: int
    name: str = "custom"

    def __post_init__(self):
        if self.n < 3:
            raise DimensionError(f"1-D problems need n >= 3, got {self.n}")
        samples = self.f_values()
        if not np.all(np.isfinite(samples)):
            raise DomainError("f must be finite on [0, 1]")
        if not (np.all(samples > 0) or np.all(samples < 0)):
            raise DomainError(
                "f must have a constant sign and no zeros on [0, 1]"
            )

    @property
    def nodes(self) -> np.ndarray:
        return np.linspace(0.0, 1.0, self.n)

    def f_values(self) -> np.ndarray:
        if callable(self.f):
            values = np.asarray(self.f(self.nodes), dtype=np.float64)
            return np.broadcast_to(values, (self.n,)).copy()
        values = np.asarray(self.f, dtype=np.float64)
        if values.shape != (self.n,):
            raise DimensionError(
                f"Sampled f has shape {values.shape}, expected ({self.n},)"
            )
        return values

    def negated(self) -> "OneDProblem":
        samples = self.f_values()
        return OneDProblem(
            f=-samples,
            u0=-self.u0,
            u1=-self.u1,
            n=self.n,
            name=f"{self.name}-negated",
        )


@dataclass
class OneDSolution:
    nodes: np.ndarray
    u: np.ndarray
    u_prime: np.ndarray
    c: float
    t0: float | None
    F: np.ndarray
    f: np.ndarray
    quadrature: str = "trapezoid"
    iterations: int = 0
    shooting_residual: float = 0.0
    problem: str = "custom"

    @property
    def h(self) -> float:
        return float(self.nodes[1] - self.nodes[0])

    @property
    def is_convex(self) -> bool:
        return bool(np.all(np.diff(self.u_prime) > 0))

    @property
    def is_concave(self) -> bool:
        return bool(np.all(np.diff(self.u_prime) < 0))

    @property
    def has_interior_t0(self) -> bool:
        return self.t0 is not None and 0.0 < self.t0 < 1.0

    def evaluate(self, t: np.ndarray) -> np.ndarray:
        return np.interp(t, self.nodes, self.u)

    def to_frame(self) -> pl.DataFrame:
        return pl.DataFrame(
            {"t": self.nodes, "u": self.u, "u_prime": self.u_prime}
        )

    def summary(self) -> dict[str, Any]:
        return {
            "problem": self.problem,
            "n": int(self.nodes.size),
            "c": self.c,
            "t0": self.t0,
            "quadrature": self.quadrature,
            "bisection_iterations": self.iterations,
            "shooting_residual": self.shooting_residual,
            "convex": self.is_convex,
            "concave": self.is_concave,
        }


def _segment_integrals(
    left: np.ndarray, right: np.ndarray, lengths: np.ndarray | float
) -> np.ndarray:
    """
    Exact integrals of ``cbrt(L)`` over segments where ``L`` is linear,
    from the antiderivative ``(3/4)|L|^{4/3}``.
    """
    left = np.asarray(left, dtype=np.float64)
    right = np.asarray(right, dtype=np.float64)
    jump = right - left
    scale = np.abs(left) + np.abs(right)
    flat = np.abs(jump) <= 1e-12 * scale
    safe_jump = np.where(flat, 1.0, jump)
    exact = (
        0.75
        * (np.abs(right) ** (4.0 / 3.0) - np.abs(left) ** (4.0 / 3.0))
        / safe_jump
    )
    averaged = 0.5 * (np.cbrt(left) + np.cbrt(right))
    return lengths * np.where(flat, averaged, exact)


def _cumulative(
    t: np.ndarray, level: np.ndarray, quadrature: str
) -> np.ndarray:
    """Running integral of ``cbrt(level)`` from the left end."""
    if quadrature == "exact":
        pieces = _segment_integrals(level[:-1], level[1:], np.diff(t))
        return np.concatenate(([0.0], np.cumsum(pieces)))
    return cumulative_trapezoid(np.cbrt(level), t, initial=0.0)


def _total(t: np.ndarray, level: np.ndarray, quadrature: str) -> float:
    if quadrature == "exact":
        return float(
            np.sum(_segment_integrals(level[:-1], level[1:], np.diff(t)))
        )
    return float(trapezoid(np.cbrt(level), t))


def _find_bracket(
    shooting: Callable[[float], float], low: float, high: float
) -> tuple[float, float, int]:
    expansions = 0
    width = high - low
    while shooting(low) < 0:
        if expansions >= BRACKET_EXPANSIONS:
            raise BracketError(
                f"No lower bracket after {expansions} expansions"
            )
        low -= width
        width *= 2.0
        expansions += 1
    width = high - low
    while shooting(high) > 0:
        if expansions >= BRACKET_EXPANSIONS:
            raise BracketError(
                f"No upper bracket after {expansions} expansions"
            )
        high += width
        width *= 2.0
        expansions += 1
    if expansions:
        logger.info(
            "Shooting bracket expanded %d times to [%.6g, %.6g]",
            expansions,
            low,
            high,
        )
    return low, high, expansions


def _locate_degenerate_point(
    t: np.ndarray, level: np.ndarray, tol: float
) -> float | None:
    """
    Zero of ``F - c``: a node where it vanishes (to ``tol``), or the sign
    change between two nodes refined by one secant step.
    """
    zero_tol = max(tol, 1e-12 * float(np.max(np.abs(level))))
    zeros = np.flatnonzero(np.abs(level) <= zero_tol)
    if zeros.size:
        return float(t[zeros[0]])
    changes = np.flatnonzero(level[:-1] * level[1:] < 0)
    if not changes.size:
        return None
    k = int(changes[0])
    step = (t[k + 1] - t[k]) / (level[k + 1] - level[k])
    return float(t[k] - level[k] * step)


def _bisect_constant(
    shooting: Callable[[float], float],
    low: float,
    high: float,
    xtol: float,
    target: float,
) -> tuple[float, int]:
    """
    Bisection on ``c`` until the shooting residual, not only the bracket,
    is below ``target``. Near a flat ``F`` the map ``c -> u(1)`` is steep
    and an ``xtol`` bracket can leave a large residual; ``xtol`` is then
    refined.
    """
    iterations = 0
    for _ in range(BISECTION_REFINEMENTS + 1):
        c, result = bisect(
            shooting,
            low,
            high,
            xtol=xtol,
            maxiter=BISECTION_MAXITER,
            full_output=True,
        )
        iterations += result.iterations
        residual = abs(shooting(c))
        if residual <= target:
            return float(c), iterations
        logger.debug(
            "Shooting residual %.3e above %.3e at xtol %.3e",
            residual,
            target,
            xtol,
        )
        xtol *= BISECTION_XTOL_FACTOR
    raise BracketError(
        f"Shooting residual {residual:.3e} stays above {target:.3e}"
        f" after {iterations} bisections"
    )


def solve_1d(
    problem: OneDProblem,
    tol: float = 1e-12,
    quadrature: Quadrature = "trapezoid",
) -> OneDSolution:
    if tol <= 0:
        raise DomainError(f"tol must be positive, got {tol}")
    if quadrature not in QUADRATURES:
        raise DomainError(
            f"Unknown quadrature '{quadrature}', expected one of {QUADRATURES}"
        )
    t = problem.nodes
    f = problem.f_values()
    F = cumulative_trapezoid(-3.0 * f, t, initial=0.0)

    def shooting(c: float) -> float:
        return problem.u0 + _total(t, F - c, quadrature) - problem.u1

    low, high, _ = _find_bracket(
        shooting, float(np.min(F)) - 1.0, float(np.max(F)) + 1.0
    )
    iterations = 0
    if shooting(low) == 0:
        c = low
    elif shooting(high) == 0:
        c = high
    else:
        # quadrature sums cannot resolve below n roundoffs
        floor = problem.n * float(np.finfo(np.float64).eps)
        c, iterations = _bisect_constant(
            shooting,
            low,
            high,
            tol,
            max(tol, floor) * (1.0 + abs(problem.u1)),
        )
    c = float(c)

    level = F - c
    u = problem.u0 + _cumulative(t, level, quadrature)
    residual = abs(float(u[-1]) - problem.u1)
    logger.info(
        "Solved 1-D problem '%s' (n=%d): c=%.12g after %d bisections",
        problem.name,
        problem.n,
        c,
        iterations,
    )
    return OneDSolution(
        nodes=t,
        u=u,
        u_prime=np.cbrt(level),
        c=c,
        t0=_locate_degenerate_point(t, level, tol),
        F=F,
        f=f,
        quadrature=quadrature,
        iterations=iterations,
        shooting_residual=residual,
        problem=problem.name,
    )


@dataclass
class Residual1DReport:
    analytic_max: float
    derivative_fd_max: float
    solution_fd_max: float
    excluded: int
    mask: float
    convex: bool
    concave: bool

    def to_record(self) -> dict[str, Any]:
        return {
            "analytic_max": self.analytic_max,
            "derivative_fd_max": self.derivative_fd_max,
            "solution_fd_max": self.solution_fd_max,
            "excluded": self.excluded,
            "mask": self.mask,
            "convex": self.convex,
            "concave": self.concave,
        }


def _default_mask(sol: OneDSolution) -> float:
    # |u'| at about eight cells from t0
    return float(np.cbrt(24.0 * sol.h * np.max(np.abs(sol.f))))


def residual_1d(
    sol: OneDSolution, mask: float | None = None
) -> Residual1DReport:
    """
    Relative residual of ``-(u')² u'' = f`` at nodes with ``|u'| > mask``.

    ``u''`` is taken three ways: the analytic form ``-f (F - c)^{-2/3}``,
    finite differences of ``u'`` and second differences of ``u``.
    """
    if mask is None:
        mask = _default_mask(sol)
    keep = np.abs(sol.u_prime) > mask
    inner = keep.copy()
    inner[[0, -1]] = False
    level = sol.F - sol.c

    safe = np.where(keep, level, 1.0)
    analytic = -sol.f * np.abs(safe) ** (-2.0 / 3.0)
    from_derivative = np.gradient(sol.u_prime, sol.nodes, edge_order=2)
    from_solution = np.zeros_like(sol.u)
    from_solution[1:-1] = (sol.u[2:] - 2.0 * sol.u[1:-1] + sol.u[:-2]) / (
        sol.h**2
    )

    def worst(second: np.ndarray, where: np.ndarray) -> float:
        lhs = -(sol.u_prime[where] ** 2) * second[where]
        errors = relative_errors(lhs, sol.f[where])
        return float(np.max(errors)) if errors.size else 0.0

    return Residual1DReport(
        analytic_max=worst(analytic, keep),
        derivative_fd_max=worst(from_derivative, keep),
        solution_fd_max=worst(from_solution, inner),
        excluded=int(np.count_nonzero(~keep)),
        mask=mask,
        convex=sol.is_convex,
        concave=sol.is_concave,
    )


@dataclass
class DegenerateLimitReport:
    t0: float
    expected: float
    measured: float
    measured_u_form: float
    steps: list[float] = field(default_factory=list)
    ratios: list[float] = field(default_factory=list)
    u_form_ratios: list[float] = field(default_factory=list)

    @property
    def relative_deviation(self) -> float:
        return abs(self.measured - self.expected) / abs(self.expected)

    @property
    def relative_deviation_u_form(self) -> float:
        return abs(self.measured_u_form - self.expected) / abs(self.expected)

    def to_record(self) -> dict[str, Any]:
        return {
            "t0": self.t0,
            "expected": self.expected,
            "measured": self.measured,
            "measured_u_form": self.measured_u_form,
            "relative_deviation": self.relative_deviation,
            "relative_deviation_u_form": self.relative_deviation_u_form,
        }


def _exact_increment(sol: OneDSolution, a: float, b: float) -> float:
    """``∫_a^b cbrt(F - c)`` with ``F`` interpolated linearly."""
    low, high = min(a, b), max(a, b)
    inner = sol.nodes[(sol.nodes > low) & (sol.nodes < high)]
    points = np.concatenate(([low], inner, [high]))
    level = np.interp(points, sol.nodes, sol.F) - sol.c
    total = float(
        np.sum(_segment_integrals(level[:-1], level[1:], np.diff(points)))
    )
    return total if b >= a else -total


def degenerate_limit_check(
    sol: OneDSolution, multiples: Sequence[int] = (2, 4, 8)
) -> DegenerateLimitReport:
    """
    Measures ``lim u'(s) / cbrt(s - t0)`` and the companion limit
    ``3 (u(s) - u(t0)) / (4 |s - t0|^{4/3})`` at ``s = t0 ± k h``, averaging
    both sides and removing the first two error orders by Richardson
    extrapolation over three doubling spacings.
    """
    if len(multiples) != 3 or not all(
        multiples[i + 1] == 2 * multiples[i] for i in range(2)
    ):
        raise DomainError("Richardson needs three doubling step multiples")
    t0 = sol.t0
    reach = multiples[-1] * sol.h
    if t0 is None or t0 - reach < 0.0 or t0 + reach > 1.0:
        raise NotApplicableError(
            f"No degenerate point at least {reach:.3g} away from the"
            f" boundary (t0={t0})"
        )
    f_t0 = float(np.interp(t0, sol.nodes, sol.f))
    expected = float(np.cbrt(-3.0 * f_t0))

    steps, ratios, u_ratios = [], [], []
    for k in multiples:
        delta = k * sol.h
        side_ratios, side_u_ratios = [], []
        for s in (t0 - delta, t0 + delta):
            level = float(np.interp(s, sol.nodes, sol.F)) - sol.c
            side_ratios.append(np.cbrt(level) / np.cbrt(s - t0))
            increment = _exact_increment(sol, t0, s)
            side_u_ratios.append(3.0 * increment / (4.0 * delta ** (4 / 3)))
        steps.append(delta)
        ratios.append(float(np.mean(side_ratios)))
        u_ratios.append(float(np.mean(side_u_ratios)))

    def richardson(values: list[float]) -> float:
        return (8.0 * values[0] - 6.0 * values[1] + values[2]) / 3.0

    report = DegenerateLimitReport(
        t0=t0,
        expected=expected,
        measured=richardson(ratios),
        measured_u_form=richardson(u_ratios),
        steps=steps,
        ratios=ratios,
        u_form_ratios=u_ratios,
    )
    logger.info(
        "Degenerate limit at t0=%.6g: measured %.8g, expected %.8g",
        t0,
        report.measured,
        expected,
    )
    return report


@dataclass
class OneDProfileReport:
    quantity: str
    alpha: float | None
    p: float
    cutoffs: list[float]
    norms: list[float]
    fit: RateFit

    def to_frame(self) -> pl.DataFrame:
        return pl.DataFrame({"cutoff": self.cutoffs, "norm": self.norms})

    def to_record(self) -> dict[str, Any]:
        return {
            "quantity": self.quantity,
            "alpha": self.alpha,
            "p": self.p,
            **self.fit.to_record(),
        }


def default_cutoffs(sol: OneDSolution, smallest: int = 16) -> list[float]:
    """Halving cutoffs from 1/4 down to ``smallest`` cells."""
    cutoffs = []
    delta = 0.25
    while delta >= smallest * sol.h:
        cutoffs.append(delta)
        delta /= 2.0
    return cutoffs


def _outside_pieces(
    sol: OneDSolution, delta: float
) -> tuple[np.ndarray, np.ndarray]:
    """
    Midpoints and lengths of the parts of every cell lying outside
    ``(t0 - delta, t0 + delta)``.
    """
    a, b = sol.nodes[:-1], sol.nodes[1:]
    t0 = sol.t0 if sol.t0 is not None else -np.inf
    left_end = np.minimum(b, t0 - delta)
    right_start = np.maximum(a, t0 + delta)
    left_len = np.clip(left_end - a, 0.0, None)
    right_len = np.clip(b - right_start, 0.0, None)
    midpoints = np.concatenate(
        (0.5 * (a + np.maximum(left_end, a)), 0.5 * (right_start + b))
    )
    lengths = np.concatenate((left_len, right_len))
    keep = lengths > 0
    return midpoints[keep], lengths[keep]


def _cutoff_profile(
    sol: OneDSolution,
    integrand: Callable[[np.ndarray, np.ndarray], np.ndarray],
    p: float,
    cutoffs: Sequence[float] | None,
) -> tuple[list[float], list[float], RateFit]:
    if cutoffs is None:
        cutoffs = default_cutoffs(sol)
    cutoffs = sorted(cutoffs, reverse=True)
    norms, fit_values = [], []
    for delta in cutoffs:
        if math.isinf(p):
            t = sol.nodes
            outside = (
                np.abs(t - sol.t0) > delta
                if sol.t0 is not None
                else np.ones_like(t, dtype=bool)
            )
            level = sol.F[outside] - sol.c
            value = float(np.max(integrand(level, sol.f[outside])))
            norms.append(value)
            fit_values.append(value)
            continue
        midpoints, lengths = _outside_pieces(sol, delta)
        level = np.interp(midpoints, sol.nodes, sol.F) - sol.c
        f_mid = np.interp(midpoints, sol.nodes, sol.f)
        total = float(np.sum(integrand(level, f_mid) ** p * lengths))
        norms.append(total ** (1.0 / p))
        fit_values.append(total)
    return list(cutoffs), norms, classify_sequence(cutoffs, fit_values)


def oned_regularity_profile(
    sol: OneDSolution,
    alpha: float,
    p: float,
    cutoffs: Sequence[float] | None = None,
) -> OneDProfileReport:
    """
    ``W^{1,p}`` seminorm of ``|u'|^α`` outside shrinking neighbourhoods of
    ``t0``, with ``(|u'|^α)' = -α f |F - c|^{α/3 - 1} sign(F - c)``.
    """
    if alpha <= 0:
        raise DomainError(f"alpha must be positive, got {alpha}")
    if p < 1:
        raise DomainError(f"p must be >= 1, got {p}")

    def derivative(level: np.ndarray, f: np.ndarray) -> np.ndarray:
        return alpha * np.abs(f) * np.abs(level) ** (alpha / 3.0 - 1.0)

    cutoffs, norms, fit = _cutoff_profile(sol, derivative, p, cutoffs)
    logger.info(
        "1-D profile alpha=%g p=%g: %s", alpha, p, fit.verdict.value
    )
    return OneDProfileReport("derivative", alpha, p, cutoffs, norms, fit)


def inverse_gradient_profile(
    sol: OneDSolution, p: float, cutoffs: Sequence[float] | None = None
) -> OneDProfileReport:
    """``∫ |u'|^{-p}`` outside shrinking neighbourhoods of ``t0``."""
    if p <= 0 or math.isinf(p):
        raise DomainError(f"p must be positive and finite, got {p}")

    def inverse(level: np.ndarray, f: np.ndarray) -> np.ndarray:
        return np.abs(level) ** (-1.0 / 3.0)

    cutoffs, norms, fit = _cutoff_profile(sol, inverse, p, cutoffs)
    logger.info("1-D inverse gradient p=%g: %s", p, fit.verdict.value)
    return OneDProfileReport("inverse_gradient", None, p, cutoffs, norms, fit)


def derivative_identity_1d(
    sol: OneDSolution, alpha: float, mask: float | None = None
) -> IdentityReport:
    """
    Finite-difference check of ``(|u'|^α)' = -α |u'|^{α-4} u' f`` at nodes
    with ``|u'| > mask``.
    """
    if alpha <= 0:
        raise DomainError(f"alpha must be positive, got {alpha}")
    if mask is None:
        mask = _default_mask(sol)
    keep = np.abs(sol.u_prime) > mask
    keep[[0, -1]] = False
    lhs = np.gradient(np.abs(sol.u_prime) ** alpha, sol.nodes, edge_order=2)
    slope = np.abs(np.where(keep, sol.u_prime, 1.0))
    rhs = -alpha * slope ** (alpha - 4.0) * sol.u_prime * sol.f
    errors = relative_errors(lhs[keep], rhs[keep])
    candidates = sol.nodes.size - 2
    excluded = candidates - int(np.count_nonzero(keep))
    return build_report(
        IdentityName.DERIVATIVE_1D,
        errors,
        excluded / candidates,
        mask,
    )
