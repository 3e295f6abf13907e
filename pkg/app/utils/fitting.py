"""
Classification of mesh-refinement sequences.

A sequence of discrete integrals ``y_k`` measured at decreasing scales
``h_k`` is read through its increments ``d_k = y_{k+1} - y_k`` normalized by
``log(h_k / h_{k+1})``:

- constant increments: the integral grows like ``a log(1/h)`` (log-divergent);
- increments growing like ``h^{-r}``: power divergence with rate ``r``;
- increments decaying (or changing sign): the sequence converges.

The slope of ``log2(d_k)`` against ``log2(1/h)`` is fitted with ordinary least
squares; a model other than the logarithmic one is only selected when the
slope clears ``rate_threshold`` and its confidence interval excludes zero.
"""

import logging
import math
from dataclasses import dataclass
from enum import Enum
from typing import Any, Sequence

import numpy as np
import statsmodels.api as sm  # type: ignore[import-untyped]

from app.internal.constants import RATE_CONFIDENCE, RATE_THRESHOLD
from app.internal.exceptions import FitError

logger = logging.getLogger(__name__)

MIN_POINTS = 4


class Verdict(str, Enum):
    CONVERGENT = "convergent"
    LOG_DIVERGENT = "log-divergent"
    POWER_DIVERGENT = "power-divergent"


@dataclass
class RateFit:
    verdict: Verdict
    # log2-slope of the increments; negative for convergent sequences
    slope: float
    slope_ci: tuple[float, float]
    log_slope: float | None = None
    log_slope_ci: tuple[float, float] | None = None
    r_squared: float | None = None
    limit: float | None = None

    @property
    def rate(self) -> float:
        """Power rate for divergent sequences, decay rate otherwise."""
        if self.verdict == Verdict.POWER_DIVERGENT:
            return self.slope
        if self.verdict == Verdict.CONVERGENT:
            return -self.slope
        return 0.0

    def to_record(self) -> dict[str, Any]:
        return {
            "verdict": self.verdict.value,
            "slope": self.slope,
            "slope_ci_low": self.slope_ci[0],
            "slope_ci_high": self.slope_ci[1],
            "rate": self.rate,
            "log_slope": self.log_slope,
            "log_slope_ci_low": self.log_slope_ci[0]
            if self.log_slope_ci
            else None,
            "log_slope_ci_high": self.log_slope_ci[1]
            if self.log_slope_ci
            else None,
            "r_squared": self.r_squared,
            "limit": self.limit,
        }


def _ols(y: np.ndarray, columns: list[np.ndarray]):
    design = np.column_stack([np.ones_like(y)] + columns)
    return sm.OLS(y, design).fit()


def _interval(fit, index: int, confidence: float) -> tuple[float, float]:
    low, high = np.asarray(fit.conf_int(alpha=confidence))[index]
    return float(low), float(high)


def _validate(
    scales: Sequence[float], values: Sequence[float]
) -> tuple[np.ndarray, np.ndarray]:
    h = np.asarray(scales, dtype=np.float64)
    y = np.asarray(values, dtype=np.float64)
    if h.size != y.size:
        raise FitError(f"{h.size} scales but {y.size} values")
    if h.size < MIN_POINTS:
        raise FitError(
            f"Rate fits need at least {MIN_POINTS} meshes, got {h.size}"
        )
    if not np.all(np.diff(h) < 0) or np.any(h <= 0):
        raise FitError("Scales must be positive and strictly decreasing")
    if not np.all(np.isfinite(y)):
        raise FitError("Values must be finite")
    return h, y


def fit_log_slope(
    scales: Sequence[float],
    values: Sequence[float],
    confidence: float = RATE_CONFIDENCE,
) -> tuple[float, tuple[float, float], float]:
    """
    Fit ``y = b + a log(1/h) + c h``; the ``c h`` column absorbs the
    first-order rasterization error of the region boundary.
    """
    h, y = _validate(scales, values)
    fit = _ols(y, [np.log(1.0 / h), h])
    return float(fit.params[1]), _interval(fit, 1, confidence), float(
        fit.rsquared
    )


def extrapolate_limit(
    scales: Sequence[float], values: Sequence[float], rate: float
) -> float:
    h, y = _validate(scales, values)
    columns = [h**rate]
    if abs(rate - 1.0) > 0.2:
        columns.append(h)
    return float(_ols(y, columns).params[0])


def remove_linear_term(
    h: np.ndarray, y: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """
    One Richardson step against a ``c h`` error term. Logarithmic, power and
    convergent models keep their class and rate; one mesh is lost.
    """
    ratio = h[:-1] / h[1:]
    return h[:-1], (ratio * y[1:] - y[:-1]) / (ratio - 1.0)


def classify_sequence(
    scales: Sequence[float],
    values: Sequence[float],
    rate_threshold: float = RATE_THRESHOLD,
    confidence: float = RATE_CONFIDENCE,
    raster_correction: bool = False,
) -> RateFit:
    """
    With ``raster_correction`` the increments are taken after
    :func:`remove_linear_term`, which suits region integrals whose boundary
    rasterization contributes an ``O(h)`` error.
    """
    h_raw, y_raw = _validate(scales, values)
    h, y = remove_linear_term(h_raw, y_raw) if raster_correction else (
        h_raw,
        y_raw,
    )
    d = np.diff(y) / np.log(h[:-1] / h[1:])
    level = np.log2(1.0 / np.sqrt(h[:-1] * h[1:]))

    if np.max(np.abs(d)) <= 1e-12 * max(1.0, float(np.max(np.abs(y)))):
        logger.debug("Flat sequence, reporting convergence")
        return RateFit(
            verdict=Verdict.CONVERGENT,
            slope=-math.inf,
            slope_ci=(-math.inf, -math.inf),
            limit=float(y_raw[-1]),
        )

    if np.all(d != 0):
        fit = _ols(np.log2(np.abs(d)), [level])
        slope = float(fit.params[1])
        if d.size > 2:
            slope_ci = _interval(fit, 1, confidence)
        else:
            # exact fit through two points
            slope_ci = (slope, slope)
    else:
        slope, slope_ci = -math.inf, (-math.inf, -math.inf)

    if not np.all(d > 0):
        verdict = Verdict.CONVERGENT
    elif slope > rate_threshold and slope_ci[0] > 0:
        verdict = Verdict.POWER_DIVERGENT
    elif slope < -rate_threshold and slope_ci[1] < 0:
        verdict = Verdict.CONVERGENT
    else:
        verdict = Verdict.LOG_DIVERGENT

    result = RateFit(verdict=verdict, slope=slope, slope_ci=slope_ci)
    if verdict == Verdict.LOG_DIVERGENT:
        log_slope, log_ci, r2 = fit_log_slope(h_raw, y_raw, confidence)
        result.log_slope = log_slope
        result.log_slope_ci = log_ci
        result.r_squared = r2
    elif verdict == Verdict.CONVERGENT:
        if math.isfinite(slope) and slope < 0:
            result.limit = extrapolate_limit(h_raw, y_raw, -slope)
        else:
            result.limit = float(np.mean(y_raw[-2:]))
    logger.debug(
        "Sequence classified as %s (slope %.4g, CI [%.4g, %.4g])",
        verdict.value,
        slope,
        slope_ci[0],
        slope_ci[1],
    )
    return result
