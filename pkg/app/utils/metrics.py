import numpy as np


def relative_errors(
    lhs: np.ndarray, rhs: np.ndarray, normalized: bool = False
) -> np.ndarray:
    """
    Pointwise relative errors. With ``normalized`` the denominator is
    ``1 + |lhs| + |rhs|``; otherwise ``max(|lhs|, |rhs|)``, which yields 0
    where both sides vanish.
    """
    lhs = np.asarray(lhs, dtype=np.float64)
    rhs = np.asarray(rhs, dtype=np.float64)
    diff = np.abs(lhs - rhs)
    if normalized:
        return diff / (1.0 + np.abs(lhs) + np.abs(rhs))
    scale = np.maximum(np.abs(lhs), np.abs(rhs))
    return np.divide(diff, scale, out=np.zeros_like(diff), where=scale > 0)


def vector_relative_errors(
    lhs: tuple[np.ndarray, np.ndarray], rhs: tuple[np.ndarray, np.ndarray]
) -> np.ndarray:
    diff = np.hypot(lhs[0] - rhs[0], lhs[1] - rhs[1])
    scale = np.maximum(np.hypot(*lhs), np.hypot(*rhs))
    return np.divide(diff, scale, out=np.zeros_like(diff), where=scale > 0)


def max_error(errors: np.ndarray) -> float:
    errors = errors.flatten()
    return float(np.max(errors)) if errors.size else 0.0


def mean_error(errors: np.ndarray) -> float:
    # contiguous copy so that numpy's pairwise summation applies
    errors = np.ascontiguousarray(errors.flatten())
    return float(np.sum(errors) / errors.size) if errors.size else 0.0


def sup_distance(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.max(np.abs(a - b)))


def rmse(a: np.ndarray, b: np.ndarray) -> float:
    errors = (a - b).flatten()
    return float(np.sqrt(np.mean(errors**2)))
