"""Image distances and their analytic gradients.

Three distances are supported: ``mse``, ``mae`` and ``ssim`` (as
``1 - SSIM``). SSIM is computed globally, with a single window spanning
the whole image across channels, using population statistics and the
usual stabilizers C1 = 0.01^2, C2 = 0.03^2 for a unit dynamic range.

Every distance comes with a closed-form gradient with respect to its
first argument, which is what gradient-based reverse-engineering
consumes. The MAE subgradient is 0 at exact ties. Batched variants
(many candidate images against one target) are used internally by the
inversion loop; they produce the same numbers as the public pairwise
functions, row for row.
"""

from __future__ import annotations

import numpy as np

from .validation import as_float_array, check_finite, check_same_shape

__all__ = ["METRICS", "distance", "distance_gradient", "ssim"]

METRICS = ("mse", "mae", "ssim")

_C1 = 0.01**2
_C2 = 0.03**2


def _check_pair(a, b):
    a = check_finite(as_float_array(a, "a"), "a")
    b = check_finite(as_float_array(b, "b"), "b")
    check_same_shape(a, b, ("a", "b"))
    return a, b


def _check_metric(metric: str) -> str:
    if metric not in METRICS:
        raise ValueError(f"unknown metric {metric!r}, expected one of {METRICS}")
    return metric


def ssim(a, b) -> float:
    """Global structural similarity of two images in [0, 1] range."""
    a, b = _check_pair(a, b)
    return float(_ssim_batch(a.reshape(1, -1), b.ravel())[0])


def distance(metric: str, a, b) -> float:
    """Distance between two same-shape images under the named metric."""
    _check_metric(metric)
    a, b = _check_pair(a, b)
    return float(_distance_batch(metric, a.reshape(1, -1), b.ravel())[0])


def distance_gradient(metric: str, a, b) -> np.ndarray:
    """Gradient of distance(metric, a, b) with respect to ``a``."""
    _check_metric(metric)
    a, b = _check_pair(a, b)
    g = _distance_grad_batch(metric, a.reshape(1, -1), b.ravel())
    return g.reshape(a.shape)


# ---------------------------------------------------------------------------
# batched kernels: rows of A (n_candidates, n_pixels) against one target x


def _ssim_stats(A: np.ndarray, x: np.ndarray):
    n = A.shape[1]
    mu_a = A.mean(axis=1)
    mu_b = x.mean()
    var_a = np.square(A - mu_a[:, None]).mean(axis=1)
    var_b = float(np.square(x - mu_b).mean())
    cov = ((A - mu_a[:, None]) * (x - mu_b)).mean(axis=1)
    a1 = 2.0 * mu_a * mu_b + _C1
    a2 = 2.0 * cov + _C2
    b1 = mu_a**2 + mu_b**2 + _C1
    b2 = var_a + var_b + _C2
    return n, mu_a, mu_b, a1, a2, b1, b2


def _ssim_batch(A: np.ndarray, x: np.ndarray) -> np.ndarray:
    _, _, _, a1, a2, b1, b2 = _ssim_stats(A, x)
    return (a1 * a2) / (b1 * b2)


def _distance_batch(metric: str, A: np.ndarray, x: np.ndarray) -> np.ndarray:
    if metric == "mse":
        return np.square(A - x).mean(axis=1)
    if metric == "mae":
        return np.abs(A - x).mean(axis=1)
    return 1.0 - _ssim_batch(A, x)


def _distance_grad_batch(metric: str, A: np.ndarray, x: np.ndarray) -> np.ndarray:
    n = A.shape[1]
    if metric == "mse":
        return 2.0 * (A - x) / n
    if metric == "mae":
        return np.sign(A - x) / n
    _, mu_a, mu_b, a1, a2, b1, b2 = _ssim_stats(A, x)
    s = (a1 * a2) / (b1 * b2)
    centered_a = A - mu_a[:, None]
    centered_b = x - mu_b
    # dS/dA_ij = (2/n) * [ (mu_b*a2 + a1*(x_j - mu_b)) / (b1*b2)
    #                      - S * (mu_a/b1 + (A_ij - mu_a)/b2) ]
    term1 = (mu_b * a2)[:, None] + a1[:, None] * centered_b[None, :]
    term1 = term1 / (b1 * b2)[:, None]
    term2 = s[:, None] * ((mu_a / b1)[:, None] + centered_a / b2[:, None])
    ds = (2.0 / n) * (term1 - term2)
    return -ds
