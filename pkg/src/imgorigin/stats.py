"""Student-t machinery and the one-sided outlier test.

The t CDF is computed through the regularized incomplete beta function
I_x(a, b), evaluated with the standard continued-fraction expansion
(modified Lentz iteration) to 1e-12; the quantile inverts the CDF with
bisection refined by Newton steps to 1e-10. Only the numerics needed by
the decision rule live here, nothing else.

The decision itself is a one-sided Grubbs test on the calibrated
reconstruction loss of the examined image against the distribution of
losses over freshly generated outputs of the model. The examined value
is never pooled into the estimate of that distribution: mu and sigma
come from the n generated samples alone, and sigma uses the n-1
divisor. Low loss means the image is easy for the model to reproduce,
so a value far BELOW the mean is the belonging side: the verdict is
"belonging" iff (loss - mu) / sigma < threshold(n, alpha).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .exceptions import DegenerateDistributionError

__all__ = [
    "BelongingDistribution",
    "GrubbsDecision",
    "grubbs_decide",
    "grubbs_threshold",
    "regularized_incomplete_beta",
    "t_cdf",
    "t_pdf",
    "t_quantile",
]

_CF_EPS = 1e-12
_CF_TINY = 1e-300
_CF_MAX_ITER = 500
_QUANTILE_TOL = 1e-10


def _beta_cf(x: float, a: float, b: float) -> float:
    """Continued fraction for the incomplete beta, modified Lentz method."""
    qab = a + b
    qap = a + 1.0
    qam = a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < _CF_TINY:
        d = _CF_TINY
    d = 1.0 / d
    h = d
    for m in range(1, _CF_MAX_ITER + 1):
        m2 = 2 * m
        # even step
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < _CF_TINY:
            d = _CF_TINY
        c = 1.0 + aa / c
        if abs(c) < _CF_TINY:
            c = _CF_TINY
        d = 1.0 / d
        h *= d * c
        # odd step
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < _CF_TINY:
            d = _CF_TINY
        c = 1.0 + aa / c
        if abs(c) < _CF_TINY:
            c = _CF_TINY
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _CF_EPS:
            return h
    raise ArithmeticError(
        f"incomplete beta continued fraction did not converge for "
        f"x={x}, a={a}, b={b}"
    )


def regularized_incomplete_beta(x: float, a: float, b: float) -> float:
    """I_x(a, b) for x in [0, 1], a > 0, b > 0."""
    if a <= 0 or b <= 0:
        raise ValueError("a and b must be positive")
    if x < 0.0 or x > 1.0:
        raise ValueError(f"x={x} outside [0, 1]")
    if x == 0.0:
        return 0.0
    if x == 1.0:
        return 1.0
    ln_front = (
        a * math.log(x)
        + b * math.log1p(-x)
        - (math.lgamma(a) + math.lgamma(b) - math.lgamma(a + b))
    )
    front = math.exp(ln_front)
    # Use the expansion on whichever side converges fast.
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _beta_cf(x, a, b) / a
    return 1.0 - front * _beta_cf(1.0 - x, b, a) / b


def t_pdf(t: float, nu: float) -> float:
    """Density of Student's t with nu degrees of freedom."""
    if nu <= 0:
        raise ValueError("nu must be positive")
    ln = (
        math.lgamma((nu + 1.0) / 2.0)
        - math.lgamma(nu / 2.0)
        - 0.5 * math.log(nu * math.pi)
        - ((nu + 1.0) / 2.0) * math.log1p(t * t / nu)
    )
    return math.exp(ln)


def t_cdf(t: float, nu: float) -> float:
    """P(T <= t) for Student's t with nu degrees of freedom."""
    if nu <= 0:
        raise ValueError("nu must be positive")
    if t == 0.0:
        return 0.5
    x = nu / (t * t + nu)
    tail = 0.5 * regularized_incomplete_beta(x, nu / 2.0, 0.5)
    return 1.0 - tail if t > 0 else tail


def t_quantile(p: float, nu: float) -> float:
    """Inverse of t_cdf in p, solved to |cdf(t) - p| < 1e-10."""
    if nu <= 0:
        raise ValueError("nu must be positive")
    if not 0.0 < p < 1.0:
        raise ValueError(f"p={p} outside (0, 1)")
    if p == 0.5:
        return 0.0
    if p < 0.5:
        return -t_quantile(1.0 - p, nu)
    lo, hi = 0.0, 1.0
    while t_cdf(hi, nu) < p:
        lo = hi
        hi *= 2.0
        if hi > 1e300:
            raise ArithmeticError(f"quantile bracket failed for p={p}, nu={nu}")
    t = 0.5 * (lo + hi)
    for _ in range(200):
        err = t_cdf(t, nu) - p
        if abs(err) < _QUANTILE_TOL:
            return t
        if err > 0:
            hi = t
        else:
            lo = t
        # Newton step when it stays inside the bracket, bisection otherwise.
        dens = t_pdf(t, nu)
        if dens > 0.0:
            step = t - err / dens
            t = step if lo < step < hi else 0.5 * (lo + hi)
        else:
            t = 0.5 * (lo + hi)
    raise ArithmeticError(f"quantile iteration did not converge for p={p}, nu={nu}")


def grubbs_threshold(n: int, alpha: float) -> float:
    """One-sided Grubbs critical value for sample size n at level alpha."""
    if n < 3:
        raise ValueError("the outlier test needs n >= 3 samples")
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha={alpha} outside (0, 1)")
    t = t_quantile(1.0 - alpha / n, n - 2)
    return ((n - 1) / math.sqrt(n)) * math.sqrt(t * t / (n - 2 + t * t))


@dataclass(frozen=True)
class BelongingDistribution:
    """Moments of calibrated losses over n generated belongings of a model.

    ``sigma`` is the sample standard deviation (n-1 divisor). The
    examined image's loss is never part of this sample.
    """

    model_id: str
    reference_id: str
    metric: str
    n: int
    mu: float
    sigma: float
    alpha: float
    inversion_config_hash: str

    def __post_init__(self):
        if self.n < 3:
            raise ValueError("a belonging distribution needs n >= 3 samples")
        if not 0.0 < self.alpha < 1.0:
            raise ValueError(f"alpha={self.alpha} outside (0, 1)")
        if not math.isfinite(self.mu):
            raise ValueError("mu must be finite")
        if not (math.isfinite(self.sigma) and self.sigma > 0.0):
            raise DegenerateDistributionError(
                f"sigma={self.sigma} is not positive; the z-score is undefined "
                "(all calibrated losses identical?). Increase n or change metric."
            )

    @property
    def threshold(self) -> float:
        return grubbs_threshold(self.n, self.alpha)

    def to_json_dict(self) -> dict:
        return {
            "model_id": self.model_id,
            "reference_id": self.reference_id,
            "metric": self.metric,
            "n": self.n,
            "mu": self.mu,
            "sigma": self.sigma,
            "alpha": self.alpha,
            "inversion_config_hash": self.inversion_config_hash,
        }


@dataclass(frozen=True)
class GrubbsDecision:
    is_belonging: bool
    z_score: float
    threshold: float

    @property
    def label(self) -> str:
        return "belonging" if self.is_belonging else "non-belonging"


def grubbs_decide(calibrated_loss: float, dist: BelongingDistribution) -> GrubbsDecision:
    """One-sided test: belonging iff the examined loss is not an upper outlier.

    z = (loss - mu) / sigma; belonging iff z < G(n, alpha). The rule is
    invariant to a common positive rescaling of the loss, mu and sigma.
    """
    if not math.isfinite(calibrated_loss):
        raise ValueError("calibrated loss must be finite")
    z = (calibrated_loss - dist.mu) / dist.sigma
    g = dist.threshold
    return GrubbsDecision(is_belonging=bool(z < g), z_score=z, threshold=g)
