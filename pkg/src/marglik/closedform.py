"""Closed-form reference quantities.

Two families of analytic results used to validate the samplers and
estimators:

- the conjugate normal-mean model (tempered posterior moments, an analytic
  WBIC, a closed form for the singular-fluctuation estimand, and the exact
  log marginal likelihood), and
- the normal-gamma linear regression exact log marginal likelihood used
  with the bundled wood-density dataset.

Everything here is a deterministic pure function.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln

from .errors import DataError, ModelError
from .models import (
    LOG_2PI,
    REG_A,
    REG_B,
    REG_PRIOR_MEAN,
    REG_Q_DIAG,
    Dataset,
    radiata_dataset,
)


def _as_observations(data) -> np.ndarray:
    """Coerce a Dataset with one column, or any 1-d array-like, to (n,)."""
    if isinstance(data, Dataset):
        if data.rows.shape[1] != 1:
            raise DataError(
                f"expected a single-column dataset, got {data.rows.shape[1]} columns"
            )
        return data.rows[:, 0]
    x = np.asarray(data, dtype=float)
    if x.ndim != 1 or x.size < 1:
        raise DataError(f"expected a 1-d observation array, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise DataError("observations contain non-finite values")
    return x


@dataclass(frozen=True)
class ConjugateNormalPosterior:
    """Tempered posterior N(m_t, v_t) of the normal-mean model."""

    m_t: float
    v_t: float
    t: float

    def __post_init__(self) -> None:
        if not (self.v_t > 0):
            raise ModelError(f"posterior variance must be positive, got {self.v_t}")


def normal_mean_posterior(
    n: int, xbar: float, t: float, m: float, v: float
) -> ConjugateNormalPosterior:
    """Tempered posterior moments m_t = (nt + 1/v)^-1 (nt xbar + m/v),
    v_t = (nt + 1/v)^-1.

    At t = 0 the prior (m, v) is recovered.
    """
    if not (v > 0) or not math.isfinite(v):
        raise ModelError(f"prior variance must be positive and finite, got {v}")
    if n < 1:
        raise ModelError(f"need n >= 1, got {n}")
    if t < 0 or not math.isfinite(t):
        raise ModelError(f"inverse temperature must be >= 0, got {t}")
    prec = n * t + 1.0 / v
    v_t = 1.0 / prec
    m_t = v_t * (n * t * xbar + m / v)
    return ConjugateNormalPosterior(m_t=m_t, v_t=v_t, t=t)


def normal_mean_wbic_analytic(data, m: float, v: float) -> float:
    """Exact value of the tempered-posterior mean log-likelihood at t = 1/log n.

    Equals -(n/2) log 2 pi - (1/2) sum x_i^2 + n xbar m_t - (n/2)(v_t + m_t^2)
    with (m_t, v_t) the tempered posterior moments.
    """
    from .estimators import inverse_temperature_wbic

    x = _as_observations(data)
    n = x.size
    if n < 2:
        raise DataError(f"need n >= 2, got {n}")
    t_w = inverse_temperature_wbic(n)
    post = normal_mean_posterior(n, float(x.mean()), t_w, m, v)
    return (
        -0.5 * n * LOG_2PI
        - 0.5 * float(x @ x)
        + n * float(x.mean()) * post.m_t
        - 0.5 * n * (post.v_t + post.m_t**2)
    )


def normal_mean_loglik_variance(xi: float, post: ConjugateNormalPosterior) -> float:
    """Variance of log N(xi | theta, 1) when theta ~ N(m_t, v_t):
    v_t (xi - m_t)^2 + v_t^2 / 2."""
    d = xi - post.m_t
    return post.v_t * d * d + 0.5 * post.v_t**2


def normal_mean_nu_hat_closed_form(
    t: float, n: int, xbar: float, sx2: float, m: float, v: float
) -> float:
    """Exact singular-fluctuation estimand for the normal-mean model.

    ((ntv - tv)/(ntv + 1)) sx2/2 + (ntv/(2 (ntv+1)^3)) (m - xbar)^2
    + t n v^2 / (4 (ntv + 1)^2), where sx2 is the sample variance of the
    data with the n - 1 denominator.  Every term carries a factor t, so the
    value vanishes as t -> 0.
    """
    if not (v > 0):
        raise ModelError(f"prior variance must be positive, got {v}")
    if n < 2:
        raise ModelError(f"need n >= 2, got {n}")
    if t < 0:
        raise ModelError(f"inverse temperature must be >= 0, got {t}")
    if sx2 < 0:
        raise ModelError(f"sample variance must be >= 0, got {sx2}")
    ntv = n * t * v
    denom = ntv + 1.0
    return (
        ((ntv - t * v) / denom) * sx2 / 2.0
        + (ntv / (2.0 * denom**3)) * (m - xbar) ** 2
        + t * n * v**2 / (4.0 * denom**2)
    )


def normal_mean_exact_log_marginal(data, m: float, v: float) -> float:
    """log integral of prod_i N(x_i | theta, 1) N(theta | m, v) dtheta.

    Standard conjugate convolution: the sufficient statistic xbar has
    marginal N(m, v + 1/n), and the residual factor is exact:
    -((n-1)/2) log 2 pi - (1/2) log n - (1/2) sum (x_i - xbar)^2
    + log N(xbar | m, v + 1/n).
    """
    if not (v > 0) or not math.isfinite(v):
        raise ModelError(f"prior variance must be positive and finite, got {v}")
    x = _as_observations(data)
    n = x.size
    xbar = float(x.mean())
    rss = float(((x - xbar) ** 2).sum())
    marg_var = v + 1.0 / n
    return (
        -0.5 * (n - 1) * LOG_2PI
        - 0.5 * math.log(n)
        - 0.5 * rss
        - 0.5 * (LOG_2PI + math.log(marg_var))
        - (xbar - m) ** 2 / (2.0 * marg_var)
    )


@dataclass(frozen=True)
class RegressionDesign:
    """Design and prior for the conjugate linear regression oracle.

    X is (n, 2) with an intercept column of ones and a centered covariate;
    y is the response; the coefficient prior is N(prior_mean, (tau Q)^-1)
    and the precision prior pairs with (a, b) as the marginal formula
    expects (tau ~ Gamma(a/2, b/2) in shape-rate form).
    """

    X: np.ndarray
    y: np.ndarray
    Q: np.ndarray
    prior_mean: np.ndarray
    a: float
    b: float

    def __post_init__(self) -> None:
        X = np.asarray(self.X, dtype=float)
        y = np.asarray(self.y, dtype=float)
        Q = np.asarray(self.Q, dtype=float)
        mu = np.asarray(self.prior_mean, dtype=float)
        if X.ndim != 2 or X.shape[1] != 2:
            raise ModelError(f"X must be (n, 2), got {X.shape}")
        if y.shape != (X.shape[0],):
            raise ModelError(f"y must be ({X.shape[0]},), got {y.shape}")
        if not np.all(np.isfinite(X)) or not np.all(np.isfinite(y)):
            raise DataError("design contains non-finite values")
        if not np.allclose(X[:, 0], 1.0):
            raise ModelError("first design column must be the intercept (all ones)")
        if abs(X[:, 1].mean()) > 1e-9:
            raise ModelError(
                f"covariate column must be centered, mean is {X[:, 1].mean():.3g}"
            )
        if Q.shape != (2, 2) or np.any(Q[~np.eye(2, dtype=bool)] != 0.0):
            raise ModelError("Q must be a 2 x 2 diagonal matrix")
        if np.any(np.diag(Q) <= 0):
            raise ModelError("Q diagonal must be positive")
        if mu.shape != (2,):
            raise ModelError(f"prior_mean must be length 2, got shape {mu.shape}")
        if not (self.a > 0 and self.b > 0):
            raise ModelError(f"need a > 0 and b > 0, got a={self.a}, b={self.b}")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "Q", Q)
        object.__setattr__(self, "prior_mean", mu)

    @classmethod
    def from_covariate(
        cls,
        covariate,
        response,
        Q_diag=REG_Q_DIAG,
        prior_mean=REG_PRIOR_MEAN,
        a: float = REG_A,
        b: float = REG_B,
    ) -> "RegressionDesign":
        """Build a design from a raw covariate; centering happens here."""
        x = np.asarray(covariate, dtype=float)
        y = np.asarray(response, dtype=float)
        X = np.column_stack([np.ones(x.size), x - x.mean()])
        return cls(
            X=X,
            y=y,
            Q=np.diag(np.asarray(Q_diag, dtype=float)),
            prior_mean=np.asarray(prior_mean, dtype=float),
            a=a,
            b=b,
        )


def linreg_exact_log_marginal(design: RegressionDesign) -> float:
    """Exact log marginal likelihood of the conjugate regression.

    -(n/2) log pi + (a/2) log b + lgamma((n+a)/2) - lgamma(a/2)
    + (1/2) log(det Q / det M) - ((n+a)/2) log(u' R u + b),
    with M = X'X + Q, R = I - X M^-1 X', and u the response centered at
    the prior predictive mean, u = y - X prior_mean.  With a zero prior
    mean this reduces to the familiar y'Ry form.  The quadratic form is
    evaluated as u'u - (X'u)' M^-1 (X'u) and never materializes R.
    """
    X, y = design.X, design.y
    n = y.size
    M = X.T @ X + design.Q
    sign, logdet_m = np.linalg.slogdet(M)
    if sign <= 0:
        raise ModelError("X'X + Q is singular or not positive definite")
    u = y - X @ design.prior_mean
    xu = X.T @ u
    try:
        quad = float(u @ u - xu @ np.linalg.solve(M, xu))
    except np.linalg.LinAlgError as exc:
        raise ModelError(f"cannot solve with M: {exc}") from exc
    logdet_q = float(np.log(np.diag(design.Q)).sum())
    half_n_a = 0.5 * (n + design.a)
    return float(
        -0.5 * n * math.log(math.pi)
        + 0.5 * design.a * math.log(design.b)
        + gammaln(half_n_a)
        - gammaln(0.5 * design.a)
        + 0.5 * (logdet_q - logdet_m)
        - half_n_a * math.log(quad + design.b)
    )


def radiata_design(design: int) -> RegressionDesign:
    """RegressionDesign for the bundled dataset: covariate 1 is density,
    covariate 2 is resin-adjusted density; response is strength."""
    if design not in (1, 2):
        raise ModelError(f"design must be 1 or 2, got {design}")
    data = radiata_dataset()
    covariate = data.column("density" if design == 1 else "resin_density")
    return RegressionDesign.from_covariate(covariate, data.column("strength"))
