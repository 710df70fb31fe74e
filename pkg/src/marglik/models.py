"""Model abstraction and the built-in models.

A model bundles a per-observation log-likelihood, a log-prior, and the
bookkeeping needed to sample it in an unconstrained space: positive
parameters are sampled on the log scale, unit-interval parameters on the
logit scale, and the log-prior picks up the corresponding Jacobian term.

Three built-in models are provided:

- ``normal_mean(m, v)``: x ~ N(theta, 1) with theta ~ N(m, v).
- ``linreg(design)``: strength regressed on a centered wood-density
  covariate with a normal-gamma prior (two covariate choices).
- ``mixture2()``: two-component normal mixture
  alpha N(mu1, 1) + (1 - alpha) N(mu2, 1) with unit variance components.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from enum import Enum
from importlib.resources import files
from typing import Callable, Sequence

import numpy as np
from scipy.special import expit, log_expit, logit

from .errors import DataError, ModelError

LOG_2PI = math.log(2.0 * math.pi)

# Fixed regression prior: (alpha, beta) ~ N(REG_PRIOR_MEAN, (tau * REG_Q)^-1),
# tau ~ Gamma(shape REG_A / 2, rate REG_B / 2).  The pair (REG_A, REG_B) is
# what the exact-marginal formula consumes; see closedform.linreg_exact_log_marginal.
REG_Q_DIAG = (0.06, 6.0)
REG_PRIOR_MEAN = (3000.0, 185.0)
REG_A = 6.0
REG_B = 600.0 ** 2


class Support(Enum):
    """Native domain of a single parameter."""

    REAL = "real"
    POSITIVE = "positive"
    UNIT_INTERVAL = "unit_interval"


@dataclass(frozen=True)
class ParamDescriptor:
    name: str
    support: Support


@dataclass(frozen=True)
class RlctInfo:
    """Known real log canonical threshold of a model, with multiplicity."""

    lam: float
    multiplicity: int

    def __post_init__(self) -> None:
        if not (self.lam > 0):
            raise ModelError(f"rlct lambda must be positive, got {self.lam}")
        if self.multiplicity < 1:
            raise ModelError(
                f"rlct multiplicity must be >= 1, got {self.multiplicity}"
            )


@dataclass(frozen=True)
class ParamVector:
    """Point in the unconstrained sampling space.

    ``values`` has one entry per model parameter; entries must be finite.
    """

    values: np.ndarray

    def __post_init__(self) -> None:
        vals = np.asarray(self.values, dtype=float)
        if vals.ndim != 1:
            raise ModelError(f"parameter vector must be 1-d, got shape {vals.shape}")
        if not np.all(np.isfinite(vals)):
            raise ModelError("parameter vector contains non-finite entries")
        object.__setattr__(self, "values", vals)


@dataclass(frozen=True)
class ModelSpec:
    """Immutable model definition.

    The callable fields close over hyperparameters and operate on *native*
    parameters; the public functions in this module handle the unconstrained
    embedding.  Instances are safe to share across concurrent chains.

    loglik_rows_fn(native, rows) -> (n,) per-observation log-likelihoods
    loglik_many_fn(natives, rows) -> (S, n) for a batch of S draws
    total_loglik_factory(rows) -> fast callable native -> total log-likelihood
    log_prior_native_fn(native) -> log prior density at a native point
    sample_prior_fn(rng, size) -> (size, d) native draws from the prior
    """

    name: str
    dim: int
    param_descriptors: tuple[ParamDescriptor, ...]
    rlct_info: RlctInfo | None
    obs_width: int
    loglik_rows_fn: Callable[[np.ndarray, np.ndarray], np.ndarray] = field(repr=False)
    loglik_many_fn: Callable[[np.ndarray, np.ndarray], np.ndarray] = field(repr=False)
    total_loglik_factory: Callable[[np.ndarray], Callable[[np.ndarray], float]] = field(
        repr=False
    )
    log_prior_native_fn: Callable[[np.ndarray], float] = field(repr=False)
    sample_prior_fn: Callable[[np.random.Generator, int], np.ndarray] = field(repr=False)

    def __post_init__(self) -> None:
        if self.dim != len(self.param_descriptors):
            raise ModelError(
                f"dim={self.dim} but {len(self.param_descriptors)} parameter "
                "descriptors given"
            )
        if self.dim < 1:
            raise ModelError("model must have at least one parameter")
        if self.obs_width < 1:
            raise ModelError("observation width must be >= 1")

    # -- transforms between native and unconstrained space ------------------

    def to_native(self, theta: np.ndarray) -> np.ndarray:
        """Map unconstrained values (shape (..., d)) to native parameters."""
        theta = np.asarray(theta, dtype=float)
        out = theta.copy()
        for j, desc in enumerate(self.param_descriptors):
            if desc.support is Support.POSITIVE:
                out[..., j] = np.exp(theta[..., j])
            elif desc.support is Support.UNIT_INTERVAL:
                out[..., j] = expit(theta[..., j])
        return out

    def to_unconstrained(self, native: np.ndarray) -> np.ndarray:
        """Inverse of :meth:`to_native` for points in the native support."""
        native = np.asarray(native, dtype=float)
        out = native.copy()
        for j, desc in enumerate(self.param_descriptors):
            if desc.support is Support.POSITIVE:
                out[..., j] = np.log(native[..., j])
            elif desc.support is Support.UNIT_INTERVAL:
                out[..., j] = logit(native[..., j])
        return out

    def log_jacobian(self, theta: np.ndarray) -> np.ndarray | float:
        """log |d native / d unconstrained| at unconstrained theta (..., d)."""
        theta = np.asarray(theta, dtype=float)
        total = np.zeros(theta.shape[:-1])
        for j, desc in enumerate(self.param_descriptors):
            if desc.support is Support.POSITIVE:
                total = total + theta[..., j]
            elif desc.support is Support.UNIT_INTERVAL:
                u = theta[..., j]
                total = total + log_expit(u) + log_expit(-u)
        return float(total) if total.ndim == 0 else total


@dataclass(frozen=True)
class Dataset:
    """n observations as a fixed-width real matrix with named columns."""

    rows: np.ndarray
    column_names: tuple[str, ...]

    def __post_init__(self) -> None:
        rows = np.asarray(self.rows, dtype=float)
        if rows.ndim != 2:
            raise DataError(f"rows must be a 2-d matrix, got shape {rows.shape}")
        if rows.shape[0] < 2:
            raise DataError(
                f"need at least 2 observations, got {rows.shape[0]} "
                "(the sampling temperature 1/log n requires log n > 0)"
            )
        if rows.shape[1] != len(self.column_names):
            raise DataError(
                f"{rows.shape[1]} columns but {len(self.column_names)} column names"
            )
        if not np.all(np.isfinite(rows)):
            raise DataError("dataset contains non-finite entries")
        object.__setattr__(self, "rows", rows)
        object.__setattr__(self, "column_names", tuple(self.column_names))

    @property
    def n(self) -> int:
        return self.rows.shape[0]

    def column(self, name: str) -> np.ndarray:
        try:
            j = self.column_names.index(name)
        except ValueError:
            raise DataError(
                f"no column named {name!r}; have {list(self.column_names)}"
            ) from None
        return self.rows[:, j]

    @classmethod
    def from_csv(cls, path) -> "Dataset":
        """Strict CSV ingestion: header row, decimal reals, no NaN/inf tokens."""
        try:
            with open(path, "r", newline="") as fh:
                reader = csv.reader(fh)
                try:
                    header = next(reader)
                except StopIteration:
                    raise DataError(f"{path}: empty file") from None
                names = tuple(h.strip() for h in header)
                data: list[list[float]] = []
                for lineno, record in enumerate(reader, start=2):
                    if not record or all(tok.strip() == "" for tok in record):
                        continue
                    if len(record) != len(names):
                        raise DataError(
                            f"{path}:{lineno}: expected {len(names)} fields, "
                            f"got {len(record)}"
                        )
                    parsed = []
                    for tok in record:
                        tok = tok.strip()
                        if tok.lower().lstrip("+-") in ("nan", "inf", "infinity"):
                            raise DataError(
                                f"{path}:{lineno}: non-finite token {tok!r}"
                            )
                        try:
                            parsed.append(float(tok))
                        except ValueError:
                            raise DataError(
                                f"{path}:{lineno}: not a number: {tok!r}"
                            ) from None
                    data.append(parsed)
        except OSError as exc:
            raise DataError(f"cannot read {path}: {exc}") from exc
        if not data:
            raise DataError(f"{path}: no data rows")
        return cls(rows=np.array(data, dtype=float), column_names=names)


@dataclass(frozen=True)
class TemperedTarget:
    """Unnormalized log density t * log p(X | theta) + log prior(theta).

    t ranges over (0, 1] for sampling.  t = 0 is accepted as a degenerate
    prior-limit case so that the tempered density can be evaluated at the
    lower endpoint of the temperature path; samplers reject it.
    """

    model: ModelSpec
    data: Dataset
    t: float

    def __post_init__(self) -> None:
        if not (0.0 <= self.t <= 1.0) or not math.isfinite(self.t):
            raise ModelError(f"inverse temperature must lie in [0, 1], got {self.t}")


# -- public operations -------------------------------------------------------


def _as_unconstrained(model: ModelSpec, theta) -> np.ndarray:
    vals = theta.values if isinstance(theta, ParamVector) else np.asarray(theta, float)
    if vals.shape != (model.dim,):
        raise ModelError(
            f"parameter vector has shape {vals.shape}, expected ({model.dim},)"
        )
    if not np.all(np.isfinite(vals)):
        raise ModelError("parameter vector contains non-finite entries")
    return vals


def log_lik_row(model: ModelSpec, theta, row) -> float:
    """Log-likelihood of a single observation at unconstrained theta.

    Returns -inf only where the density is exactly zero, never NaN.
    """
    vals = _as_unconstrained(model, theta)
    row = np.atleast_1d(np.asarray(row, dtype=float))
    if row.shape != (model.obs_width,):
        raise ModelError(
            f"observation has shape {row.shape}, expected ({model.obs_width},)"
        )
    native = model.to_native(vals)
    out = model.loglik_rows_fn(native, row.reshape(1, -1))
    return float(out[0])


def log_prior(model: ModelSpec, theta) -> float:
    """Log prior density at unconstrained theta, including the Jacobian."""
    vals = _as_unconstrained(model, theta)
    native = model.to_native(vals)
    return float(model.log_prior_native_fn(native)) + float(model.log_jacobian(vals))


def total_log_lik(model: ModelSpec, theta, rows: np.ndarray) -> float:
    """Sum of per-observation log-likelihoods over a raw row matrix."""
    vals = _as_unconstrained(model, theta)
    rows = np.asarray(rows, dtype=float)
    if rows.ndim != 2 or rows.shape[1] != model.obs_width:
        raise ModelError(
            f"rows have shape {rows.shape}, expected (n, {model.obs_width})"
        )
    native = model.to_native(vals)
    return float(model.loglik_rows_fn(native, rows).sum())


def tempered_log_density(target: TemperedTarget, theta) -> float:
    """t * total log-likelihood + log prior; equals the log prior at t = 0."""
    lp = log_prior(target.model, theta)
    if target.t == 0.0:
        return lp
    return target.t * total_log_lik(target.model, theta, target.data.rows) + lp


def make_unconstrained_log_density(target: TemperedTarget) -> Callable[[np.ndarray], float]:
    """Fast bound evaluator of the tempered log density for samplers.

    Uses the model's sufficient-statistic factory so the per-call cost does
    not grow with n where the model allows it.  Agreement with
    :func:`tempered_log_density` is covered by tests.
    """
    model, t = target.model, target.t
    total_fn = model.total_loglik_factory(target.data.rows)
    prior_fn = model.log_prior_native_fn
    to_native = model.to_native
    log_jac = model.log_jacobian

    def logdens(u: np.ndarray) -> float:
        native = to_native(u)
        lp = prior_fn(native) + log_jac(u)
        if t == 0.0:
            return lp
        return t * total_fn(native) + lp

    return logdens


def make_batched_unconstrained_log_density(
    target: TemperedTarget,
) -> Callable[[np.ndarray], np.ndarray]:
    """Batched variant of :func:`make_unconstrained_log_density`.

    Returns a callable mapping a (C, d) block of unconstrained points to the
    (C,) tempered log densities, one per row.  Built for samplers that move
    several chains in lockstep; C is small, so the per-row Python loop over
    the prior is not a bottleneck.
    """
    model, t = target.model, target.t
    rows = target.data.rows
    many = model.loglik_many_fn
    prior_fn = model.log_prior_native_fn
    to_native = model.to_native
    log_jac = model.log_jacobian

    def logdens(u: np.ndarray) -> np.ndarray:
        natives = to_native(u)
        out = np.asarray(log_jac(u), dtype=float) + np.array(
            [prior_fn(nat) for nat in natives]
        )
        if t != 0.0:
            with np.errstate(invalid="ignore"):
                out = out + t * many(natives, rows).sum(axis=1)
        return out

    return logdens


def loglik_matrix(model: ModelSpec, draws: np.ndarray, rows: np.ndarray) -> np.ndarray:
    """Per-observation log-likelihoods for a batch of unconstrained draws.

    Result has shape (S, n).  Work is chunked to bound peak memory.
    """
    draws = np.asarray(draws, dtype=float)
    rows = np.asarray(rows, dtype=float)
    S, n = draws.shape[0], rows.shape[0]
    out = np.empty((S, n))
    chunk = max(1, int(4e6) // max(n, 1))
    for start in range(0, S, chunk):
        block = draws[start : start + chunk]
        out[start : start + block.shape[0]] = model.loglik_many_fn(
            model.to_native(block), rows
        )
    return out


# -- built-in models ----------------------------------------------------------


def _norm_logpdf(x, mean, var):
    return -0.5 * (LOG_2PI + math.log(var)) - (x - mean) ** 2 / (2.0 * var)


def normal_mean(prior_m: float = 0.0, prior_v: float = 1.0) -> ModelSpec:
    """Unit-variance normal with unknown mean theta ~ N(prior_m, prior_v)."""
    if not (prior_v > 0) or not math.isfinite(prior_v) or not math.isfinite(prior_m):
        raise ModelError(f"need finite prior_m and prior_v > 0, got ({prior_m}, {prior_v})")
    m, v = float(prior_m), float(prior_v)

    def loglik_rows(native, rows):
        x = rows[:, 0]
        return -0.5 * LOG_2PI - 0.5 * (x - native[0]) ** 2

    def loglik_many(natives, rows):
        x = rows[:, 0]
        return -0.5 * LOG_2PI - 0.5 * (x[None, :] - natives[:, 0:1]) ** 2

    def total_factory(rows):
        x = rows[:, 0]
        n = x.size
        sx = float(x.sum())
        sxx = float((x * x).sum())
        base = -0.5 * n * LOG_2PI

        def total(native):
            th = native[0]
            return base - 0.5 * (sxx - 2.0 * th * sx + n * th * th)

        return total

    def prior(native):
        return _norm_logpdf(native[0], m, v)

    def sample_prior(rng, size):
        return (m + math.sqrt(v) * rng.standard_normal(size)).reshape(size, 1)

    return ModelSpec(
        name="normal_mean",
        dim=1,
        param_descriptors=(ParamDescriptor("theta", Support.REAL),),
        rlct_info=RlctInfo(lam=0.5, multiplicity=1),
        obs_width=1,
        loglik_rows_fn=loglik_rows,
        loglik_many_fn=loglik_many,
        total_loglik_factory=total_factory,
        log_prior_native_fn=prior,
        sample_prior_fn=sample_prior,
    )


def linreg(design: int) -> ModelSpec:
    """Linear regression of strength on one centered density covariate.

    Rows are (covariate, response) with the covariate already centered;
    see :func:`prepare_regression`.  Parameters are (alpha, beta, tau) with
    response ~ N(alpha + beta * covariate, 1/tau).  The coefficient prior is
    N((3000, 185), (tau Q)^-1) with Q = diag(0.06, 6); the precision prior
    is Gamma(shape 3, rate 180000), the parametrization under which the
    closed-form marginal in ``closedform`` is the exact integral.

    ``design`` picks covariate 1 (density) or 2 (resin-adjusted density);
    the likelihood is the same, the tag records which data preparation the
    model expects.
    """
    if design not in (1, 2):
        raise ModelError(f"design must be 1 or 2, got {design}")
    q1, q2 = REG_Q_DIAG
    mu1, mu2 = REG_PRIOR_MEAN
    shape = REG_A / 2.0
    rate = REG_B / 2.0
    log_det_q = math.log(q1 * q2)
    gamma_const = shape * math.log(rate) - math.lgamma(shape)

    def loglik_rows(native, rows):
        a, b, tau = native
        if not np.isfinite(tau) or tau <= 0.0:
            return np.full(rows.shape[0], -np.inf)
        resid = rows[:, 1] - (a + b * rows[:, 0])
        return 0.5 * (math.log(tau) - LOG_2PI) - 0.5 * tau * resid * resid

    def loglik_many(natives, rows):
        c, y = rows[:, 0], rows[:, 1]
        a = natives[:, 0:1]
        b = natives[:, 1:2]
        tau = natives[:, 2:3]
        bad = ~np.isfinite(tau[:, 0]) | (tau[:, 0] <= 0.0)
        safe_tau = np.where(bad[:, None], 1.0, tau)
        resid = y[None, :] - (a + b * c[None, :])
        out = 0.5 * (np.log(safe_tau) - LOG_2PI) - 0.5 * safe_tau * resid * resid
        out[bad] = -np.inf
        return out

    def total_factory(rows):
        c, y = rows[:, 0], rows[:, 1]
        n = y.size
        syy = float(y @ y)
        sy = float(y.sum())
        scy = float(c @ y)
        sc = float(c.sum())
        scc = float(c @ c)

        def total(native):
            a, b, tau = native
            if not math.isfinite(tau) or tau <= 0.0:
                return -math.inf
            ssr = (
                syy
                - 2.0 * a * sy
                - 2.0 * b * scy
                + 2.0 * a * b * sc
                + n * a * a
                + b * b * scc
            )
            return 0.5 * n * (math.log(tau) - LOG_2PI) - 0.5 * tau * ssr

        return total

    def prior(native):
        a, b, tau = native
        if not math.isfinite(tau) or tau <= 0.0:
            return -math.inf
        log_tau = math.log(tau)
        da = a - mu1
        db = b - mu2
        coef = -LOG_2PI + log_tau + 0.5 * log_det_q - 0.5 * tau * (q1 * da * da + q2 * db * db)
        gam = gamma_const + (shape - 1.0) * log_tau - rate * tau
        return coef + gam

    def sample_prior(rng, size):
        tau = rng.gamma(shape, 1.0 / rate, size)
        a = mu1 + rng.standard_normal(size) / np.sqrt(tau * q1)
        b = mu2 + rng.standard_normal(size) / np.sqrt(tau * q2)
        return np.column_stack([a, b, tau])

    return ModelSpec(
        name=f"linreg_m{design}",
        dim=3,
        param_descriptors=(
            ParamDescriptor("alpha", Support.REAL),
            ParamDescriptor("beta", Support.REAL),
            ParamDescriptor("tau", Support.POSITIVE),
        ),
        rlct_info=RlctInfo(lam=1.5, multiplicity=1),
        obs_width=2,
        loglik_rows_fn=loglik_rows,
        loglik_many_fn=loglik_many,
        total_loglik_factory=total_factory,
        log_prior_native_fn=prior,
        sample_prior_fn=sample_prior,
    )


def mixture2(prior_mu_var: float = 10.0) -> ModelSpec:
    """Two-component normal mixture with unit component variances.

    Density alpha N(mu1, 1) + (1 - alpha) N(mu2, 1); priors
    alpha ~ Uniform(0, 1) and mu1, mu2 ~ N(0, prior_mu_var).
    Log-likelihoods use log-sum-exp so large n does not underflow.
    """
    if not (prior_mu_var > 0):
        raise ModelError(f"prior_mu_var must be positive, got {prior_mu_var}")
    mv = float(prior_mu_var)

    def _log_weights(alpha: float) -> tuple[float, float]:
        la = math.log(alpha) if alpha > 0.0 else -math.inf
        l1a = math.log1p(-alpha) if alpha < 1.0 else -math.inf
        return la, l1a

    def loglik_rows(native, rows):
        alpha, mu_a, mu_b = native
        x = rows[:, 0]
        la, l1a = _log_weights(alpha)
        c1 = la - 0.5 * LOG_2PI - 0.5 * (x - mu_a) ** 2
        c2 = l1a - 0.5 * LOG_2PI - 0.5 * (x - mu_b) ** 2
        return np.logaddexp(c1, c2)

    def loglik_many(natives, rows):
        x = rows[:, 0]
        alpha = natives[:, 0:1]
        with np.errstate(divide="ignore"):
            la = np.log(alpha)
            l1a = np.log1p(-alpha)
        c1 = la - 0.5 * LOG_2PI - 0.5 * (x[None, :] - natives[:, 1:2]) ** 2
        c2 = l1a - 0.5 * LOG_2PI - 0.5 * (x[None, :] - natives[:, 2:3]) ** 2
        return np.logaddexp(c1, c2)

    def total_factory(rows):
        x = rows[:, 0]

        def total(native):
            alpha, mu_a, mu_b = native
            la, l1a = _log_weights(alpha)
            c1 = la - 0.5 * LOG_2PI - 0.5 * (x - mu_a) ** 2
            c2 = l1a - 0.5 * LOG_2PI - 0.5 * (x - mu_b) ** 2
            return float(np.logaddexp(c1, c2).sum())

        return total

    def prior(native):
        # Uniform(0, 1) contributes zero inside the unit interval.
        return _norm_logpdf(native[1], 0.0, mv) + _norm_logpdf(native[2], 0.0, mv)

    def sample_prior(rng, size):
        alpha = rng.uniform(size=size)
        mus = math.sqrt(mv) * rng.standard_normal((size, 2))
        return np.column_stack([alpha, mus])

    return ModelSpec(
        name="mixture2",
        dim=3,
        param_descriptors=(
            ParamDescriptor("alpha", Support.UNIT_INTERVAL),
            ParamDescriptor("mu1", Support.REAL),
            ParamDescriptor("mu2", Support.REAL),
        ),
        rlct_info=RlctInfo(lam=0.75, multiplicity=1),
        obs_width=1,
        loglik_rows_fn=loglik_rows,
        loglik_many_fn=loglik_many,
        total_loglik_factory=total_factory,
        log_prior_native_fn=prior,
        sample_prior_fn=sample_prior,
    )


# -- bundled data -------------------------------------------------------------


def radiata_dataset() -> Dataset:
    """The bundled 42-tree wood dataset: density, resin-adjusted density,
    maximum compression strength."""
    path = files("marglik").joinpath("data/radiata.csv")
    with path.open("r") as fh:
        text = fh.read()
    lines = text.strip().splitlines()
    names = tuple(lines[0].split(","))
    rows = np.array([[float(tok) for tok in line.split(",")] for line in lines[1:]])
    return Dataset(rows=rows, column_names=names)


def prepare_regression(data: Dataset, covariate: str, response: str) -> Dataset:
    """Build the (centered covariate, response) dataset a linreg model expects."""
    x = data.column(covariate)
    y = data.column(response)
    rows = np.column_stack([x - x.mean(), y])
    return Dataset(rows=rows, column_names=("covariate_centered", "response"))
