"""Estimators of the log marginal likelihood and its bias correction.

The working estimator family evaluates the tempered-posterior mean
log-likelihood at t = 1/log n (``wbic``), the singular-fluctuation
estimate built from per-observation log-likelihood variances (``nu_hat``,
always nonnegative), and their difference (``adjusted_wbic``).  Two
reference estimators are included for validation: thermodynamic
integration over an inverse-temperature ladder, and direct Monte Carlo
under the prior.
"""

from __future__ import annotations

import math
import warnings as _warnings
from dataclasses import dataclass, replace

import numpy as np
from scipy.special import logsumexp

from .errors import ConfigError, EstimatorError
from .models import Dataset, ModelSpec, TemperedTarget
from .sampling import (
    ChainConfig,
    Diagnostics,
    DrawMatrix,
    effective_sample_size,
    sample_tempered,
)


@dataclass(frozen=True)
class TemperatureLadder:
    """Inverse-temperature grid ts[k] = (k/K)^schedule_power, k = 1..K.

    Strictly increasing, ends at exactly 1; powers above 1 crowd the rungs
    toward t = 0 where the integrand changes fastest.
    """

    ts: tuple[float, ...]
    schedule_power: float

    def __post_init__(self) -> None:
        ts = tuple(float(t) for t in self.ts)
        rungs = len(ts)
        if rungs < 1:
            raise ConfigError("ladder needs at least one rung")
        if not (self.schedule_power > 0) or not math.isfinite(self.schedule_power):
            raise ConfigError(
                f"schedule_power must be positive, got {self.schedule_power}"
            )
        for k in range(1, rungs + 1):
            expected = (k / rungs) ** self.schedule_power
            if abs(ts[k - 1] - expected) > 1e-12:
                raise ConfigError(
                    f"rung {k} is {ts[k - 1]!r}, expected (k/K)^power = {expected!r}"
                )
        object.__setattr__(self, "ts", ts)

    @classmethod
    def power_schedule(cls, rungs: int = 30, power: float = 5.0) -> "TemperatureLadder":
        if not isinstance(rungs, (int, np.integer)) or rungs < 1:
            raise ConfigError(f"rungs must be a positive integer, got {rungs!r}")
        return cls(
            ts=tuple((k / rungs) ** power for k in range(1, rungs + 1)),
            schedule_power=float(power),
        )


@dataclass(frozen=True)
class RungResult:
    """One quadrature node: inverse temperature, integrand mean, its mcse,
    and the worst split R-hat of the rung's chains (nan for the prior node)."""

    t: float
    mean: float
    mcse: float
    rhat_max: float


@dataclass(frozen=True)
class EstimateResult:
    """A single estimate with its Monte Carlo standard error.

    t_used records the inverse temperature the draws were taken at (0 for
    pure prior sampling, 1 for an integral ending at the posterior).
    """

    estimator_name: str
    value: float
    mcse: float
    t_used: float
    diagnostics: Diagnostics | None = None
    rungs: tuple[RungResult, ...] | None = None
    warnings: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if not math.isfinite(self.value):
            raise EstimatorError(
                f"{self.estimator_name}: value is not finite ({self.value})"
            )
        if not math.isfinite(self.mcse) or self.mcse < 0:
            raise EstimatorError(
                f"{self.estimator_name}: mcse must be finite and >= 0, got {self.mcse}"
            )


def inverse_temperature_wbic(n: int) -> float:
    """The sampling temperature 1/log n, clamped to 1 with a warning when
    n is so small that 1/log n exceeds 1 (only n = 2)."""
    if not isinstance(n, (int, np.integer)) or isinstance(n, bool):
        raise EstimatorError(f"n must be an integer, got {n!r}")
    if n < 2:
        raise EstimatorError(f"need n >= 2 for a positive log n, got {n}")
    t = 1.0 / math.log(n)
    if t > 1.0:
        _warnings.warn(
            f"1/log({n}) = {t:.4f} exceeds 1; clamped to 1 "
            "(inverse temperatures above 1 are outside the framework)"
        )
        t = 1.0
    return t


def _series_mcse(draws: DrawMatrix, series: np.ndarray) -> tuple[float, tuple[str, ...]]:
    """ESS-deflated standard error of a per-draw scalar series.

    ESS is summed over chains.  Falls back to the independent-draw formula
    when chains are too short for the autocorrelation estimator.
    """
    n_draws = series.shape[0]
    if n_draws == 1:
        return 0.0, ("single draw: mcse reported as 0",)
    sd = float(series.std(ddof=1))
    if sd == 0.0:
        return 0.0, ()
    per_chain = draws.per_chain(series)
    if per_chain.shape[1] >= 100:
        ess = sum(effective_sample_size(chain) for chain in per_chain)
        return sd / math.sqrt(ess), ()
    return (
        sd / math.sqrt(n_draws),
        ("fewer than 100 retained draws per chain: mcse assumes independence",),
    )


def _total_loglik_series(draws: DrawMatrix) -> np.ndarray:
    return draws.loglik_rows.sum(axis=1)


def _check_wbic_temperature(draws: DrawMatrix) -> None:
    t_w = inverse_temperature_wbic(draws.n_obs)
    if abs(draws.t - t_w) > 1e-12:
        raise EstimatorError(
            f"draws were sampled at t = {draws.t!r} but 1/log(n) for n = "
            f"{draws.n_obs} is {t_w!r}"
        )


def wbic(draws: DrawMatrix, diagnostics: Diagnostics | None = None) -> EstimateResult:
    """Tempered-posterior mean of the total log-likelihood at t = 1/log n."""
    _check_wbic_temperature(draws)
    totals = _total_loglik_series(draws)
    mcse, notes = _series_mcse(draws, totals)
    return EstimateResult(
        estimator_name="wbic",
        value=float(totals.mean()),
        mcse=mcse,
        t_used=draws.t,
        diagnostics=diagnostics,
        warnings=notes,
    )


def gibbs_training_loss(draws: DrawMatrix, n: int) -> float:
    """Per-observation training loss; satisfies n * loss = -wbic exactly."""
    if n != draws.n_obs:
        raise EstimatorError(
            f"n = {n} does not match the {draws.n_obs} observations in the draws"
        )
    return -wbic(draws).value / n


def _nu_series(draws: DrawMatrix) -> np.ndarray:
    """Per-draw contributions whose mean is the singular-fluctuation value."""
    n_draws = draws.n_draws
    ll = draws.loglik_rows
    dev = ll - ll.mean(axis=0)
    return (draws.t / 2.0) * (n_draws / (n_draws - 1)) * (dev * dev).sum(axis=1)


def singular_fluctuation_hat(
    draws: DrawMatrix, diagnostics: Diagnostics | None = None
) -> EstimateResult:
    """(t/2) times the summed per-observation log-likelihood variances.

    Variances use the n - 1 denominator, pooled across chains after
    warmup; the value is a sum of squares and therefore never negative.
    """
    if draws.n_draws < 2:
        raise EstimatorError("variance needs at least 2 draws")
    series = _nu_series(draws)
    mcse, notes = _series_mcse(draws, series)
    return EstimateResult(
        estimator_name="nu_hat",
        value=float(series.mean()),
        mcse=mcse,
        t_used=draws.t,
        diagnostics=diagnostics,
        warnings=notes,
    )


def adjusted_wbic(
    draws: DrawMatrix, diagnostics: Diagnostics | None = None
) -> EstimateResult:
    """wbic minus the singular-fluctuation estimate, never above wbic.

    The mcse comes from the per-draw difference series, so the (strong)
    correlation between the two terms is accounted for.
    """
    base = wbic(draws)
    fluctuation = singular_fluctuation_hat(draws)
    series = _total_loglik_series(draws) - _nu_series(draws)
    mcse, notes = _series_mcse(draws, series)
    return EstimateResult(
        estimator_name="adjusted_wbic",
        value=base.value - fluctuation.value,
        mcse=mcse,
        t_used=draws.t,
        diagnostics=diagnostics,
        warnings=notes,
    )


def _chunked_totals(model: ModelSpec, natives: np.ndarray, rows: np.ndarray) -> np.ndarray:
    """Total log-likelihood per native draw, chunked to bound peak memory."""
    n_draws = natives.shape[0]
    n_obs = rows.shape[0]
    out = np.empty(n_draws)
    chunk = max(1, int(4e6) // max(n_obs, 1))
    for start in range(0, n_draws, chunk):
        block = natives[start : start + chunk]
        out[start : start + block.shape[0]] = model.loglik_many_fn(block, rows).sum(axis=1)
    return out


def thermodynamic_integration(
    model: ModelSpec,
    data: Dataset,
    ladder: TemperatureLadder,
    config: ChainConfig,
    prior_draws: int = 100_000,
) -> EstimateResult:
    """Trapezoid quadrature of the mean log-likelihood over t in [0, 1].

    Each rung is an independent tempered sampling run with its own seed
    derived from config.seed; the t = 0 endpoint uses exact prior draws.
    The mcse combines rung mcses through the quadrature weights.
    """
    if prior_draws < 2:
        raise EstimatorError(f"need at least 2 prior draws, got {prior_draws}")
    rungs = len(ladder.ts)
    seeds = np.random.SeedSequence(config.seed).generate_state(rungs + 1, np.uint64)

    notes: list[str] = []
    if rungs == 1:
        notes.append(
            "single-rung ladder: trapezoid over {0, 1} is a degenerate, "
            "biased quadrature"
        )

    rng = np.random.default_rng(int(seeds[rungs]))
    prior_natives = model.sample_prior_fn(rng, prior_draws)
    prior_totals = _chunked_totals(model, prior_natives, data.rows)
    node_results = [
        RungResult(
            t=0.0,
            mean=float(prior_totals.mean()),
            mcse=float(prior_totals.std(ddof=1)) / math.sqrt(prior_draws),
            rhat_max=float("nan"),
        )
    ]

    for k, t in enumerate(ladder.ts):
        rung_config = replace(config, seed=int(seeds[k]))
        matrix, diag = sample_tempered(TemperedTarget(model, data, t), rung_config)
        totals = _total_loglik_series(matrix)
        mcse, _ = _series_mcse(matrix, totals)
        node_results.append(
            RungResult(t=t, mean=float(totals.mean()), mcse=mcse, rhat_max=diag.rhat_max)
        )
        if diag.rhat_max > 1.1:
            notes.append(f"rung at t = {t:.6g}: split R-hat {diag.rhat_max:.4f} above 1.1")

    ts = np.array([r.t for r in node_results])
    means = np.array([r.mean for r in node_results])
    mcses = np.array([r.mcse for r in node_results])
    weights = np.empty_like(ts)
    weights[0] = (ts[1] - ts[0]) / 2.0
    weights[-1] = (ts[-1] - ts[-2]) / 2.0
    if ts.size > 2:
        weights[1:-1] = (ts[2:] - ts[:-2]) / 2.0
    return EstimateResult(
        estimator_name="ti",
        value=float(weights @ means),
        mcse=float(math.sqrt(float(weights**2 @ mcses**2))),
        t_used=1.0,
        rungs=tuple(node_results),
        warnings=tuple(notes),
    )


def prior_monte_carlo(
    model: ModelSpec, data: Dataset, n_draws: int, seed: int
) -> EstimateResult:
    """log-mean-exp of total log-likelihoods under exact prior draws.

    Uses the max trick through logsumexp; the mcse is the delta-method
    standard error of the log of the underlying mean.
    """
    if not isinstance(n_draws, (int, np.integer)) or n_draws < 1:
        raise EstimatorError(f"n_draws must be a positive integer, got {n_draws!r}")
    rng = np.random.default_rng(int(seed))
    totals = np.empty(n_draws)
    block = 262_144
    for start in range(0, n_draws, block):
        size = min(block, n_draws - start)
        natives = model.sample_prior_fn(rng, size)
        totals[start : start + size] = _chunked_totals(model, natives, data.rows)

    log_n = math.log(n_draws)
    peak = float(totals.max())
    if not math.isfinite(peak) or peak - log_n < math.log(np.finfo(float).tiny):
        raise EstimatorError(
            "all prior draws underflow the likelihood; the prior-mass region "
            "is too far from the data at this draw count"
        )
    lse1 = float(logsumexp(totals))
    lse2 = float(logsumexp(2.0 * totals))
    rel = max(lse2 - 2.0 * lse1 + log_n, 0.0)
    return EstimateResult(
        estimator_name="prior_mc",
        value=lse1 - log_n,
        mcse=math.sqrt(math.expm1(rel) / n_draws),
        t_used=0.0,
    )
