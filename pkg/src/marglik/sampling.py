"""Adaptive random-walk Metropolis for tempered targets.

All chains advance in lockstep through vectorized proposal and acceptance
steps, but every chain owns a private RNG stream derived from
(seed, chain index), so results are independent of the lockstep layout and
bit-reproducible.  Adaptation (step size and proposal covariance) happens
only during warmup; retained draws come from a frozen kernel.

The warmup schedule has four stages:

1. a short greedy ascent that moves each chain from its diffuse starting
   point into the high-density region (the tempered regression posterior
   sits dozens of prior standard deviations away from a unit-normal start,
   which an untuned random walk cannot cross in any reasonable budget),
2. Robbins-Monro step-size tuning with an identity proposal shape,
3. the same tuning around an estimated diagonal, then full, proposal
   covariance, re-estimated twice from trailing warmup windows,
4. a final stretch of step-size-only tuning with the covariance frozen.
"""

from __future__ import annotations

import math
import warnings as _warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.fft import next_fast_len

from .errors import ConfigError, SamplerError
from .models import (
    TemperedTarget,
    loglik_matrix,
    make_batched_unconstrained_log_density,
)

_INIT_RETRIES = 100
_ASCENT_CAP = 500
_ASCENT_GROW = 2.0
_ASCENT_SHRINK = 0.8
_RM_DECAY = 0.6
_MIN_COV_WINDOW = 25
_RHAT_WARN = 1.1


@dataclass(frozen=True)
class ChainConfig:
    """Sampler settings shared by all chains of one run."""

    n_chains: int = 4
    warmup: int = 5000
    keep: int = 20000
    thin: int = 4
    init_scale: float = 1.0
    target_accept: float = 0.3
    seed: int = 0

    def __post_init__(self) -> None:
        for name in ("n_chains", "warmup", "keep", "thin"):
            value = getattr(self, name)
            if not isinstance(value, (int, np.integer)) or isinstance(value, bool):
                raise ConfigError(f"{name} must be an integer, got {value!r}")
            if value < 1:
                raise ConfigError(f"{name} must be positive, got {value}")
        if self.keep % self.thin != 0:
            raise ConfigError(
                f"keep must be divisible by thin, got keep={self.keep} thin={self.thin}"
            )
        if self.keep // self.thin < 100:
            raise ConfigError(
                "keep / thin must be at least 100 retained draws per chain, "
                f"got {self.keep // self.thin}"
            )
        if not (self.init_scale > 0) or not math.isfinite(self.init_scale):
            raise ConfigError(f"init_scale must be positive, got {self.init_scale}")
        if not (0.1 < self.target_accept < 0.6):
            raise ConfigError(
                f"target_accept must lie in (0.1, 0.6), got {self.target_accept}"
            )
        if not isinstance(self.seed, (int, np.integer)) or isinstance(self.seed, bool):
            raise ConfigError(f"seed must be an integer, got {self.seed!r}")
        if not (0 <= int(self.seed) < 2**64):
            raise ConfigError(f"seed must fit in 64 unsigned bits, got {self.seed}")

    @property
    def retained_per_chain(self) -> int:
        return self.keep // self.thin


@dataclass(frozen=True)
class DrawMatrix:
    """Retained draws plus the cached per-observation log-likelihoods.

    draws holds unconstrained parameter rows, ordered chain by chain;
    loglik_rows[s, i] is log p(x_i | theta_s) so downstream estimators
    never touch the model again.
    """

    draws: np.ndarray
    loglik_rows: np.ndarray
    t: float
    n_chains: int

    def __post_init__(self) -> None:
        draws = np.asarray(self.draws, dtype=float)
        ll = np.asarray(self.loglik_rows, dtype=float)
        if draws.ndim != 2 or draws.shape[0] < 1:
            raise SamplerError(f"draws must be a nonempty (S, d) matrix, got {draws.shape}")
        if ll.ndim != 2 or ll.shape[0] != draws.shape[0]:
            raise SamplerError(
                f"loglik_rows must be (S, n) with S={draws.shape[0]}, got {ll.shape}"
            )
        if not np.all(np.isfinite(draws)):
            raise SamplerError("draws contain non-finite values")
        if not np.all(np.isfinite(ll)):
            raise SamplerError("loglik_rows contain non-finite values")
        if not (0.0 < self.t <= 1.0) or not math.isfinite(self.t):
            raise SamplerError(f"inverse temperature must lie in (0, 1], got {self.t}")
        if self.n_chains < 1 or draws.shape[0] % self.n_chains != 0:
            raise SamplerError(
                f"draw count {draws.shape[0]} is not a multiple of "
                f"n_chains={self.n_chains}"
            )
        object.__setattr__(self, "draws", draws)
        object.__setattr__(self, "loglik_rows", ll)

    @property
    def n_draws(self) -> int:
        return self.draws.shape[0]

    @property
    def dim(self) -> int:
        return self.draws.shape[1]

    @property
    def n_obs(self) -> int:
        return self.loglik_rows.shape[1]

    def per_chain(self, series: np.ndarray) -> np.ndarray:
        """Reshape a length-S series to (n_chains, S / n_chains)."""
        series = np.asarray(series)
        if series.shape[0] != self.n_draws:
            raise SamplerError(
                f"series length {series.shape[0]} does not match {self.n_draws} draws"
            )
        return series.reshape(self.n_chains, -1, *series.shape[1:])


@dataclass(frozen=True)
class Diagnostics:
    """Per-chain acceptance rates and per-parameter ESS / split R-hat."""

    accept_rate: tuple[float, ...]
    ess: np.ndarray
    rhat: np.ndarray
    warnings: tuple[str, ...] = field(default=())

    @property
    def rhat_max(self) -> float:
        return float(np.max(self.rhat))


def _chain_streams(seed: int, n_chains: int) -> list[list[np.random.SeedSequence]]:
    """Per-chain (init, warmup, main) seed sequences, stable under replay."""
    return [
        np.random.SeedSequence(entropy=int(seed), spawn_key=(c,)).spawn(3)
        for c in range(n_chains)
    ]


def _initial_points(logdens, config: ChainConfig, init_seqs, dim: int) -> np.ndarray:
    """Diffuse N(0, init_scale^2) starts, retried until the density is finite."""
    out = np.empty((config.n_chains, dim))
    for c, seq in enumerate(init_seqs):
        rng = np.random.default_rng(seq)
        for _ in range(_INIT_RETRIES):
            u = config.init_scale * rng.standard_normal(dim)
            if math.isfinite(float(logdens(u[None, :])[0])):
                out[c] = u
                break
        else:
            raise SamplerError(
                f"chain {c}: no finite log density in {_INIT_RETRIES} "
                f"initialization attempts at init_scale={config.init_scale}"
            )
    return out


def _estimate_chol(window: np.ndarray, prev: np.ndarray) -> np.ndarray:
    """Per-chain Cholesky factors of regularized window covariances.

    window is (W, C, d); chains whose window is degenerate keep their
    previous factor.
    """
    n_window, n_chains, dim = window.shape
    out = prev.copy()
    if n_window < _MIN_COV_WINDOW:
        return out
    for c in range(n_chains):
        x = window[:, c, :]
        if dim == 1:
            var = float(x.var(ddof=1))
            if var > 0 and math.isfinite(var):
                out[c, 0, 0] = math.sqrt(var)
            continue
        cov = np.cov(x.T)
        scale = float(np.trace(cov)) / dim
        if not (scale > 0) or not math.isfinite(scale):
            continue
        cov = cov + (1e-8 * scale + 1e-12) * np.eye(dim)
        try:
            out[c] = np.linalg.cholesky(cov)
        except np.linalg.LinAlgError:
            continue
    return out


def _estimate_diag_chol(window: np.ndarray, prev: np.ndarray) -> np.ndarray:
    """Diagonal-only variant of :func:`_estimate_chol`."""
    n_window, n_chains, dim = window.shape
    out = prev.copy()
    if n_window < _MIN_COV_WINDOW:
        return out
    var = window.var(axis=0, ddof=1)
    for c in range(n_chains):
        v = var[c]
        if np.all(v > 0) and np.all(np.isfinite(v)):
            out[c] = np.diag(np.sqrt(v))
    return out


def _warmup(logdens, u0: np.ndarray, config: ChainConfig, warm_seqs):
    """Adapt each chain; returns final states, step sizes, and proposal factors."""
    n_chains, dim = u0.shape
    total = config.warmup
    rngs = [np.random.default_rng(s) for s in warm_seqs]
    z = np.stack([r.standard_normal((total, dim)) for r in rngs], axis=1)
    logu = np.stack([np.log(r.random(total)) for r in rngs], axis=1)

    u = u0.copy()
    logp = logdens(u)
    history = np.empty((total, n_chains, dim))

    n_ascent = min(_ASCENT_CAP, total // 5)
    ascent_step = np.full(n_chains, config.init_scale)
    for i in range(n_ascent):
        prop = u + ascent_step[:, None] * z[i]
        lp = logdens(prop)
        better = lp > logp
        u = np.where(better[:, None], prop, u)
        logp = np.where(better, lp, logp)
        ascent_step = np.where(better, ascent_step * _ASCENT_GROW, ascent_step * _ASCENT_SHRINK)
        history[i] = u

    base_step = 2.38 / math.sqrt(dim)
    log_step = np.full(n_chains, math.log(base_step))
    chol = np.broadcast_to(np.eye(dim), (n_chains, dim, dim)).copy()

    span = total - n_ascent
    checkpoints = []
    for frac, kind in ((0.2, "diag"), (0.5, "full"), (0.75, "full")):
        at = n_ascent + int(frac * span)
        if at - n_ascent >= _MIN_COV_WINDOW and at < total:
            checkpoints.append((at, kind))

    window_start = n_ascent
    rm_iter = 0
    for i in range(n_ascent, total):
        step = np.exp(log_step)
        prop = u + step[:, None] * np.einsum("cij,cj->ci", chol, z[i])
        lp = logdens(prop)
        with np.errstate(invalid="ignore"):
            delta = lp - logp
        accept_prob = np.exp(np.minimum(np.nan_to_num(delta, nan=-np.inf), 0.0))
        take = delta > logu[i]
        u = np.where(take[:, None], prop, u)
        logp = np.where(take, lp, logp)
        history[i] = u
        rm_iter += 1
        log_step += (accept_prob - config.target_accept) / rm_iter**_RM_DECAY
        for at, kind in checkpoints:
            if i + 1 == at:
                window = history[window_start : i + 1]
                if kind == "diag":
                    chol = _estimate_diag_chol(window, chol)
                else:
                    chol = _estimate_chol(window, chol)
                log_step[:] = math.log(base_step)
                window_start = i + 1
                rm_iter = 0
    return u, np.exp(log_step), chol


def _frozen_run(logdens, u0: np.ndarray, step: np.ndarray, chol: np.ndarray,
                config: ChainConfig, main_seqs):
    """Post-warmup run with a fixed kernel; returns (C, R, d) draws and
    per-chain acceptance rates."""
    n_chains, dim = u0.shape
    keep, thin = config.keep, config.thin
    rngs = [np.random.default_rng(s) for s in main_seqs]
    scaled = step[:, None, None] * chol
    moves = np.stack(
        [r.standard_normal((keep, dim)) for r in rngs], axis=1
    )
    moves = np.einsum("cij,tcj->tci", scaled, moves)
    logu = np.stack([np.log(r.random(keep)) for r in rngs], axis=1)

    u = u0.copy()
    logp = logdens(u)
    out = np.empty((n_chains, keep // thin, dim))
    accepted = np.zeros(n_chains)
    for i in range(keep):
        prop = u + moves[i]
        lp = logdens(prop)
        with np.errstate(invalid="ignore"):
            take = (lp - logp) > logu[i]
        u = np.where(take[:, None], prop, u)
        logp = np.where(take, lp, logp)
        accepted += take
        if (i + 1) % thin == 0:
            out[:, (i + 1) // thin - 1, :] = u
    return out, accepted / keep


def sample_tempered(target: TemperedTarget, config: ChainConfig) -> tuple[DrawMatrix, Diagnostics]:
    """Draw from a tempered posterior with multi-chain diagnostics.

    Deterministic given config.seed.  Raises when t = 0: that target is the
    bare prior, which the built-in models sample directly.
    """
    if target.t == 0.0:
        raise SamplerError(
            "t = 0 is the prior itself; draw from the prior instead of running chains"
        )
    model = target.model
    dim = model.dim
    logdens = make_batched_unconstrained_log_density(target)
    streams = _chain_streams(config.seed, config.n_chains)
    init_seqs = [s[0] for s in streams]
    warm_seqs = [s[1] for s in streams]
    main_seqs = [s[2] for s in streams]

    u0 = _initial_points(logdens, config, init_seqs, dim)
    u_w, step, chol = _warmup(logdens, u0, config, warm_seqs)
    chains, accept = _frozen_run(logdens, u_w, step, chol, config, main_seqs)

    flat = chains.reshape(config.n_chains * config.retained_per_chain, dim)
    ll = loglik_matrix(model, flat, target.data.rows)
    matrix = DrawMatrix(draws=flat, loglik_rows=ll, t=target.t, n_chains=config.n_chains)

    notes: list[str] = []
    ess = np.empty(dim)
    rhat = np.empty(dim)
    for j in range(dim):
        per_chain = [chains[c, :, j] for c in range(config.n_chains)]
        ess[j] = sum(effective_sample_size(series) for series in per_chain)
        if config.n_chains >= 2:
            rhat[j] = potential_scale_reduction(per_chain)
        else:
            rhat[j] = np.nan
    if config.n_chains < 2:
        notes.append("rhat requires at least 2 chains; reported as nan")
    for j in range(dim):
        if rhat[j] > _RHAT_WARN:
            notes.append(
                f"parameter {model.param_descriptors[j].name}: "
                f"rhat {rhat[j]:.4f} exceeds {_RHAT_WARN}"
            )
    diag = Diagnostics(
        accept_rate=tuple(float(a) for a in accept),
        ess=ess,
        rhat=rhat,
        warnings=tuple(notes),
    )
    return matrix, diag


def effective_sample_size(series) -> float:
    """ESS of a scalar MCMC series via the initial monotone sequence rule.

    Autocovariances come from one FFT; successive pair sums of the
    autocorrelation are truncated at the first non-positive value and forced
    non-increasing before summation.  The result is clamped to (0, length].
    A constant series returns its length with a warning, since zero variance
    carries no autocorrelation information.
    """
    x = np.asarray(series, dtype=float)
    if x.ndim != 1:
        raise SamplerError(f"series must be 1-d, got shape {x.shape}")
    length = x.size
    if length < 100:
        raise SamplerError(f"series must have at least 100 points, got {length}")
    if not np.all(np.isfinite(x)):
        raise SamplerError("series contains non-finite values")
    centered = x - x.mean()
    if np.all(centered == 0.0):
        _warnings.warn("constant series: effective sample size set to the length")
        return float(length)
    nfft = next_fast_len(2 * length)
    spectrum = np.fft.rfft(centered, nfft)
    acov = np.fft.irfft(spectrum * np.conj(spectrum), nfft)[:length].real / length
    rho = acov / acov[0]
    n_pairs = length // 2
    pair_sums = rho[0 : 2 * n_pairs : 2] + rho[1 : 2 * n_pairs : 2]
    negative = np.nonzero(pair_sums <= 0.0)[0]
    if negative.size:
        pair_sums = pair_sums[: negative[0]]
    if pair_sums.size == 0:
        return float(length)
    pair_sums = np.minimum.accumulate(pair_sums)
    tau = max(2.0 * float(pair_sums.sum()) - 1.0, 1.0 / length)
    return float(min(length / tau, float(length)))


def potential_scale_reduction(chains) -> float:
    """Split R-hat over two or more equal-length chains.

    Each chain is halved, and the usual between/within variance ratio is
    computed over the split sequences.  Values below 1 arise only from
    finite-sample noise, so the result is floored at 1 to keep the
    diagnostic one-sided; identical constant chains return exactly 1 with a
    warning.
    """
    arrays = [np.asarray(c, dtype=float) for c in chains]
    if len(arrays) < 2:
        raise SamplerError(f"need at least 2 chains, got {len(arrays)}")
    lengths = {a.shape for a in arrays}
    if len(lengths) != 1 or arrays[0].ndim != 1:
        raise SamplerError(f"chains must be equal-length 1-d sequences, got {lengths}")
    length = arrays[0].size
    if length < 100:
        raise SamplerError(f"chains must have at least 100 points, got {length}")
    stacked = np.stack(arrays)
    if not np.all(np.isfinite(stacked)):
        raise SamplerError("chains contain non-finite values")
    half = length // 2
    split = stacked[:, : 2 * half].reshape(len(arrays) * 2, half)
    if np.all(split == split[0, 0]):
        _warnings.warn("identical constant chains: split R-hat is 1 by convention")
        return 1.0
    within = float(split.var(axis=1, ddof=1).mean())
    between_over_len = float(split.mean(axis=1).var(ddof=1))
    if within == 0.0:
        _warnings.warn("zero within-chain variance with distinct chains")
        return float("inf")
    var_plus = (half - 1) / half * within + between_over_len
    return max(math.sqrt(var_plus / within), 1.0)


def dump_draws(matrix: DrawMatrix, path) -> None:
    """Write draws as plain text, one per line, tab-separated, 17 digits."""
    np.savetxt(path, matrix.draws, fmt="%.17g", delimiter="\t")
