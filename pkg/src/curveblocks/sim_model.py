"""Block-level shape-invariant curve model.

Within a block, each cell's curve is an amplitude / scale / phase
transformation of the block's mean shape,

    x(t) = a1 + exp(a2) * m(t - a3; beta) + eps(t),

with cell-specific Gaussian random effects a = (a1, a2, a3) and i.i.d.
Gaussian noise. Any subset of the three effects can be switched off, in which
case the corresponding coordinate is degenerate at zero. The scale effect
acts through exp(a2) so that positivity never has to be enforced.

The marginal density of a cell (random effects integrated out) has no closed
form; it is estimated by Monte Carlo with antithetic pairing, in log space.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .data import CellCurve
from .errors import ConfigError, DomainError, NumericError
from .splines import SplineSpec, clipped_shape_values, shape_fn

LOG_2PI = float(np.log(2.0 * np.pi))

_CONFIG_ORDER = ("amplitude_on", "scale_on", "phase_on")


@dataclass(frozen=True)
class RandomEffectConfig:
    """Which of the three random effects (amplitude, scale, phase) are on."""

    amplitude_on: bool
    scale_on: bool
    phase_on: bool

    @classmethod
    def from_string(cls, s: str) -> "RandomEffectConfig":
        """Parse a 3-character T/F string such as ``"TFT"``."""
        s = s.strip().upper()
        if len(s) != 3 or any(c not in "TF" for c in s):
            raise ConfigError(f"random effect configuration must be 3 chars of T/F, got {s!r}")
        return cls(*(c == "T" for c in s))

    def to_string(self) -> str:
        return "".join("T" if on else "F" for on in self.active)

    @property
    def active(self) -> tuple[bool, bool, bool]:
        return (self.amplitude_on, self.scale_on, self.phase_on)

    @property
    def active_indices(self) -> np.ndarray:
        return np.flatnonzero(np.asarray(self.active))

    @property
    def n_active(self) -> int:
        return int(sum(self.active))

    @classmethod
    def all_configs(cls) -> list["RandomEffectConfig"]:
        """All 8 on/off configurations, FFF first, TTT last."""
        return [
            cls(bool(a), bool(b), bool(c))
            for a in (0, 1)
            for b in (0, 1)
            for c in (0, 1)
        ]


@dataclass
class BlockParams:
    """Parameters of one block: random effect moments, noise sd, shape coefficients.

    ``sigma_alpha`` holds the *variances* (the diagonal of the random effect
    covariance); ``sigma_eps`` is the residual standard deviation. Entries of
    ``mu_alpha`` and ``sigma_alpha`` for switched-off effects are exactly 0.
    """

    mu_alpha: np.ndarray
    sigma_alpha: np.ndarray
    sigma_eps: float
    beta: np.ndarray

    def __post_init__(self) -> None:
        self.mu_alpha = np.asarray(self.mu_alpha, dtype=float)
        self.sigma_alpha = np.asarray(self.sigma_alpha, dtype=float)
        self.beta = np.asarray(self.beta, dtype=float)
        self.sigma_eps = float(self.sigma_eps)

    def validate(self, config: RandomEffectConfig, spec: SplineSpec) -> None:
        if self.mu_alpha.shape != (3,) or self.sigma_alpha.shape != (3,):
            raise ConfigError("mu_alpha and sigma_alpha must be 3-vectors")
        if not self.sigma_eps > 0:
            raise ConfigError(f"sigma_eps must be positive, got {self.sigma_eps}")
        if np.any(self.sigma_alpha < 0):
            raise ConfigError("sigma_alpha entries must be nonnegative")
        off = ~np.asarray(config.active)
        if np.any(self.mu_alpha[off] != 0.0) or np.any(self.sigma_alpha[off] != 0.0):
            raise ConfigError(
                f"switched-off random effects must have exactly zero mean and variance "
                f"(config {config.to_string()})"
            )
        if self.beta.shape != (spec.basis_dim,):
            raise ConfigError(
                f"beta has length {self.beta.shape}, basis dimension is {spec.basis_dim}"
            )

    def copy(self) -> "BlockParams":
        return BlockParams(
            self.mu_alpha.copy(), self.sigma_alpha.copy(), self.sigma_eps, self.beta.copy()
        )


def _check_times_in_domain(times: np.ndarray, spec: SplineSpec) -> None:
    lo, hi = spec.domain
    if times.size and (times.min() < lo or times.max() > hi):
        raise DomainError(f"curve times must lie in the spline domain [{lo}, {hi}] before shifting")


def _transformed_means(spec: SplineSpec, beta: np.ndarray, times: np.ndarray,
                       alphas: np.ndarray) -> np.ndarray:
    """Mean curves a1 + exp(a2) * m(t - a3) for a stack of effect vectors.

    alphas has shape (..., 3); the result has shape (..., len(times)).
    Shifted times falling outside the domain are clamped to its ends.
    """
    shifted = times - alphas[..., 2:3]
    mvals = clipped_shape_values(spec, beta, shifted)
    return alphas[..., 0:1] + np.exp(alphas[..., 1:2]) * mvals


def masked_gauss_loglik(values: np.ndarray, mask: np.ndarray, means: np.ndarray,
                        sigma_eps: float) -> np.ndarray:
    """Gaussian log-likelihood summed over observed entries (last axis).

    ``means`` may carry leading batch axes; masked entries contribute 0.
    """
    resid = np.where(mask, values - means, 0.0)
    rss = np.sum(resid * resid, axis=-1)
    n_obs = np.sum(mask, axis=-1)
    return -0.5 * rss / (sigma_eps * sigma_eps) - n_obs * (0.5 * LOG_2PI + np.log(sigma_eps))


def conditional_mean(curve_times, alpha, params: BlockParams, spec: SplineSpec) -> np.ndarray:
    """Mean curve at the given random effect vector, evaluated on `curve_times`."""
    times = np.asarray(curve_times, dtype=float)
    _check_times_in_domain(times, spec)
    alpha = np.asarray(alpha, dtype=float)
    return _transformed_means(spec, params.beta, times, alpha[None, :])[0]


def conditional_loglik(curve: CellCurve, alpha, params: BlockParams, spec: SplineSpec) -> float:
    """Log-density of the curve given the random effect vector."""
    means = conditional_mean(curve.times, alpha, params, spec)
    return float(masked_gauss_loglik(curve.values, curve.observed_mask, means, params.sigma_eps))


def draw_random_effects(params: BlockParams, M: int, rng: np.random.Generator) -> np.ndarray:
    """M antithetic draws from N(mu_alpha, diag(sigma_alpha)), shape (M, 3).

    Draws come in pairs reflected about the mean; switched-off coordinates
    (zero mean, zero variance) come out exactly 0.
    """
    half = (M + 1) // 2
    z = rng.standard_normal((half, 3))
    z = np.concatenate([z, -z], axis=0)[:M]
    return params.mu_alpha + np.sqrt(params.sigma_alpha) * z


def marginal_loglik_mc(curve: CellCurve, params: BlockParams, config: RandomEffectConfig,
                       spec: SplineSpec, M: int, rng: np.random.Generator) -> float:
    """Monte Carlo estimate of the log marginal density of one curve.

    Averages exp(conditional log-likelihood) over M random effect draws using
    log-sum-exp. With all effects off the integral is degenerate and the
    conditional log-likelihood at zero is returned without consuming draws.
    """
    if M < 1:
        raise ConfigError(f"Monte Carlo sample count must be >= 1, got {M}")
    params.validate(config, spec)
    if config.n_active == 0:
        return conditional_loglik(curve, np.zeros(3), params, spec)
    times = np.asarray(curve.times, dtype=float)
    _check_times_in_domain(times, spec)
    alphas = draw_random_effects(params, M, rng)
    means = _transformed_means(spec, params.beta, times, alphas)
    lls = masked_gauss_loglik(curve.values, curve.observed_mask, means, params.sigma_eps)
    out = float(logsumexp(lls) - np.log(M))
    if not np.isfinite(out):
        raise NumericError("Monte Carlo marginal log-likelihood is not finite for this cell")
    return out


def sample_transformed_curve(shape, domain, mu_alpha, sigma_alpha, sigma_eps,
                             times, rng: np.random.Generator) -> np.ndarray:
    """Draw one curve: random effects, transformed shape, Gaussian noise.

    `shape` is any callable mean shape; shifted times are clamped to
    `domain`. Used both with spline shapes and with analytic ones.
    """
    times = np.asarray(times, dtype=float)
    alpha = np.asarray(mu_alpha, float) + np.sqrt(np.asarray(sigma_alpha, float)) * rng.standard_normal(3)
    shifted = np.clip(times - alpha[2], domain[0], domain[1])
    mean = alpha[0] + np.exp(alpha[1]) * shape(shifted)
    return mean + sigma_eps * rng.standard_normal(times.size)


def sample_cell(params: BlockParams, config: RandomEffectConfig, spec: SplineSpec,
                times, rng: np.random.Generator) -> CellCurve:
    """Draw one cell curve from the block's generative model."""
    params.validate(config, spec)
    times = np.asarray(times, dtype=float)
    _check_times_in_domain(times, spec)
    values = sample_transformed_curve(
        shape_fn(spec, params.beta), spec.domain,
        params.mu_alpha, params.sigma_alpha, params.sigma_eps, times, rng,
    )
    return CellCurve(times, values)
