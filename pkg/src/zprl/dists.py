"""Tanh-squashed diagonal Gaussian heads.

sample = scale * tanh(mean + sigma * noise), with the change-of-variables
log-probability. Raw log-stds are clamped to [LOG_STD_MIN, LOG_STD_MAX]
before exponentiation; clamped coordinates receive zero log-std gradient.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

LOG_STD_MIN = -10.0
LOG_STD_MAX = 2.0
SQUASH_EPS = 1e-6  # keeps the log of the tanh Jacobian finite at saturation

_LOG_2PI = np.log(2.0 * np.pi)


@dataclass
class SquashCache:
    sigma: np.ndarray
    noise: np.ndarray
    tanh_u: np.ndarray
    scale: float
    clamp_mask: np.ndarray  # 1 where the raw log-std was inside the clamp


def squashed_sample(
    mean: np.ndarray,
    log_std_raw: np.ndarray,
    noise: np.ndarray,
    scale: float,
) -> tuple[np.ndarray, np.ndarray, SquashCache]:
    """Reparameterized sample and per-row log-probability.

    mean, log_std_raw, noise: (B, d). Returns (sample (B, d), logp (B,), cache).
    """
    log_std = np.clip(log_std_raw, LOG_STD_MIN, LOG_STD_MAX)
    mask = ((log_std_raw > LOG_STD_MIN) & (log_std_raw < LOG_STD_MAX)).astype(np.float64)
    sigma = np.exp(log_std)
    u = mean + sigma * noise
    t = np.tanh(u)
    sample = scale * t
    # Gaussian logpdf at the reparameterized point: (u - mean)/sigma == noise
    gauss = -0.5 * noise**2 - log_std - 0.5 * _LOG_2PI
    corr = np.log(scale * (1.0 - t**2) + SQUASH_EPS)
    logp = (gauss - corr).sum(axis=-1)
    return sample, logp, SquashCache(sigma, noise, t, float(scale), mask)


def squashed_sample_backward(
    cache: SquashCache,
    grad_sample: np.ndarray,
    grad_logp: np.ndarray,
) -> tuple[np.ndarray, np.ndarray]:
    """Gradients of (grad_sample . sample + grad_logp . logp) w.r.t. mean and raw log-std."""
    t = cache.tanh_u
    s = cache.scale
    sech2 = 1.0 - t**2
    jac = s * sech2  # d sample / d u
    glp = np.asarray(grad_logp)[..., None]
    # d logp / d u, holding mean/log_std fixed elsewhere
    dlogp_du = 2.0 * s * t * sech2 / (s * sech2 + SQUASH_EPS)
    g_u = grad_sample * jac + glp * dlogp_du
    g_mean = g_u
    du_dls = cache.sigma * cache.noise
    g_log_std = g_u * du_dls + glp * (-1.0)
    return g_mean, g_log_std * cache.clamp_mask


def squashed_mode(mean: np.ndarray, scale: float) -> np.ndarray:
    """Deterministic head output (used for evaluation rollouts)."""
    return scale * np.tanh(mean)
