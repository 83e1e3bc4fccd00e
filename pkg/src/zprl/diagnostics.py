"""Measurement machinery: smoothness, latent OOD score, decoded displacement.

The OOD score fits a shrunk Gaussian to latents of the offline dataset and
reports Mahalanobis distances of perturbed latents against it. Shrinkage
follows the Ledoit-Wolf rule, which keeps the fit well conditioned even when
the latent dimension rivals the sample count.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from .dists import squashed_sample
from .envs import DT, make_env, obs_agent_pos
from .errors import CalibrationError, DivergenceError
from .seeding import stream
from .vib import vib_decode, vib_posterior

# decoded shifts above this usually mean the decoder is extrapolating
DISPLACEMENT_THRESHOLD = 0.8

PolicyFn = Callable[[np.ndarray, np.random.Generator], np.ndarray]


# -- smoothness ----------------------------------------------------------------


@dataclass(frozen=True)
class SmoothnessEntry:
    vel: float
    acc: float | None  # None when fewer than 3 positions
    dt: float


def smoothness(positions: np.ndarray, dt: float) -> SmoothnessEntry:
    """Mean finite-difference speed and acceleration magnitude of a path."""
    pts = np.asarray(positions, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[0] < 2:
        raise ValueError("smoothness needs at least two positions")
    if dt <= 0:
        raise ValueError("dt must be positive")
    vel = float(np.linalg.norm(np.diff(pts, axis=0) / dt, axis=1).mean())
    if pts.shape[0] < 3:
        return SmoothnessEntry(vel, None, dt)
    second = (pts[2:] + pts[:-2] - 2.0 * pts[1:-1]) / dt**2
    acc = float(np.linalg.norm(second, axis=1).mean())
    return SmoothnessEntry(vel, acc, dt)


# -- latent Gaussian fit ---------------------------------------------------------


@dataclass
class LatentGaussianFit:
    mean: np.ndarray
    cov: np.ndarray
    rho: float
    n_samples: int


def ledoit_wolf_fit(samples: np.ndarray) -> LatentGaussianFit:
    """Shrink the empirical covariance toward a scaled identity.

    rho = min(1, ((1/n^2) sum_i ||x_i x_i^T - S||_F^2) / ||S - mu I||_F^2)
    with S the biased empirical covariance and mu = trace(S)/d.
    """
    x = np.asarray(samples, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 2:
        raise ValueError("ledoit_wolf_fit needs an (n >= 2, d) sample matrix")
    n, d = x.shape
    m = x.mean(axis=0)
    xc = x - m
    s_emp = xc.T @ xc / n
    mu = float(np.trace(s_emp)) / d
    if np.trace(s_emp) == 0.0:
        raise CalibrationError("latent samples have zero variance in every dimension")
    denom = float(np.sum((s_emp - mu * np.eye(d)) ** 2))
    if denom == 0.0:
        rho = 0.0
    else:
        # sum_i ||x x^T - S||_F^2 = sum_i (||x||^4 - 2 x^T S x) + n ||S||_F^2
        norms2 = np.sum(xc**2, axis=1)
        quad = np.sum(xc * (xc @ s_emp), axis=1)
        num = float(np.sum(norms2**2) - 2.0 * np.sum(quad) + n * np.sum(s_emp**2)) / n**2
        rho = min(1.0, num / denom)
    cov = (1.0 - rho) * s_emp + rho * mu * np.eye(d)
    cov = 0.5 * (cov + cov.T)
    return LatentGaussianFit(mean=m, cov=cov, rho=rho, n_samples=n)


def mahalanobis(x: np.ndarray, fit: LatentGaussianFit) -> float | np.ndarray:
    """sqrt((x-m)^T S^-1 (x-m)) via a Cholesky solve, batched over rows."""
    try:
        factor = cho_factor(fit.cov, lower=True)
    except LinAlgError as e:
        raise DivergenceError(f"latent covariance is not positive definite: {e}") from e
    pts = np.asarray(x, dtype=np.float64)
    single = pts.ndim == 1
    diff = np.atleast_2d(pts) - fit.mean
    sol = cho_solve(factor, diff.T).T
    dist = np.sqrt(np.sum(diff * sol, axis=1))
    return float(dist[0]) if single else dist


# -- decoded displacement ----------------------------------------------------------


def displacement(dataset, bundle, actor, lam: float, rng: np.random.Generator,
                 n_samples: int = 1024) -> float:
    """Mean L2 shift of the decoded embedding under actor perturbations.

    Samples (c, z) pairs from the offline dataset, draws a residual from the
    actor at each, and measures ||decode(z + lam u) - decode(z)||_2.
    """
    n = min(n_samples, dataset.obs.shape[0])
    idx = rng.choice(dataset.obs.shape[0], size=n, replace=False)
    c = bundle.encode(dataset.obs[idx])
    mu, log_std = vib_posterior(bundle, c)
    z = mu + np.exp(log_std) * rng.standard_normal(mu.shape)
    heads = actor.forward(np.concatenate([c, z], axis=1))
    d = heads.shape[1] // 2
    noise = rng.standard_normal((n, d))
    u, _, _ = squashed_sample(heads[:, :d], heads[:, d:], noise, 1.0)
    shift = vib_decode(bundle, z + lam * u) - vib_decode(bundle, z)
    return float(np.linalg.norm(shift, axis=1).mean())


# -- evaluation runner --------------------------------------------------------------


@dataclass(frozen=True)
class EvalReport:
    success_rate: float
    avg_episode_len: float  # env steps per episode
    vel_mean: float         # desired-position series (headline)
    acc_mean: float
    vel_exec_mean: float    # executed-position series
    acc_exec_mean: float
    n_episodes: int


def _mean_or_nan(values: list[float]) -> float:
    return float(np.mean(values)) if values else float("nan")


def evaluate_policy(env_id: str, policy: PolicyFn, n_episodes: int, seed_base: int,
                    horizon: int | None = None) -> EvalReport:
    """Roll the policy on seeded layouts with exploration disabled.

    The policy is a callable (obs, rng) -> chunk; each episode gets its own
    rng stream so reports are reproducible and episode-order independent.
    Desired positions integrate the commanded actions without workspace
    clipping; executed positions come from the environment.
    """
    if n_episodes < 1:
        raise ValueError("n_episodes must be >= 1")
    env = make_env(env_id, horizon)
    successes = 0
    lens: list[float] = []
    vel_d: list[float] = []
    acc_d: list[float] = []
    vel_e: list[float] = []
    acc_e: list[float] = []
    for i in range(n_episodes):
        ep_seed = seed_base + i
        obs = env.reset(ep_seed)
        rng = stream(ep_seed, "eval")
        start = obs_agent_pos(obs).copy()
        desired = [start.copy()]
        executed = [start.copy()]
        steps = 0
        while True:
            chunk = np.asarray(policy(obs, rng), dtype=np.float64)
            result = env.step_chunk(chunk)
            for j in range(result.positions.shape[0]):
                desired.append(desired[-1] + chunk[j] * DT)
            executed.extend(result.positions)
            steps += result.positions.shape[0]
            obs = result.obs
            if result.terminal or result.truncated:
                break
        successes += int(result.terminal)
        lens.append(float(steps))
        for series, vels, accs in ((desired, vel_d, acc_d), (executed, vel_e, acc_e)):
            entry = smoothness(np.asarray(series), DT)
            vels.append(entry.vel)
            if entry.acc is not None:
                accs.append(entry.acc)
    return EvalReport(
        success_rate=successes / n_episodes,
        avg_episode_len=_mean_or_nan(lens),
        vel_mean=_mean_or_nan(vel_d),
        acc_mean=_mean_or_nan(acc_d),
        vel_exec_mean=_mean_or_nan(vel_e),
        acc_exec_mean=_mean_or_nan(acc_e),
        n_episodes=n_episodes,
    )
