"""Comparison steering interfaces sharing the latent arm's SAC machinery.

Three alternative intervention points for the online residual: directly on
the action chunk, on the flow's starting noise, and on the raw conditioning
embedding. Each class implements the same protocol LatentSteering does
(bind, draw_base, combine, chunk_from_executed, ...), so finetune_loop and
sac_update treat all four arms identically; the arms differ only in residual
dimension and in what the critic sees next to c.

These are deliberately minimal analogues. The point of the comparison is the
intervention point, so everything else (actor head, bounds handling, update
rule, calibration) stays shared.
"""

from __future__ import annotations

import numpy as np

from .errors import ConfigError
from .finetune import LatentSteering, act_online


class ActionResidualSteering:
    """Bounded additive correction on the action chunk itself."""

    kind = "action"
    fixed_scale: float | None = None
    decodes_latent = False

    def __init__(self, scale: float = 0.0):
        self.scale = float(scale)
        self.residual_dim = 0
        self.base_dim = 0
        self.executed_dim = 0
        self.ramp_progress = 1.0

    def bind(self, dims) -> "ActionResidualSteering":
        d = dims.chunk_len * 2
        self.residual_dim = self.base_dim = self.executed_dim = d
        return self

    def draw_base(self, bundle, c, rng, explore: bool) -> np.ndarray:
        chunk = bundle.sample_chunk(c, rng)
        flat = chunk.ravel() if np.asarray(c).ndim == 1 else chunk
        return np.clip(flat, -1.0, 1.0)

    def calibration_pair(self, bundle, c, rng) -> tuple[np.ndarray, np.ndarray]:
        base = self.draw_base(bundle, c, rng, explore=True)
        return base, base

    def combine(self, c, base, u) -> np.ndarray:
        return np.clip(base + self.scale * u, -1.0, 1.0)

    def combine_grad(self, c, base, u) -> np.ndarray:
        pre = base + self.scale * u
        return self.scale * ((pre > -1.0) & (pre < 1.0))

    def chunk_from_executed(self, bundle, c, executed, rng) -> np.ndarray:
        return executed.reshape(-1, 2)

    def maybe_gate(self, u: np.ndarray, rng, explore: bool) -> np.ndarray:
        # progressive exploration: apply the residual with ramping probability.
        # At full ramp the draw is skipped so non-progressive runs are unaffected.
        if self.ramp_progress >= 1.0 or rng.uniform() < self.ramp_progress:
            return u
        return np.zeros_like(u)


class NoiseSteering:
    """Actor picks the flow's starting noise w outright, bounded to [-3, 3]."""

    kind = "noise"
    fixed_scale: float | None = 3.0  # ~3 sigma of the N(0, I) prior per dimension
    decodes_latent = False

    def __init__(self):
        self.scale = 3.0
        self.residual_dim = 0
        self.base_dim = 0
        self.executed_dim = 0
        self.ramp_progress = 1.0

    def bind(self, dims) -> "NoiseSteering":
        self.residual_dim = self.executed_dim = dims.chunk_len * 2
        self.base_dim = 0
        return self

    def draw_base(self, bundle, c, rng, explore: bool) -> np.ndarray:
        if np.asarray(c).ndim == 1:
            return np.zeros(0)
        return np.zeros((c.shape[0], 0))

    def combine(self, c, base, u) -> np.ndarray:
        # absolute, not residual: the base draw is replaced, not nudged
        return self.scale * u

    def combine_grad(self, c, base, u) -> np.ndarray:
        return np.full_like(u, self.scale)

    def chunk_from_executed(self, bundle, c, executed, rng) -> np.ndarray:
        return bundle.sample_chunk(c, rng, w=executed)

    def maybe_gate(self, u: np.ndarray, rng, explore: bool) -> np.ndarray:
        return u


class EmbeddingResidualSteering:
    """Bounded additive correction on the conditioning embedding c."""

    kind = "emb"
    fixed_scale: float | None = None
    decodes_latent = False

    def __init__(self, scale: float = 0.0):
        self.scale = float(scale)
        self.residual_dim = 0
        self.base_dim = 0
        self.executed_dim = 0
        self.ramp_progress = 1.0

    def bind(self, dims) -> "EmbeddingResidualSteering":
        self.residual_dim = self.executed_dim = dims.dim_c
        self.base_dim = 0
        return self

    def draw_base(self, bundle, c, rng, explore: bool) -> np.ndarray:
        if np.asarray(c).ndim == 1:
            return np.zeros(0)
        return np.zeros((c.shape[0], 0))

    def calibration_pair(self, bundle, c, rng) -> tuple[np.ndarray, np.ndarray]:
        return c, np.zeros((c.shape[0], 0))

    def combine(self, c, base, u) -> np.ndarray:
        return c + self.scale * u

    def combine_grad(self, c, base, u) -> np.ndarray:
        return np.full_like(u, self.scale)

    def chunk_from_executed(self, bundle, c, executed, rng) -> np.ndarray:
        # conditions the flow on the shifted embedding directly; no decode step
        return bundle.sample_chunk(executed, rng)

    def maybe_gate(self, u: np.ndarray, rng, explore: bool) -> np.ndarray:
        return u


_KINDS = {
    "zprl": LatentSteering,
    "action": ActionResidualSteering,
    "noise": NoiseSteering,
    "emb": EmbeddingResidualSteering,
}


def make_interface(kind: str):
    if kind not in _KINDS:
        raise ConfigError(f"unknown interface {kind!r}, expected one of {sorted(_KINDS)}")
    return _KINDS[kind]()


def action_residual_act(obs, bundle, actor, scale: float, rng) -> np.ndarray:
    """One exploratory action-residual decision; rng serves base draw and actor."""
    iface = ActionResidualSteering(scale).bind(bundle)
    return act_online(obs, actor, bundle, iface, rng, rng, rng, explore=True).chunk


def noise_steer_act(obs, bundle, actor, rng) -> np.ndarray:
    iface = NoiseSteering().bind(bundle)
    return act_online(obs, actor, bundle, iface, rng, rng, rng, explore=True).chunk


def embedding_residual_act(obs, bundle, actor, scale: float, rng) -> np.ndarray:
    iface = EmbeddingResidualSteering(scale).bind(bundle)
    return act_online(obs, actor, bundle, iface, rng, rng, rng, explore=True).chunk
