"""Variational information bottleneck over the conditioning embedding.

The VIB encoder maps c to a diagonal Gaussian posterior (mu, log-std); the
decoder maps a reparameterized sample z back to a surrogate conditioning
c-hat. Its loss is the flow-matching residual computed with c-hat plus
beta * KL(posterior || N(0, I)).

Gradient blocking is structural, not masked: the conditioning is produced by
a plain forward pass (nothing to detach), and the velocity net is traversed
with param_grads=False, so the base policy cannot receive so much as a zero
from this objective. vib_loss draws, in order: k indices, w, then epsilon;
the first two match il_loss so the two objectives can be compared on
identical interpolants.
"""

from __future__ import annotations

import numpy as np

from .flow import K_EMBED_DIM, TRAIN_GRID, PolicyBundle, _k_embedding_rows, il_loss, interpolate


def vib_posterior(bundle: PolicyBundle, c: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Posterior parameters (mu, log_std) for a batch of embeddings."""
    out = bundle.vib_enc.forward(c)
    return out[..., : bundle.d_z], out[..., bundle.d_z :]


def vib_sample(bundle: PolicyBundle, c: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    mu, log_std = vib_posterior(bundle, c)
    return mu + np.exp(log_std) * rng.standard_normal(mu.shape)


def vib_decode(bundle: PolicyBundle, z: np.ndarray) -> np.ndarray:
    return bundle.vib_dec.forward(z)


def kl_to_prior(mu: np.ndarray, log_std: np.ndarray) -> np.ndarray:
    """Per-row KL(N(mu, diag sigma^2) || N(0, I)) = 0.5 sum(mu^2 + sigma^2 - 1 - 2 log sigma)."""
    sigma2 = np.exp(2.0 * log_std)
    return 0.5 * np.sum(mu**2 + sigma2 - 1.0 - 2.0 * log_std, axis=-1)


def vib_loss(
    obs: np.ndarray,
    chunks: np.ndarray,
    bundle: PolicyBundle,
    beta: float,
    rng: np.random.Generator,
    continuous_k: bool = False,
) -> tuple[float, dict[str, np.ndarray], dict[str, float]]:
    """Bottleneck loss: flow residual through c-hat plus beta * KL.

    Returns (value, grads for vib_enc/vib_dec only, aux with recon and kl).
    """
    B = obs.shape[0]
    a = chunks.reshape(B, -1)
    if continuous_k:
        k = rng.uniform(size=B)
    else:
        k = TRAIN_GRID[rng.integers(0, len(TRAIN_GRID), size=B)]
    w = rng.standard_normal(a.shape)
    eps = rng.standard_normal((B, bundle.d_z))

    c = bundle.encoder.forward(obs)  # forward only: the base encoder sees no gradient
    head, enc_cache = bundle.vib_enc.forward_cached(c)
    mu, log_std = head[:, : bundle.d_z], head[:, bundle.d_z :]
    sigma = np.exp(log_std)
    z = mu + sigma * eps
    c_hat, dec_cache = bundle.vib_dec.forward_cached(z)

    x = np.hstack([interpolate(a, w, k), _k_embedding_rows(k), c])
    x[:, a.shape[1] + K_EMBED_DIM :] = c_hat
    v, vel_cache = bundle.velocity.forward_cached(x)
    resid = v - (w - a)
    recon = float(np.sum(resid * resid) / B)
    kl_rows = kl_to_prior(mu, log_std)
    kl = float(np.mean(kl_rows))
    value = recon + beta * kl

    # frozen traversal of the velocity net: input gradient only
    _, g_x = bundle.velocity.backward(vel_cache, 2.0 * resid / B, param_grads=False)
    g_chat = g_x[:, a.shape[1] + K_EMBED_DIM :]
    g_dec_params, g_z = bundle.vib_dec.backward(dec_cache, g_chat)
    g_mu = g_z + beta * mu / B
    g_log_std = g_z * sigma * eps + beta * (sigma**2 - 1.0) / B
    g_enc_params, _ = bundle.vib_enc.backward(
        enc_cache, np.hstack([g_mu, g_log_std]), input_grad=False
    )
    grads = {"vib_enc": g_enc_params, "vib_dec": g_dec_params}
    return value, grads, {"recon": recon, "kl": kl}


def offline_loss(
    obs: np.ndarray,
    chunks: np.ndarray,
    bundle: PolicyBundle,
    beta: float,
    rng_il: np.random.Generator,
    rng_vib: np.random.Generator,
    vib_enabled: bool = True,
    continuous_k: bool = False,
) -> tuple[float, dict[str, np.ndarray], dict[str, float]]:
    """Combined objective: il_loss + vib_loss on independent rng streams.

    The separate streams keep the imitation term's draws independent of
    whether the bottleneck branch runs at all, so base-net training with the
    bottleneck disabled is bit-identical to training with it enabled.
    """
    il_value, grads = il_loss(obs, chunks, bundle, rng_il, continuous_k)
    aux = {"il": il_value, "recon": 0.0, "kl": 0.0}
    total = il_value
    if vib_enabled:
        vib_value, vib_grads, vib_aux = vib_loss(obs, chunks, bundle, beta, rng_vib, continuous_k)
        grads = {**grads, **vib_grads}
        aux.update(vib_aux)
        total += vib_value
    return total, grads, aux
