"""Offline training loop: imitation plus bottleneck, and latent export."""

from __future__ import annotations

import math
from pathlib import Path

import numpy as np

from .config import OfflineConfig
from .envs import DemoDataset
from .errors import DivergenceError
from .flow import PolicyBundle, init_bundle
from .optim import Adam
from .seeding import stream
from .vib import offline_loss, vib_sample


def train_offline(
    dataset: DemoDataset,
    cfg: OfflineConfig,
    seed: int,
) -> tuple[PolicyBundle, list[dict]]:
    """Train a fresh bundle on the dataset; returns (bundle, per-epoch history).

    Three named rng streams drive the loop (shuffling, imitation draws,
    bottleneck draws), so the base nets follow the same trajectory whether or
    not the bottleneck branch is enabled.
    """
    env_id = dataset.meta["env"]
    bundle = init_bundle(env_id, cfg, seed)
    opts = {name: Adam(getattr(bundle, name).params.size, lr=cfg.lr)
            for name in ("encoder", "velocity", "vib_enc", "vib_dec")}
    rng_data = stream(seed, "offline.data")
    rng_il = stream(seed, "offline.il")
    rng_vib = stream(seed, "offline.vib")

    n = dataset.n_pairs
    batch = min(cfg.batch, n)
    steps = math.ceil(n / batch)
    history: list[dict] = []
    for epoch in range(cfg.epochs):
        perm = rng_data.permutation(n)
        sums = {"loss": 0.0, "il": 0.0, "recon": 0.0, "kl": 0.0}
        for s in range(steps):
            idx = perm[s * batch : (s + 1) * batch]
            value, grads, aux = offline_loss(
                dataset.obs[idx], dataset.chunks[idx], bundle, cfg.beta,
                rng_il, rng_vib, vib_enabled=cfg.vib_enabled, continuous_k=cfg.continuous_k,
            )
            if not np.isfinite(value):
                raise DivergenceError(f"offline loss diverged at epoch {epoch}, step {s}")
            for name, g in grads.items():
                net = getattr(bundle, name)
                net.params = opts[name].step(net.params, g)
            sums["loss"] += value
            sums["il"] += aux["il"]
            sums["recon"] += aux["recon"]
            sums["kl"] += aux["kl"]
        history.append({"epoch": epoch, **{k: v / steps for k, v in sums.items()}})
    return bundle, history


def export_latents(dataset: DemoDataset, bundle: PolicyBundle, seed: int, path: str | Path) -> None:
    """Sample one posterior z per dataset pair and write latents.csv."""
    c = bundle.encode(dataset.obs)
    z = vib_sample(bundle, c, stream(seed, "latents"))
    header = "trajectory,step," + ",".join(f"z_{i}" for i in range(bundle.d_z))
    lines = [header]
    for t, s, row in zip(dataset.traj_index, dataset.step_index, z):
        lines.append(f"{t},{s}," + ",".join(repr(float(v)) for v in row))
    Path(path).write_text("\n".join(lines) + "\n")
