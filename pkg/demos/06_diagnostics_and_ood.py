"""
Diagnostics: smoothness, off-distribution latents, decoded displacement
=======================================================================

Three read-outs used throughout the workbench: end-effector smoothness of a
rollout, the Mahalanobis alarm for perturbed latents, and how far a latent
shift moves the decoded conditioning.
"""

import shutil
import tempfile
from pathlib import Path

import numpy as np

from zprl.config import OfflineConfig, OnlineConfig
from zprl.diagnostics import displacement, ledoit_wolf_fit, mahalanobis, smoothness
from zprl.envs import generate_demos, load_demos, make_env
from zprl.finetune import LatentSteering, init_online_state, offline_latent_fit
from zprl.offline import train_offline
from zprl.seeding import stream
from zprl.vib import vib_posterior

# Smoothness first, on a pair of hand-made paths: velocity and acceleration
# integrals of a straight line against a jittery version of the same line.
t = np.linspace(0.0, 1.0, 60)[:, None]
line = np.hstack([t, 2.0 * t])
jitter = line + 0.02 * stream(0, "demo06.jit").standard_normal(line.shape)
for name, path in (("straight line", line), ("jittered line", jitter)):
    entry = smoothness(path, dt=0.05)
    print(f"{name:<14} vel integral {entry.vel:.2f}  acc integral {entry.acc:.2f}")

root = Path(tempfile.mkdtemp(prefix="zprl_demo06_"))
generate_demos("reach2d", n=50, clean_fraction=0.5, seed=0, out_dir=root / "demos")
dataset = load_demos(root / "demos")
cfg = OfflineConfig(epochs=150, d_z=8, dim_c=32, beta=1e-3,
                    enc_hidden=(64, 64), vel_hidden=(128, 128),
                    vib_hidden=(128, 128))
bundle, _ = train_offline(dataset, cfg, seed=0)
bundle.freeze()

# The latent alarm: fit the posterior population once, then watch steered
# latents drift away as the perturbation scale grows. The sweep scores the
# evaluation path (posterior mean plus lam times the deterministic residual),
# the same quantity the online monitor logs; a posterior sample would bury
# these small shifts under its own in-distribution radius. The decoded
# displacement tells the same story in conditioning space; at scale zero it
# is exactly 0.
fit = offline_latent_fit(dataset, bundle, stream(1, "demo06.fit"))
actor = init_online_state(bundle, OnlineConfig(), LatentSteering(), seed=2).actor

c = bundle.encode(dataset.obs[:512])
mu, _ = vib_posterior(bundle, c)

print("\nlambda   Mahalanobis   decoded displacement")
for lam in (0.0, 0.1, 0.2, 0.5, 1.0):
    u = np.tanh(actor.forward(np.hstack([c, mu]))[:, : cfg.d_z])
    maha = float(mahalanobis(mu + lam * u, fit).mean())
    disp = displacement(dataset, bundle, actor, lam, stream(4, "demo06.d"))
    print(f"{lam:>6.2f} {maha:>12.2f} {disp:>18.4f}")

shutil.rmtree(root)
