"""
Online stage: steering the frozen policy through its latent
===========================================================

A SAC learner perturbs the bottleneck latent of a frozen base policy:
z-tilde = z + lambda * u, with u from a tanh-squashed actor. The base nets
never receive a gradient; all adaptation lives in the small perturbation.
This demo runs a deliberately tiny budget to show the moving parts, not a
converged result (the acceptance suite runs the real budgets on push2d).
"""

import shutil
import tempfile
from pathlib import Path

from zprl.config import OfflineConfig, OnlineConfig
from zprl.envs import generate_demos, load_demos
from zprl.finetune import calibrate_lambda, finetune_loop, init_online_state, LatentSteering
from zprl.offline import train_offline
from zprl.seeding import stream

root = Path(tempfile.mkdtemp(prefix="zprl_demo04_"))
generate_demos("reach2d", n=50, clean_fraction=0.5, seed=0, out_dir=root / "demos")
dataset = load_demos(root / "demos")

cfg_off = OfflineConfig(epochs=150, d_z=8, dim_c=32, beta=1e-3,
                        enc_hidden=(64, 64), vel_hidden=(128, 128),
                        vib_hidden=(128, 128))
bundle, _ = train_offline(dataset, cfg_off, seed=0)
bundle.freeze()

cfg_on = OnlineConfig(total_env_steps=8_000, warmup_chunks=100,
                      eval_interval_chunks=500, eval_episodes=10,
                      eval_seed_base=500)

# The perturbation scale comes from an RMS-ratio rule: lambda such that the
# shift is a chosen fraction of the latent population's own spread.
probe = init_online_state(bundle, cfg_on, LatentSteering(), seed=0)
lam = calibrate_lambda(dataset, bundle, probe.actor, 0.15, stream(0, "demo04.cal"))
print(f"calibrated lambda: {lam:.3f}")

state, rows = finetune_loop(bundle, dataset, cfg_on, seed=0, out_dir=root / "run")
print("\nenv_steps  SR    maha   disp   alpha")
for row in rows:
    print(f"{row['env_steps']:>9} {row['success_rate']:>5.2f} "
          f"{row['mahalanobis_mean']:>6.2f} {row['displacement_mean']:>6.3f} "
          f"{row['alpha']:>7.4f}")
print(f"\nrun artifacts (metrics.csv, checkpoints, baseline_eval.json) "
      f"were written under {root / 'run'}")

shutil.rmtree(root)
