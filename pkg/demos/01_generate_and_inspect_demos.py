"""
Scripted demonstrations on the 2-D desk tasks
=============================================

Generates a small demonstration set for each environment and inspects what'll
later feed the offline stage: observation/chunk shapes, the two expert styles,
and the clean/noisy split.
"""

import shutil
import tempfile
from pathlib import Path

import numpy as np

from zprl.envs import generate_demos, load_demos, make_env

root = Path(tempfile.mkdtemp(prefix="zprl_demo01_"))

for env_id in ("reach2d", "push2d"):
    meta = generate_demos(env_id, n=10, clean_fraction=0.5, seed=0,
                          out_dir=root / env_id)
    ds = load_demos(root / env_id)
    print(f"{env_id}: {meta['n_traj']} trajectories, {ds.n_pairs} (obs, chunk) pairs")
    print(f"  obs dim {ds.obs.shape[1]}, chunk dim {ds.chunks.shape[1]} "
          f"(4 positions x 2 coordinates)")

    # Trajectory lengths: the noisy expert meanders, so its episodes run longer.
    lengths = [sl.stop - sl.start for sl in ds.traj_slices]
    print(f"  chunks per trajectory: min {min(lengths)}, max {max(lengths)}")

    # Styles alternate by trajectory index; both reach the goal but approach it
    # from different sides, which is what makes the action distribution bimodal.
    env = make_env(env_id)
    first = ds.chunks[ds.traj_slices[0]][0].reshape(-1, 2)
    second = ds.chunks[ds.traj_slices[1]][0].reshape(-1, 2)
    angle = np.degrees(np.arccos(np.clip(
        first[0] @ second[0] / (np.linalg.norm(first[0]) * np.linalg.norm(second[0])),
        -1.0, 1.0)))
    print(f"  first-step angle between style 0 and style 1: {angle:.0f} degrees")

print(f"\ndatasets written under {root}")
shutil.rmtree(root)
