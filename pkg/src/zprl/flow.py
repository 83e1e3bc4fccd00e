"""Chunked flow-matching policy.

The velocity field v(a_k, k, c) is an MLP over the flattened noisy chunk, a
16-dim sinusoidal embedding of the flow time k, and the conditioning
embedding c. Training regresses v toward (w - a) at interpolants
a_k = (1 - k) a + k w, with k drawn uniformly from a discrete grid of 100
knots {0.01, ..., 1.00}. Sampling integrates the learned field with explicit
Euler steps down a decreasing schedule from k = 1 to k = 0:

    a_next = a - (k_hi - k_lo) * v(a, k_hi, c)

il_loss draws, in order: k indices, then w. Tests replay that order.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .checkpoint import load_params, save_params
from .config import OfflineConfig
from .envs import CHUNK_LEN, obs_dim
from .nets import Mlp
from .seeding import stream

TRAIN_GRID = np.arange(1, 101) / 100.0
INFERENCE_KNOTS = (1.0, 0.01, 0.0)
K_EMBED_DIM = 16
_K_FREQS = np.pi * (2.0 ** np.arange(K_EMBED_DIM // 2))


def validate_schedule(knots: Sequence[float]) -> tuple[float, ...]:
    knots = tuple(float(k) for k in knots)
    if len(knots) < 2:
        raise ValueError("schedule needs at least two knots")
    if knots[0] != 1.0 or knots[-1] != 0.0:
        raise ValueError(f"schedule must run from 1.0 to 0.0, got {knots[0]}..{knots[-1]}")
    if any(hi <= lo for hi, lo in zip(knots, knots[1:])):
        raise ValueError("schedule knots must be strictly decreasing")
    return knots


def interpolate(a: np.ndarray, w: np.ndarray, k: np.ndarray) -> np.ndarray:
    """a_k = (1 - k) a + k w, k broadcast over rows."""
    k = np.asarray(k)[..., None]
    return (1.0 - k) * a + k * w


def k_embedding(k: float) -> np.ndarray:
    return np.concatenate([np.sin(_K_FREQS * k), np.cos(_K_FREQS * k)])


def _k_embedding_rows(k: np.ndarray) -> np.ndarray:
    arg = k[:, None] * _K_FREQS[None, :]
    return np.concatenate([np.sin(arg), np.cos(arg)], axis=1)


FieldFn = Callable[[np.ndarray, float, np.ndarray], np.ndarray]


def euler_sample(
    field: FieldFn,
    cond: np.ndarray,
    knots: Sequence[float],
    rng: np.random.Generator,
    chunk_dim: int,
    w: np.ndarray | None = None,
) -> np.ndarray:
    """Integrate field from w ~ N(0, I) at k=1 down the schedule to k=0.

    A caller-supplied start noise w bypasses the draw entirely, leaving rng
    untouched (noise steering picks w itself).
    """
    cond = np.atleast_2d(np.asarray(cond, dtype=np.float64))
    if w is None:
        a = rng.standard_normal((cond.shape[0], chunk_dim))
    else:
        a = np.atleast_2d(np.asarray(w, dtype=np.float64)).copy()
    for k_hi, k_lo in zip(knots, knots[1:]):
        a = a - (k_hi - k_lo) * field(a, k_hi, cond)
    return a


@dataclass
class PolicyBundle:
    """All parameter sets of one offline-trained policy.

    encoder: obs -> c;  velocity: [a_k, k-emb, c] -> chunk velocity;
    vib_enc: c -> (mu, log-std);  vib_dec: z -> c-hat.
    """

    env_id: str
    obs_dim: int
    chunk_len: int
    dim_c: int
    d_z: int
    encoder: Mlp
    velocity: Mlp
    vib_enc: Mlp
    vib_dec: Mlp
    schedule: tuple[float, ...]
    frozen: bool = False

    @property
    def chunk_dim(self) -> int:
        return self.chunk_len * 2

    def encode(self, obs: np.ndarray) -> np.ndarray:
        return self.encoder.forward(obs)

    def field(self) -> FieldFn:
        def f(a: np.ndarray, k: float, cond: np.ndarray) -> np.ndarray:
            emb = np.broadcast_to(k_embedding(k), (a.shape[0], K_EMBED_DIM))
            return self.velocity.forward(np.hstack([a, emb, cond]))

        return f

    def sample_chunk(
        self,
        cond: np.ndarray,
        rng: np.random.Generator,
        schedule: Sequence[float] | None = None,
        w: np.ndarray | None = None,
    ) -> np.ndarray:
        knots = self.schedule if schedule is None else validate_schedule(schedule)
        flat = euler_sample(self.field(), cond, knots, rng, self.chunk_dim, w=w)
        return flat.reshape(-1, self.chunk_len, 2)[0] if np.asarray(cond).ndim == 1 else flat

    def checksums(self) -> dict[str, str]:
        return {name: getattr(self, name).checksum() for name in _NET_NAMES}

    def freeze(self) -> "PolicyBundle":
        self.frozen = True
        return self


_NET_NAMES = ("encoder", "velocity", "vib_enc", "vib_dec")


def init_bundle(env_id: str, cfg: OfflineConfig, seed: int) -> PolicyBundle:
    d_obs = obs_dim(env_id)
    chunk_dim = CHUNK_LEN * 2
    widths = {
        "encoder": (d_obs, *cfg.enc_hidden, cfg.dim_c),
        "velocity": (chunk_dim + K_EMBED_DIM + cfg.dim_c, *cfg.vel_hidden, chunk_dim),
        "vib_enc": (cfg.dim_c, *cfg.vib_hidden, 2 * cfg.d_z),
        "vib_dec": (cfg.d_z, *cfg.vib_hidden, cfg.dim_c),
    }
    nets = {name: Mlp.init(w, stream(seed, f"init.{name}")) for name, w in widths.items()}
    return PolicyBundle(
        env_id=env_id,
        obs_dim=d_obs,
        chunk_len=CHUNK_LEN,
        dim_c=cfg.dim_c,
        d_z=cfg.d_z,
        schedule=validate_schedule(cfg.schedule),
        **nets,
    )


def il_loss(
    obs: np.ndarray,
    chunks: np.ndarray,
    bundle: PolicyBundle,
    rng: np.random.Generator,
    continuous_k: bool = False,
) -> tuple[float, dict[str, np.ndarray]]:
    """Flow-matching regression loss and gradients for encoder and velocity.

    Per sample: draw k (grid index or uniform), w ~ N(0, I); the loss is the
    batch mean of |v(a_k, k, c) - (w - a)|^2.
    """
    B = obs.shape[0]
    a = chunks.reshape(B, -1)
    if continuous_k:
        k = rng.uniform(size=B)
    else:
        k = TRAIN_GRID[rng.integers(0, len(TRAIN_GRID), size=B)]
    w = rng.standard_normal(a.shape)
    c, enc_cache = bundle.encoder.forward_cached(obs)
    x = np.hstack([interpolate(a, w, k), _k_embedding_rows(k), c])
    v, vel_cache = bundle.velocity.forward_cached(x)
    resid = v - (w - a)
    value = float(np.sum(resid * resid) / B)
    g_vel_params, g_x = bundle.velocity.backward(vel_cache, 2.0 * resid / B)
    g_c = g_x[:, a.shape[1] + K_EMBED_DIM :]
    g_enc_params, _ = bundle.encoder.backward(enc_cache, g_c, input_grad=False)
    return value, {"encoder": g_enc_params, "velocity": g_vel_params}


# -- bundle serialization ------------------------------------------------------

BUNDLE_FORMAT = 1


def save_bundle(bundle: PolicyBundle, out_dir: str | Path) -> None:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    sidecar: dict = {
        "format": BUNDLE_FORMAT,
        "env": bundle.env_id,
        "obs_dim": bundle.obs_dim,
        "chunk_len": bundle.chunk_len,
        "dim_c": bundle.dim_c,
        "d_z": bundle.d_z,
        "schedule": list(bundle.schedule),
        "frozen": bundle.frozen,
        "nets": {},
    }
    for name in _NET_NAMES:
        net: Mlp = getattr(bundle, name)
        fname = f"{name}.zprl"
        save_params(out_dir / fname, net.widths, net.params)
        sidecar["nets"][name] = {
            "file": fname,
            "hidden_act": net.hidden_act,
            "output_act": net.output_act,
        }
    (out_dir / "bundle.json").write_text(json.dumps(sidecar, indent=2, sort_keys=True) + "\n")


def load_bundle(bundle_dir: str | Path) -> PolicyBundle:
    bundle_dir = Path(bundle_dir)
    sidecar_path = bundle_dir / "bundle.json"
    if not sidecar_path.exists():
        raise FileNotFoundError(f"no policy bundle at {bundle_dir} (missing {sidecar_path})")
    sidecar = json.loads(sidecar_path.read_text())
    nets = {}
    for name in _NET_NAMES:
        entry = sidecar["nets"][name]
        widths, params = load_params(bundle_dir / entry["file"])
        nets[name] = Mlp(widths, params, entry["hidden_act"], entry["output_act"])
    return PolicyBundle(
        env_id=sidecar["env"],
        obs_dim=sidecar["obs_dim"],
        chunk_len=sidecar["chunk_len"],
        dim_c=sidecar["dim_c"],
        d_z=sidecar["d_z"],
        schedule=validate_schedule(sidecar["schedule"]),
        frozen=sidecar["frozen"],
        **nets,
    )
