"""Desk-scale 2D manipulation environments, scripted experts, demo datasets.

Both tasks live on the workspace [-1, 1]^2 with velocity-command dynamics
p <- clip(p + a * dt), dt = 0.05 s, |a| <= 1 per axis, executed in chunks of
4 low-level steps per decision. Rewards are sparse: 1.0 once per episode when
the task predicate first holds, else 0.

Observation layout (flat float64):

    reach2d: [agent_x, agent_y, vel_x, vel_y, goal_x, goal_y]
    push2d:  [agent_x, agent_y, vel_x, vel_y, obj_x, obj_y, goal_x, goal_y]

push2d uses a kinematic sticking contact: while the agent and object disks
overlap, the object copies the agent's displacement.

The scripted expert is a proportional controller routed through one of two
detour waypoints placed perpendicular to the route midpoint, so the
demonstration distribution is bimodal from every reset.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import GenerationError
from .seeding import stream

DT = 0.05
CHUNK_LEN = 4
WORKSPACE = 1.0
AGENT_RADIUS = 0.05
OBJECT_RADIUS = 0.05
CONTACT_DIST = AGENT_RADIUS + OBJECT_RADIUS
NOISE_CLEAN = 0.05
NOISE_NOISY = 0.3

_P_GAIN = 4.0
_DETOUR_OFFSET = 0.45
_REACH_DIRECT_DIST = 0.25
_PUSH_DIRECT_DIST = 0.3
_APPROACH_STANDOFF = CONTACT_DIST + 0.06

ENV_IDS = ("reach2d", "push2d")


@dataclass(frozen=True)
class EnvParams:
    env_id: str
    horizon: int              # decision steps (chunks)
    success_radius: float
    goal_bound: float
    agent_bound: float = 0.8
    object_bound: float = 0.7
    min_goal_sep: float = 0.3
    min_approach_sep: float = 0.4


def default_params(env_id: str, horizon: int | None = None) -> EnvParams:
    if env_id == "reach2d":
        p = EnvParams("reach2d", horizon=60, success_radius=0.05, goal_bound=0.8)
    elif env_id == "push2d":
        p = EnvParams("push2d", horizon=100, success_radius=0.07, goal_bound=0.7)
    else:
        raise ValueError(f"unknown env id {env_id!r}")
    if horizon is not None:
        p = EnvParams(p.env_id, int(horizon), p.success_radius, p.goal_bound,
                      p.agent_bound, p.object_bound, p.min_goal_sep, p.min_approach_sep)
    return p


def obs_dim(env_id: str) -> int:
    return 8 if env_id == "push2d" else 6


def obs_agent_pos(obs: np.ndarray) -> np.ndarray:
    return obs[0:2]


def obs_velocity(obs: np.ndarray) -> np.ndarray:
    return obs[2:4]


def obs_object_pos(obs: np.ndarray) -> np.ndarray:
    if obs.shape[-1] != 8:
        raise ValueError("object position only exists for push2d observations")
    return obs[4:6]


def obs_goal(env_id: str, obs: np.ndarray) -> np.ndarray:
    return obs[6:8] if env_id == "push2d" else obs[4:6]


@dataclass
class StepResult:
    obs: np.ndarray
    reward: float
    terminal: bool
    truncated: bool
    positions: np.ndarray  # executed agent positions, one row per low-level step


def _clip_ws(p: np.ndarray) -> np.ndarray:
    return np.clip(p, -WORKSPACE, WORKSPACE)


def _advance(p: np.ndarray, o: np.ndarray | None, action: np.ndarray):
    """One low-level step of the shared kinematics (also used by the expert)."""
    a = np.clip(action, -1.0, 1.0)
    p_new = _clip_ws(p + a * DT)
    if o is not None and np.linalg.norm(p - o) <= CONTACT_DIST:
        o = _clip_ws(o + (p_new - p))
    return p_new, o


class Env:
    def __init__(self, params: EnvParams):
        self.params = params
        self._has_object = params.env_id == "push2d"
        self._state_ready = False

    # -- lifecycle -----------------------------------------------------------

    def reset(self, seed: int) -> np.ndarray:
        rng = np.random.default_rng(seed)
        pm = self.params
        for _ in range(1000):
            agent = rng.uniform(-pm.agent_bound, pm.agent_bound, size=2)
            goal = rng.uniform(-pm.goal_bound, pm.goal_bound, size=2)
            if self._has_object:
                obj = rng.uniform(-pm.object_bound, pm.object_bound, size=2)
                if np.linalg.norm(obj - goal) < pm.min_goal_sep:
                    continue
                ap = _approach_point(obj, goal)
                if np.linalg.norm(agent - ap) < pm.min_approach_sep:
                    continue
            else:
                obj = None
                if np.linalg.norm(agent - goal) < pm.min_goal_sep:
                    continue
            break
        else:
            raise RuntimeError("reset rejection sampling did not converge")
        self._agent = agent
        self._vel = np.zeros(2)
        self._obj = obj
        self._goal = goal
        self._chunks_done = 0
        self._done = False
        self._state_ready = True
        return self.observe()

    def set_state(self, agent_pos=None, object_pos=None, goal=None, velocity=None) -> None:
        """Overwrite parts of the physical state (testing and diagnostics hook)."""
        if not self._state_ready:
            raise RuntimeError("call reset before set_state")
        if agent_pos is not None:
            self._agent = np.asarray(agent_pos, dtype=float).copy()
        if object_pos is not None:
            if not self._has_object:
                raise ValueError("reach2d has no object")
            self._obj = np.asarray(object_pos, dtype=float).copy()
        if goal is not None:
            self._goal = np.asarray(goal, dtype=float).copy()
        self._vel = np.zeros(2) if velocity is None else np.asarray(velocity, dtype=float).copy()

    def observe(self) -> np.ndarray:
        parts = [self._agent, self._vel]
        if self._has_object:
            parts.append(self._obj)
        parts.append(self._goal)
        return np.concatenate(parts)

    # -- dynamics ------------------------------------------------------------

    def _success(self) -> bool:
        probe = self._obj if self._has_object else self._agent
        return float(np.linalg.norm(probe - self._goal)) <= self.params.success_radius

    def step_chunk(self, chunk: np.ndarray) -> StepResult:
        if self._done:
            raise RuntimeError("step_chunk called on a finished episode")
        chunk = np.asarray(chunk, dtype=float)
        if chunk.ndim != 2 or chunk.shape[1] != 2 or not 1 <= chunk.shape[0] <= CHUNK_LEN:
            raise ValueError(f"expected a ({CHUNK_LEN}, 2) action chunk, got {chunk.shape}")
        positions = []
        reward = 0.0
        for action in chunk:
            prev = self._agent
            self._agent, self._obj = _advance(self._agent, self._obj, action)
            self._vel = (self._agent - prev) / DT
            positions.append(self._agent.copy())
            if self._success():
                reward = 1.0
                self._done = True
                break
        self._chunks_done += 1
        terminal = reward > 0.0
        truncated = not terminal and self._chunks_done >= self.params.horizon
        self._done = self._done or truncated
        return StepResult(self.observe(), reward, terminal, truncated, np.array(positions))


def make_env(env_id: str, horizon: int | None = None) -> Env:
    return Env(default_params(env_id, horizon))


# -- scripted expert ---------------------------------------------------------


def _approach_point(obj: np.ndarray, goal: np.ndarray) -> np.ndarray:
    direction = goal - obj
    return obj - _APPROACH_STANDOFF * direction / np.linalg.norm(direction)


def _detour_waypoint(p: np.ndarray, tgt: np.ndarray, style: int) -> np.ndarray:
    leg = tgt - p
    u = leg / np.linalg.norm(leg)
    normal = np.array([-u[1], u[0]])
    sign = 1.0 if style == 0 else -1.0
    return (p + tgt) / 2.0 + sign * _DETOUR_OFFSET * normal


class ScriptedExpert:
    """Waypoint-routed proportional controller emitting action chunks.

    Stateless across decisions: each call replans from the observation, then
    rolls the known kinematics forward to fill the chunk. ``style`` picks the
    left or right detour waypoint.
    """

    def __init__(self, env_id: str, chunk_len: int = CHUNK_LEN):
        if env_id not in ENV_IDS:
            raise ValueError(f"unknown env id {env_id!r}")
        self.env_id = env_id
        self.chunk_len = chunk_len

    def _target(self, p: np.ndarray, o: np.ndarray | None, g: np.ndarray, style: int) -> np.ndarray:
        if self.env_id == "reach2d":
            if np.linalg.norm(g - p) > _REACH_DIRECT_DIST:
                return _detour_waypoint(p, g, style)
            return g
        if np.linalg.norm(p - o) <= CONTACT_DIST:
            return g + (p - o)  # stuck: steer so the object lands on the goal
        ap = _approach_point(o, g)
        if np.linalg.norm(ap - p) > _PUSH_DIRECT_DIST:
            return _detour_waypoint(p, ap, style)
        return o  # close enough: drive into the object until contact sticks

    def act(self, obs: np.ndarray, style: int, noise_scale: float, rng: np.random.Generator) -> np.ndarray:
        p = obs_agent_pos(obs).copy()
        o = obs_object_pos(obs).copy() if self.env_id == "push2d" else None
        g = obs_goal(self.env_id, obs).copy()
        chunk = np.zeros((self.chunk_len, 2))
        for i in range(self.chunk_len):
            err = self._target(p, o, g, style) - p
            dist = np.linalg.norm(err)
            # direction-preserving speed cap: per-axis clipping would bend
            # saturated commands toward box corners and blur the two styles
            a = err * (_P_GAIN if _P_GAIN * dist <= 1.0 else 1.0 / dist) if dist > 0 else err
            if noise_scale > 0.0:
                a = np.clip(a + noise_scale * rng.standard_normal(2), -1.0, 1.0)
            chunk[i] = a
            p, o = _advance(p, o, a)
        return chunk


# -- demonstration datasets ---------------------------------------------------

DATASET_FORMAT = 1


@dataclass
class DemoDataset:
    meta: dict
    obs: np.ndarray          # (N, obs_dim)
    chunks: np.ndarray       # (N, CHUNK_LEN, 2)
    traj_index: np.ndarray   # (N,) trajectory each pair belongs to
    step_index: np.ndarray   # (N,) decision step within the trajectory
    traj_slices: list[slice]

    @property
    def n_pairs(self) -> int:
        return self.obs.shape[0]


def _write_trajectory(path: Path, obs: np.ndarray, chunks: np.ndarray) -> None:
    T, d = obs.shape
    header = struct.pack("<4I", T, d, chunks.shape[1], chunks.shape[2])
    path.write_bytes(header + obs.astype("<f8").tobytes() + chunks.astype("<f8").tobytes())


def _read_trajectory(path: Path) -> tuple[np.ndarray, np.ndarray]:
    raw = path.read_bytes()
    T, d, h, ad = struct.unpack_from("<4I", raw, 0)
    off = 16
    n_obs = T * d
    obs = np.frombuffer(raw, dtype="<f8", count=n_obs, offset=off).reshape(T, d)
    chunks = np.frombuffer(raw, dtype="<f8", count=T * h * ad, offset=off + 8 * n_obs).reshape(T, h, ad)
    return obs.astype(np.float64), chunks.astype(np.float64)


def generate_demos(
    env_id: str,
    n: int,
    clean_fraction: float,
    seed: int,
    out_dir: str | Path,
    horizon: int | None = None,
) -> dict:
    """Collect n successful expert trajectories and write them to out_dir.

    Trajectory i alternates expert style (i % 2); the first round(n * clean_fraction)
    slots use the clean noise scale, the rest the noisy one. Failed episodes are
    discarded and retried; more than 20 * n attempts raises GenerationError.
    """
    env = make_env(env_id, horizon)
    expert = ScriptedExpert(env_id)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    n_clean = int(round(n * clean_fraction))
    attempts = 0
    collected = 0
    while collected < n:
        if attempts >= 20 * n:
            raise GenerationError(
                f"{env_id}: collected {collected}/{n} demos in {attempts} attempts"
            )
        noise = NOISE_CLEAN if collected < n_clean else NOISE_NOISY
        style = collected % 2
        rng = stream(seed, f"demos.attempt.{attempts}")
        obs = env.reset(int(rng.integers(2**31)))
        obs_list, chunk_list = [], []
        success = False
        while True:
            chunk = expert.act(obs, style=style, noise_scale=noise, rng=rng)
            obs_list.append(obs)
            chunk_list.append(chunk)
            res = env.step_chunk(chunk)
            obs = res.obs
            if res.terminal or res.truncated:
                success = res.terminal
                break
        attempts += 1
        if not success:
            continue
        _write_trajectory(
            out_dir / f"traj_{collected:05d}.bin",
            np.asarray(obs_list),
            np.asarray(chunk_list),
        )
        collected += 1
    meta = {
        "format": DATASET_FORMAT,
        "env": env_id,
        "seed": seed,
        "n_traj": n,
        "clean_fraction": clean_fraction,
        "counts": {"clean": n_clean, "noisy": n - n_clean},
        "noise_scales": {"clean": NOISE_CLEAN, "noisy": NOISE_NOISY},
        "chunk_len": CHUNK_LEN,
        "obs_dim": obs_dim(env_id),
        "attempts": attempts,
    }
    (out_dir / "meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return meta


def load_demos(dataset_dir: str | Path) -> DemoDataset:
    dataset_dir = Path(dataset_dir)
    meta_path = dataset_dir / "meta.json"
    if not meta_path.exists():
        raise FileNotFoundError(f"no dataset at {dataset_dir} (missing {meta_path})")
    meta = json.loads(meta_path.read_text())
    obs_parts, chunk_parts, slices = [], [], []
    traj_idx, step_idx = [], []
    start = 0
    for t in range(meta["n_traj"]):
        obs, chunks = _read_trajectory(dataset_dir / f"traj_{t:05d}.bin")
        obs_parts.append(obs)
        chunk_parts.append(chunks)
        slices.append(slice(start, start + len(obs)))
        traj_idx.extend([t] * len(obs))
        step_idx.extend(range(len(obs)))
        start += len(obs)
    return DemoDataset(
        meta=meta,
        obs=np.concatenate(obs_parts),
        chunks=np.concatenate(chunk_parts),
        traj_index=np.asarray(traj_idx),
        step_index=np.asarray(step_idx),
        traj_slices=slices,
    )
