"""Online fine-tuning that steers a frozen policy through its bottleneck latent.

The offline bundle stays fixed. A small SAC agent learns a bounded residual
u in (-1,1)^d; the executed latent is z + scale * u, decoded back into the
conditioning the frozen velocity field sees. Comparison arms plug in their
own residual space (action, flow noise, raw embedding) through the same
update path, so the only experimental difference is where steering happens.

rng discipline: the base draw, the actor noise, and the flow integration pull
from separate named streams. Setting scale to zero therefore reproduces the
unperturbed policy bit for bit, actor or not.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .checkpoint import save_params
from .config import OnlineConfig
from .diagnostics import evaluate_policy, ledoit_wolf_fit, mahalanobis
from .dists import squashed_mode, squashed_sample, squashed_sample_backward
from .envs import make_env
from .errors import CalibrationError, DivergenceError
from .nets import Mlp, init_params
from .optim import Adam
from .seeding import RngBundle, stream
from .vib import vib_decode, vib_posterior

METRICS_COLUMNS = (
    "env_steps", "success_rate", "avg_episode_len", "vel_mean", "acc_mean",
    "mahalanobis_mean", "displacement_mean", "critic_loss", "actor_loss",
    "alpha", "interface",
)

_OOD_FIT_CAP = 10_000
_CALIBRATION_SAMPLES = 512


def perturb_latent(z: np.ndarray, dz: np.ndarray, lam: float) -> np.ndarray:
    return np.asarray(z, dtype=np.float64) + lam * np.asarray(dz, dtype=np.float64)


# -- steering interface ----------------------------------------------------------


class LatentSteering:
    """Residual on the bottleneck latent; the executed z is decoded for the flow."""

    kind = "zprl"
    fixed_scale: float | None = None  # None: calibrated or set from config
    decodes_latent = True

    def __init__(self, scale: float = 0.0):
        self.scale = float(scale)
        self.residual_dim = 0
        self.base_dim = 0
        self.executed_dim = 0
        self.ramp_progress = 1.0

    def bind(self, dims) -> "LatentSteering":
        self.residual_dim = self.base_dim = self.executed_dim = dims.d_z
        return self

    def draw_base(self, bundle, c, rng, explore: bool) -> np.ndarray:
        mu, log_std = vib_posterior(bundle, c)
        if explore:
            return mu + np.exp(log_std) * rng.standard_normal(mu.shape)
        return mu

    def calibration_pair(self, bundle, c, rng) -> tuple[np.ndarray, np.ndarray]:
        """(reference signal, actor-base input) over a batch of embeddings."""
        z = self.draw_base(bundle, c, rng, explore=True)
        return z, z

    def combine(self, c, base, u) -> np.ndarray:
        return base + self.scale * u

    def combine_grad(self, c, base, u) -> np.ndarray:
        return np.full_like(u, self.scale)

    def chunk_from_executed(self, bundle, c, executed, rng) -> np.ndarray:
        return bundle.sample_chunk(vib_decode(bundle, executed), rng)

    def maybe_gate(self, u: np.ndarray, rng, explore: bool) -> np.ndarray:
        return u


# -- acting ------------------------------------------------------------------------


@dataclass
class StepAct:
    chunk: np.ndarray
    c: np.ndarray
    base: np.ndarray
    executed: np.ndarray


def act_online(obs, actor: Mlp, bundle, interface, rng_base, rng_actor, rng_flow,
               explore: bool) -> StepAct:
    """One decision: encode, draw the base quantity, steer it, sample the chunk."""
    if not bundle.frozen:
        raise ValueError("act_online requires a frozen bundle")
    c = bundle.encode(np.asarray(obs, dtype=np.float64))
    base = interface.draw_base(bundle, c, rng_base, explore)
    heads = actor.forward(np.concatenate([c, base]))
    d = heads.shape[-1] // 2
    if explore:
        noise = rng_actor.standard_normal(d)
        u, _, _ = squashed_sample(heads[None, :d], heads[None, d:], noise[None, :], 1.0)
        u = interface.maybe_gate(u[0], rng_actor, explore)
    else:
        u = squashed_mode(heads[:d], 1.0)
    executed = interface.combine(c, base, u)
    chunk = interface.chunk_from_executed(bundle, c, executed, rng_flow)
    return StepAct(chunk=chunk, c=c, base=base, executed=executed)


def act_vib_base(obs, bundle, rng_z, rng_flow, explore: bool) -> np.ndarray:
    """Unperturbed policy through the bottleneck: condition on decode(z)."""
    c = bundle.encode(np.asarray(obs, dtype=np.float64))
    mu, log_std = vib_posterior(bundle, c)
    z = mu + np.exp(log_std) * rng_z.standard_normal(mu.shape) if explore else mu
    return bundle.sample_chunk(vib_decode(bundle, z), rng_flow)


def act_base(obs, bundle, rng_flow) -> np.ndarray:
    """Plain offline policy: condition on the embedding directly."""
    return bundle.sample_chunk(bundle.encode(np.asarray(obs, dtype=np.float64)), rng_flow)


# -- replay -------------------------------------------------------------------------


@dataclass
class Batch:
    c: np.ndarray
    base: np.ndarray
    executed: np.ndarray
    reward: np.ndarray
    c_next: np.ndarray
    base_next: np.ndarray
    terminal: np.ndarray


class ReplayBuffer:
    """Fixed-capacity ring over (c, base, executed, r, c', base', terminal)."""

    def __init__(self, capacity: int, dim_c: int, base_dim: int, executed_dim: int):
        self.capacity = int(capacity)
        self.c = np.zeros((capacity, dim_c))
        self.base = np.zeros((capacity, base_dim))
        self.executed = np.zeros((capacity, executed_dim))
        self.reward = np.zeros(capacity)
        self.c_next = np.zeros((capacity, dim_c))
        self.base_next = np.zeros((capacity, base_dim))
        self.terminal = np.zeros(capacity)
        self._n = 0
        self._i = 0

    def __len__(self) -> int:
        return self._n

    def add(self, c, base, executed, reward, c_next, base_next, terminal) -> None:
        i = self._i
        self.c[i] = c
        self.base[i] = base
        self.executed[i] = executed
        self.reward[i] = reward
        self.c_next[i] = c_next
        self.base_next[i] = base_next
        self.terminal[i] = terminal
        self._i = (i + 1) % self.capacity
        self._n = min(self._n + 1, self.capacity)

    def sample(self, n: int, rng: np.random.Generator) -> Batch:
        idx = rng.integers(0, self._n, size=n)
        return Batch(
            c=self.c[idx], base=self.base[idx], executed=self.executed[idx],
            reward=self.reward[idx], c_next=self.c_next[idx],
            base_next=self.base_next[idx], terminal=self.terminal[idx],
        )


# -- learner state ---------------------------------------------------------------------


@dataclass
class OnlineState:
    interface: object
    actor: Mlp
    critics: list[Mlp]
    targets: list[Mlp]
    log_alpha: np.ndarray
    opt_actor: Adam
    opt_critics: list[Adam]
    opt_alpha: Adam
    target_entropy: float
    update_count: int = 0
    replay: ReplayBuffer | None = field(default=None, repr=False)

    @property
    def alpha(self) -> float:
        return float(np.exp(self.log_alpha[0]))


def init_online_state(dims, cfg: OnlineConfig, interface, seed: int) -> OnlineState:
    """dims needs .dim_c plus whatever the interface binds against (d_z, chunk len)."""
    interface.bind(dims)
    actor_widths = (dims.dim_c + interface.base_dim, *cfg.actor_hidden,
                    2 * interface.residual_dim)
    critic_widths = (dims.dim_c + interface.executed_dim, *cfg.critic_hidden, 1)
    actor = Mlp(actor_widths, init_params(actor_widths, stream(seed, "online.init.actor")))
    critics = [
        Mlp(critic_widths, init_params(critic_widths, stream(seed, f"online.init.critic.{i}")))
        for i in range(cfg.n_critics)
    ]
    return OnlineState(
        interface=interface,
        actor=actor,
        critics=critics,
        targets=[c.clone() for c in critics],
        log_alpha=np.array([np.log(cfg.init_temperature)]),
        opt_actor=Adam(actor.params.size, cfg.actor_lr),
        opt_critics=[Adam(c.params.size, cfg.critic_lr) for c in critics],
        opt_alpha=Adam(1, cfg.temperature_lr),
        target_entropy=-interface.residual_dim / 2.0,
    )


# -- SAC core ----------------------------------------------------------------------------


def _sample_residual(actor: Mlp, x: np.ndarray, rng) -> tuple[np.ndarray, np.ndarray, tuple]:
    heads, cache = actor.forward_cached(x)
    d = heads.shape[-1] // 2
    noise = rng.standard_normal((x.shape[0], d))
    u, logp, squash = squashed_sample(heads[:, :d], heads[:, d:], noise, 1.0)
    return u, logp, (cache, squash)


def critic_target(batch: Batch, actor: Mlp, interface, targets, gamma: float,
                  rng) -> np.ndarray:
    """Bootstrapped value, min over the target ensemble, no entropy term."""
    u, _, _ = _sample_residual(actor, np.concatenate([batch.c_next, batch.base_next], axis=1), rng)
    e_next = interface.combine(batch.c_next, batch.base_next, u)
    xq = np.concatenate([batch.c_next, e_next], axis=1)
    q_min = np.min(np.column_stack([t.forward(xq)[:, 0] for t in targets]), axis=1)
    return batch.reward + gamma * (1.0 - batch.terminal) * q_min


def _actor_objective(actor: Mlp, interface, critics, batch: Batch, alpha: float,
                     rng) -> tuple[float, np.ndarray, np.ndarray]:
    """Loss mean(alpha logp - min Q), its parameter gradient, and logp (for alpha)."""
    n = batch.c.shape[0]
    x = np.concatenate([batch.c, batch.base], axis=1)
    heads, cache = actor.forward_cached(x)
    d = heads.shape[-1] // 2
    noise = rng.standard_normal((n, d))
    u, logp, squash = squashed_sample(heads[:, :d], heads[:, d:], noise, 1.0)
    executed = interface.combine(batch.c, batch.base, u)
    xq = np.concatenate([batch.c, executed], axis=1)
    outs = [critic.forward_cached(xq) for critic in critics]
    q_mat = np.column_stack([q[:, 0] for q, _ in outs])
    members = np.argmin(q_mat, axis=1)
    q_min = q_mat[np.arange(n), members]
    loss = float(np.mean(alpha * logp - q_min))
    grad_x = np.zeros((n, xq.shape[1]))
    for i, critic in enumerate(critics):
        rows = members == i
        if not rows.any():
            continue
        g_out = np.zeros((n, 1))
        g_out[rows, 0] = -1.0 / n
        _, gx = critic.backward(outs[i][1], g_out, param_grads=False, input_grad=True)
        grad_x += gx
    g_u = grad_x[:, batch.c.shape[1]:] * interface.combine_grad(batch.c, batch.base, u)
    g_mean, g_log_std = squashed_sample_backward(squash, g_u, np.full(n, alpha / n))
    g_heads = np.concatenate([g_mean, g_log_std], axis=1)
    grad, _ = actor.backward(cache, g_heads, param_grads=True, input_grad=False)
    return loss, grad, logp


def sac_update(state: OnlineState, replay: ReplayBuffer, cfg: OnlineConfig,
               rng) -> dict[str, float]:
    """cfg.utd rounds of critic regression, actor ascent, temperature, Polyak."""
    if len(replay) < cfg.batch:
        raise ValueError(f"replay holds {len(replay)} transitions, need {cfg.batch}")
    out: dict[str, float] = {}
    for _ in range(cfg.utd):
        batch = replay.sample(cfg.batch, rng)
        y = critic_target(batch, state.actor, state.interface, state.targets, cfg.gamma, rng)
        xq = np.concatenate([batch.c, batch.executed], axis=1)
        critic_losses = []
        for critic, opt in zip(state.critics, state.opt_critics):
            q, cache = critic.forward_cached(xq)
            diff = q[:, 0] - y
            critic_losses.append(float(np.mean(diff**2)))
            grad, _ = critic.backward(cache, (2.0 / cfg.batch) * diff[:, None],
                                      param_grads=True, input_grad=False)
            critic.params = opt.step(critic.params, grad)
        actor_loss, actor_grad, logp = _actor_objective(
            state.actor, state.interface, state.critics, batch, state.alpha, rng
        )
        state.actor.params = state.opt_actor.step(state.actor.params, actor_grad)
        gap = logp + state.target_entropy
        temperature_loss = float(np.mean(-state.log_alpha[0] * gap))
        state.log_alpha = state.opt_alpha.step(state.log_alpha, np.array([-np.mean(gap)]))
        for critic, target in zip(state.critics, state.targets):
            target.params = (1.0 - cfg.tau) * target.params + cfg.tau * critic.params
        state.update_count += 1
        out = {
            "critic_loss": float(np.mean(critic_losses)),
            "actor_loss": actor_loss,
            "temperature_loss": temperature_loss,
            "alpha": state.alpha,
        }
    return out


# -- scale calibration ---------------------------------------------------------------------


def calibrate_scale(base_samples: np.ndarray, residual_samples: np.ndarray,
                    ratio: float) -> float:
    """ratio * RMS(base) / RMS(residual), the perturbation-sizing rule."""
    rms_base = float(np.sqrt(np.mean(np.square(base_samples))))
    rms_res = float(np.sqrt(np.mean(np.square(residual_samples))))
    if rms_res == 0.0:
        raise CalibrationError("residual RMS is zero; cannot calibrate a scale")
    return ratio * rms_base / rms_res


def calibrate_interface_scale(interface, dataset, bundle, actor: Mlp, ratio: float,
                              rng, n_samples: int = _CALIBRATION_SAMPLES) -> float:
    if interface.fixed_scale is not None:
        return interface.fixed_scale
    n = min(n_samples, dataset.obs.shape[0])
    idx = rng.choice(dataset.obs.shape[0], size=n, replace=False)
    c = bundle.encode(dataset.obs[idx])
    signal, base = interface.calibration_pair(bundle, c, rng)
    u, _, _ = _sample_residual(actor, np.concatenate([c, base], axis=1), rng)
    return calibrate_scale(signal, u, ratio)


def calibrate_lambda(dataset, bundle, actor: Mlp, ratio: float, rng,
                     n_samples: int = 1024) -> float:
    """Latent-steering scale from offline posterior samples and a fresh actor."""
    return calibrate_interface_scale(LatentSteering().bind(bundle), dataset, bundle,
                                     actor, ratio, rng, n_samples)


# -- the loop ----------------------------------------------------------------------------


def offline_latent_fit(dataset, bundle, rng):
    """Shrinkage Gaussian over posterior samples of the offline latents."""
    n = min(_OOD_FIT_CAP, dataset.obs.shape[0])
    idx = rng.choice(dataset.obs.shape[0], size=n, replace=False)
    c = bundle.encode(dataset.obs[idx])
    mu, log_std = vib_posterior(bundle, c)
    z = mu + np.exp(log_std) * rng.standard_normal(mu.shape)
    return ledoit_wolf_fit(z)


def _fmt(value) -> str:
    if isinstance(value, str):
        return value
    if isinstance(value, (int, np.integer)):
        return repr(int(value))
    return repr(float(value))


def write_metrics_csv(path: Path, rows: list[dict]) -> None:
    lines = [",".join(METRICS_COLUMNS)]
    lines.extend(",".join(_fmt(row[col]) for col in METRICS_COLUMNS) for row in rows)
    path.write_text("\n".join(lines) + "\n")


def _metrics_row(report, env_steps: int, maha: float, disp: float,
                 losses: dict[str, float], alpha: float, kind: str) -> dict:
    nan = float("nan")
    return {
        "env_steps": env_steps,
        "success_rate": report.success_rate,
        "avg_episode_len": report.avg_episode_len,
        "vel_mean": report.vel_mean,
        "acc_mean": report.acc_mean,
        "mahalanobis_mean": maha,
        "displacement_mean": disp,
        "critic_loss": losses.get("critic_loss", nan),
        "actor_loss": losses.get("actor_loss", nan),
        "alpha": alpha,
        "interface": kind,
    }


def _eval_current(state: OnlineState, bundle, cfg: OnlineConfig, fit,
                  env_steps: int, losses: dict[str, float]) -> dict:
    interface = state.interface
    latents: list[np.ndarray] = []
    shifts: list[float] = []

    def policy(obs, rng):
        out = act_online(obs, state.actor, bundle, interface, rng, rng, rng, explore=False)
        if interface.decodes_latent:
            latents.append(out.executed)
            shifts.append(float(np.linalg.norm(
                vib_decode(bundle, out.executed) - vib_decode(bundle, out.base))))
        else:
            mu, _ = vib_posterior(bundle, out.c)
            latents.append(mu)
        return out.chunk

    report = evaluate_policy(bundle.env_id, policy, cfg.eval_episodes, cfg.eval_seed_base)
    maha = float(np.mean(mahalanobis(np.stack(latents), fit)))
    disp = float(np.mean(shifts)) if interface.decodes_latent else float("nan")
    return _metrics_row(report, env_steps, maha, disp, losses, state.alpha, interface.kind)


def _eval_offline_policy(bundle, cfg: OnlineConfig, fit, kind: str,
                         decodes_latent: bool) -> dict:
    latents: list[np.ndarray] = []

    def policy(obs, rng):
        c = bundle.encode(np.asarray(obs, dtype=np.float64))
        mu, _ = vib_posterior(bundle, c)
        latents.append(mu)
        return bundle.sample_chunk(c, rng)

    report = evaluate_policy(bundle.env_id, policy, cfg.eval_episodes, cfg.eval_seed_base)
    maha = float(np.mean(mahalanobis(np.stack(latents), fit)))
    disp = 0.0 if decodes_latent else float("nan")
    return _metrics_row(report, 0, maha, disp, {}, cfg.init_temperature, kind), report


def finetune_loop(bundle, dataset, cfg: OnlineConfig, seed: int, out_dir,
                  interface=None) -> tuple[OnlineState, list[dict]]:
    """Synchronous interaction-and-update loop against the frozen bundle.

    Writes metrics.csv, baseline_eval.json, and parameter checkpoints under
    out_dir; returns the learner state and the metric rows.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    bundle.freeze()
    checksums_before = bundle.checksums()
    interface = LatentSteering() if interface is None else interface
    state = init_online_state(bundle, cfg, interface, seed)
    rngs = RngBundle(seed)

    if interface.fixed_scale is not None:
        interface.scale = interface.fixed_scale
    elif cfg.lam == "auto":
        interface.scale = calibrate_interface_scale(
            interface, dataset, bundle, state.actor, cfg.lambda_ratio,
            rngs.get("online.calibration"))
    else:
        interface.scale = float(cfg.lam)

    fit = offline_latent_fit(dataset, bundle, rngs.get("online.oodfit"))
    state.replay = ReplayBuffer(cfg.buffer_capacity, bundle.dim_c,
                                interface.base_dim, interface.executed_dim)
    env = make_env(bundle.env_id)

    row0, base_report = _eval_offline_policy(bundle, cfg, fit, interface.kind,
                                             interface.decodes_latent)
    vib_report = evaluate_policy(
        bundle.env_id,
        lambda obs, rng: act_vib_base(obs, bundle, rng, rng, explore=False),
        cfg.eval_episodes, cfg.eval_seed_base)
    (out / "baseline_eval.json").write_text(json.dumps(
        {"base": asdict(base_report), "vib_base": asdict(vib_report)},
        indent=2, sort_keys=True) + "\n")
    rows = [row0]

    rng_reset = rngs.get("online.reset")
    rng_z = rngs.get("online.z")
    rng_actor = rngs.get("online.actor")
    rng_flow = rngs.get("online.flow")
    rng_next = rngs.get("online.next")
    rng_update = rngs.get("online.update")

    checkpoint_dir = out / "checkpoints"
    checkpoint_dir.mkdir(exist_ok=True)
    env_steps = 0
    chunks_done = 0
    eval_rounds = 0
    losses: dict[str, float] = {}
    obs = env.reset(int(rng_reset.integers(2**31)))
    while env_steps < cfg.total_env_steps:
        if cfg.progressive_chunks > 0:
            interface.ramp_progress = min(1.0, chunks_done / cfg.progressive_chunks)
        act = act_online(obs, state.actor, bundle, interface,
                         rng_z, rng_actor, rng_flow, explore=True)
        result = env.step_chunk(act.chunk)
        c_next = bundle.encode(result.obs)
        base_next = interface.draw_base(bundle, c_next, rng_next, explore=True)
        state.replay.add(act.c, act.base, act.executed, result.reward,
                         c_next, base_next, float(result.terminal))
        env_steps += result.positions.shape[0]
        chunks_done += 1
        obs = env.reset(int(rng_reset.integers(2**31))) \
            if (result.terminal or result.truncated) else result.obs
        if chunks_done > cfg.warmup_chunks and len(state.replay) >= cfg.batch:
            losses = sac_update(state, state.replay, cfg, rng_update)
            if not all(np.isfinite(v) for v in losses.values()):
                raise DivergenceError(f"online loss diverged at env step {env_steps}")
        if chunks_done % cfg.eval_interval_chunks == 0:
            eval_rounds += 1
            rows.append(_eval_current(state, bundle, cfg, fit, env_steps, losses))
            if eval_rounds % cfg.checkpoint_every == 0:
                save_params(checkpoint_dir / f"actor_{eval_rounds:04d}.zprl",
                            state.actor.widths, state.actor.params)
    if chunks_done % cfg.eval_interval_chunks != 0:
        rows.append(_eval_current(state, bundle, cfg, fit, env_steps, losses))

    if bundle.checksums() != checksums_before:
        raise RuntimeError("frozen bundle parameters changed during fine-tuning")
    write_metrics_csv(out / "metrics.csv", rows)
    save_params(out / "actor_final.zprl", state.actor.widths, state.actor.params)
    for i, critic in enumerate(state.critics):
        save_params(out / f"critic_{i}_final.zprl", critic.widths, critic.params)
    (out / "state.json").write_text(json.dumps({
        "interface": interface.kind,
        "scale": interface.scale,
        "log_alpha": float(state.log_alpha[0]),
        "update_count": state.update_count,
        "env_steps": env_steps,
    }, indent=2, sort_keys=True) + "\n")
    return state, rows
