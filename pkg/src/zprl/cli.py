"""Command-line workbench: gen-demos, train-offline, finetune, evaluate, diagnose.

Artifact layout under the output root (ZPRL_OUT or paths.data_root):

    datasets/<env>/                          gen-demos
    bundles/<env>_seed<S>/                   train-offline
    <env>_<interface>_<seed>_<timestamp>/    finetune (one per online seed)
    eval_<env>_<timestamp>/                  evaluate
    diag_<env>_<timestamp>/                  diagnose

The dataset and bundle locations carry no timestamp so downstream commands
can derive them from the config alone; the bundle is keyed by the config
seed, while --seeds varies only the online run. Every command echoes its
effective config into the directory it writes.

Exit codes: 0 success, 2 configuration problem, 3 runtime or numeric failure.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from dataclasses import asdict, replace
from pathlib import Path

import numpy as np

from .baselines import make_interface
from .checkpoint import load_params
from .config import (
    INTERFACES,
    ExperimentConfig,
    load_config,
    serialize_config,
    validate_config,
)
from .diagnostics import displacement, evaluate_policy, mahalanobis
from .dists import squashed_mode
from .envs import DemoDataset, generate_demos, load_demos
from .errors import ConfigError
from .finetune import (
    LatentSteering,
    calibrate_interface_scale,
    finetune_loop,
    init_online_state,
    offline_latent_fit,
)
from .flow import load_bundle, save_bundle
from .nets import Mlp
from .offline import train_offline
from .seeding import stream
from .vib import vib_posterior

import os

_SWEEP_SAMPLES = 512


# -- paths -------------------------------------------------------------------------------


def _out_root(cfg: ExperimentConfig) -> Path:
    return Path(os.environ.get("ZPRL_OUT") or cfg.paths.data_root)


def _dataset_dir(cfg: ExperimentConfig, root: Path) -> Path:
    return Path(cfg.paths.dataset) if cfg.paths.dataset else root / "datasets" / cfg.env


def _bundle_dir(cfg: ExperimentConfig, root: Path) -> Path:
    if cfg.paths.bundle:
        return Path(cfg.paths.bundle)
    return root / "bundles" / f"{cfg.env}_seed{cfg.seed}"


def _fresh_dir(root: Path, name: str) -> Path:
    stamp = time.strftime("%Y%m%d-%H%M%S")
    for i in range(1000):
        candidate = root / (f"{name}_{stamp}" if i == 0 else f"{name}_{stamp}-{i}")
        try:
            candidate.mkdir(parents=True, exist_ok=False)
            return candidate
        except FileExistsError:
            continue
    raise RuntimeError(f"could not allocate a run directory under {root}")


def _echo_config(cfg: ExperimentConfig, where: Path) -> None:
    (where / "config.toml").write_text(serialize_config(cfg))


# -- shared pieces -----------------------------------------------------------------------


def _base_policy(bundle):
    return lambda obs, rng: bundle.sample_chunk(bundle.encode(obs), rng)


def _load_artifacts(cfg: ExperimentConfig, root: Path):
    dataset = load_demos(_dataset_dir(cfg, root))
    bundle = load_bundle(_bundle_dir(cfg, root)).freeze()
    return dataset, bundle


def _resolve_actor(cfg: ExperimentConfig, bundle, actor_path: str | None) -> Mlp:
    if actor_path:
        widths, params = load_params(actor_path)
        return Mlp(widths, params)
    return init_online_state(bundle, cfg.online, LatentSteering(), cfg.seed).actor


def _resolve_lambda(cfg: ExperimentConfig, dataset, bundle, actor) -> float:
    if cfg.online.lam == "auto":
        return calibrate_interface_scale(
            LatentSteering(), dataset, bundle, actor, cfg.online.lambda_ratio,
            stream(cfg.seed, "diagnose.calibration"))
    return float(cfg.online.lam)


def _write_csv(path: Path, header: list[str], rows: list[list]) -> None:
    lines = [",".join(header)]
    lines.extend(",".join(str(v) for v in row) for row in rows)
    path.write_text("\n".join(lines) + "\n")


# -- subcommands --------------------------------------------------------------------------


def cmd_gen_demos(cfg: ExperimentConfig, args) -> int:
    root = _out_root(cfg)
    out = _dataset_dir(cfg, root)
    meta = generate_demos(cfg.env, cfg.demos.n, cfg.demos.clean_fraction, cfg.seed, out)
    _echo_config(cfg, out)
    print(f"wrote {meta['n_traj']} demonstrations to {out}")
    return 0


def cmd_train_offline(cfg: ExperimentConfig, args) -> int:
    root = _out_root(cfg)
    dataset = load_demos(_dataset_dir(cfg, root))
    bundle, history = train_offline(dataset, cfg.offline, cfg.seed)
    out = _bundle_dir(cfg, root)
    save_bundle(bundle, out)
    _echo_config(cfg, out)
    _write_csv(out / "history.csv", ["epoch", "loss", "il", "recon", "kl"],
               [[h["epoch"], repr(h["loss"]), repr(h["il"]), repr(h["recon"]), repr(h["kl"])]
                for h in history])
    print(f"trained offline policy ({len(history)} epochs, "
          f"final loss {history[-1]['loss']:.6f}) -> {out}")
    return 0


def cmd_finetune(cfg: ExperimentConfig, args) -> int:
    root = _out_root(cfg)
    dataset, bundle = _load_artifacts(cfg, root)
    seeds = args.seeds if args.seeds else [cfg.seed]
    for seed in seeds:
        run_dir = _fresh_dir(root, f"{cfg.env}_{cfg.online.interface}_{seed}")
        _echo_config(cfg, run_dir)
        interface = make_interface(cfg.online.interface)
        state, rows = finetune_loop(bundle, dataset, cfg.online, seed, run_dir,
                                    interface=interface)
        if args.emit_plot_data:
            _emit_plot_data(run_dir, rows)
        final = rows[-1]
        print(f"seed {seed}: success_rate={final['success_rate']} "
              f"after {final['env_steps']} env steps -> {run_dir}")
    return 0


def _emit_plot_data(run_dir: Path, rows: list[dict]) -> None:
    plot = run_dir / "plot"
    plot.mkdir(exist_ok=True)
    for col in rows[0]:
        if col in ("env_steps", "interface"):
            continue
        lines = [f"{row['env_steps']} {row[col]}" for row in rows]
        (plot / f"{col}.dat").write_text("\n".join(lines) + "\n")


def cmd_evaluate(cfg: ExperimentConfig, args) -> int:
    root = _out_root(cfg)
    bundle = load_bundle(_bundle_dir(cfg, root)).freeze()
    report = evaluate_policy(cfg.env, _base_policy(bundle),
                             cfg.online.eval_episodes, cfg.online.eval_seed_base)
    run_dir = _fresh_dir(root, f"eval_{cfg.env}")
    _echo_config(cfg, run_dir)
    (run_dir / "evaluation.json").write_text(
        json.dumps(asdict(report), indent=2, sort_keys=True) + "\n")
    print(f"success_rate={report.success_rate} avg_episode_len={report.avg_episode_len}")
    return 0


def _first_trajectories(dataset: DemoDataset, k: int) -> DemoDataset:
    n_traj = dataset.meta["n_traj"]
    if k > n_traj:
        raise ValueError(f"demo sweep needs {k} trajectories, dataset has {n_traj}")
    mask = dataset.traj_index < k
    return DemoDataset(
        meta={**dataset.meta, "n_traj": k},
        obs=dataset.obs[mask],
        chunks=dataset.chunks[mask],
        traj_index=dataset.traj_index[mask],
        step_index=dataset.step_index[mask],
        traj_slices=dataset.traj_slices[:k],
    )


def _ood_at(lam: float, dataset, bundle, actor, fit, seed: int) -> tuple[float, float]:
    """(mean Mahalanobis of steered latents, mean decoded displacement) at lam.

    The Mahalanobis leg follows the evaluation path (posterior mean plus lam
    times the actor's deterministic residual), so the sweep reports the same
    quantity the online monitor tracks; a posterior sample would bury small
    shifts under the in-distribution radius.  The rng is rebuilt per call so
    every lam scores the same states.
    """
    rng = stream(seed, "diagnose.sweep")
    n = min(_SWEEP_SAMPLES, dataset.obs.shape[0])
    idx = rng.choice(dataset.obs.shape[0], size=n, replace=False)
    c = bundle.encode(dataset.obs[idx])
    mu, _ = vib_posterior(bundle, c)
    heads = actor.forward(np.concatenate([c, mu], axis=1))
    u = squashed_mode(heads[:, : heads.shape[-1] // 2], 1.0)
    maha = float(np.mean(mahalanobis(mu + lam * u, fit)))
    disp = displacement(dataset, bundle, actor, lam, stream(seed, "diagnose.disp"))
    return maha, disp


def cmd_diagnose(cfg: ExperimentConfig, args) -> int:
    root = _out_root(cfg)
    dataset, bundle = _load_artifacts(cfg, root)
    run_dir = _fresh_dir(root, f"diag_{cfg.env}")
    _echo_config(cfg, run_dir)
    actor = _resolve_actor(cfg, bundle, args.actor)
    fit = offline_latent_fit(dataset, bundle, stream(cfg.seed, "diagnose.oodfit"))
    lam_star = _resolve_lambda(cfg, dataset, bundle, actor)

    report = evaluate_policy(cfg.env, _base_policy(bundle),
                             cfg.online.eval_episodes, cfg.online.eval_seed_base)
    maha, disp = _ood_at(lam_star, dataset, bundle, actor, fit, cfg.seed)
    rows = [["lambda_star", repr(lam_star)],
            ["mahalanobis_mean", repr(maha)],
            ["displacement_mean", repr(disp)]]
    rows.extend([k, repr(v)] for k, v in asdict(report).items())
    _write_csv(run_dir / "diagnostics.csv", ["metric", "value"], rows)

    if args.lambda_sweep:
        sweep_rows = []
        for lam in args.lambda_sweep:
            m, d = _ood_at(lam, dataset, bundle, actor, fit, cfg.seed)
            sweep_rows.append([repr(lam), repr(m), repr(d)])
        _write_csv(run_dir / "ood_by_lambda.csv",
                   ["lambda", "mahalanobis_mean", "displacement_mean"], sweep_rows)

    if args.dimz_sweep:
        dz_rows = []
        for d_z in args.dimz_sweep:
            b, _ = train_offline(dataset, replace(cfg.offline, d_z=d_z), cfg.seed)
            rep = evaluate_policy(cfg.env, _base_policy(b.freeze()),
                                  cfg.online.eval_episodes, cfg.online.eval_seed_base)
            dz_rows.append([d_z, repr(rep.success_rate)])
        _write_csv(run_dir / "dimz_sweep.csv", ["d_z", "success_rate"], dz_rows)

    if args.demo_sweep:
        demo_rows = []
        for k in args.demo_sweep:
            sub = _first_trajectories(dataset, k)
            b, _ = train_offline(sub, cfg.offline, cfg.seed)
            rep = evaluate_policy(cfg.env, _base_policy(b.freeze()),
                                  cfg.online.eval_episodes, cfg.online.eval_seed_base)
            demo_rows.append([k, repr(rep.success_rate)])
        _write_csv(run_dir / "demo_sweep.csv", ["n_demos", "success_rate"], demo_rows)

    print(f"diagnostics -> {run_dir}")
    return 0


# -- argument handling --------------------------------------------------------------------


def _comma_ints(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v != ""]
    except ValueError as e:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers: {text!r}") from e


def _comma_floats(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v != ""]
    except ValueError as e:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers: {text!r}") from e


def _lambda_value(text: str):
    if text == "auto":
        return "auto"
    try:
        return float(text)
    except ValueError as e:
        raise argparse.ArgumentTypeError(f"--lambda must be a number or 'auto': {text!r}") from e


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="zprl", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="cmd", required=True)

    def common(p):
        p.add_argument("--config", help="TOML experiment config; omitted = defaults")
        p.add_argument("--seed", type=int, help="override the config seed")
        return p

    common(sub.add_parser("gen-demos", help="collect scripted expert demonstrations"))
    common(sub.add_parser("train-offline", help="train the flow policy and bottleneck"))

    ft = common(sub.add_parser("finetune", help="online fine-tuning of a frozen policy"))
    ft.add_argument("--interface", choices=INTERFACES, help="steering interface")
    ft.add_argument("--lambda", dest="lam", type=_lambda_value,
                    help="perturbation scale, or 'auto'")
    ft.add_argument("--seeds", type=_comma_ints, help="run each seed sequentially")
    ft.add_argument("--emit-plot-data", action="store_true",
                    help="write two-column .dat files next to metrics.csv")

    common(sub.add_parser("evaluate", help="evaluate the offline policy bundle"))

    dg = common(sub.add_parser("diagnose", help="smoothness, OOD, and ablation sweeps"))
    dg.add_argument("--actor", help="actor checkpoint to diagnose (default: fresh)")
    dg.add_argument("--lambda", dest="lam", type=_lambda_value,
                    help="perturbation scale, or 'auto'")
    dg.add_argument("--lambda-sweep", type=_comma_floats,
                    help="comma-separated scales for ood_by_lambda.csv")
    dg.add_argument("--dimz-sweep", type=_comma_ints,
                    help="retrain at each latent width, report success rates")
    dg.add_argument("--demo-sweep", type=_comma_ints,
                    help="retrain on dataset prefixes, report success rates")
    return parser


_DISPATCH = {
    "gen-demos": cmd_gen_demos,
    "train-offline": cmd_train_offline,
    "finetune": cmd_finetune,
    "evaluate": cmd_evaluate,
    "diagnose": cmd_diagnose,
}


def _apply_overrides(cfg: ExperimentConfig, args) -> None:
    if args.seed is not None:
        cfg.seed = args.seed
    if getattr(args, "interface", None) is not None:
        cfg.online.interface = args.interface
    if getattr(args, "lam", None) is not None:
        cfg.online.lam = args.lam


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    try:
        cfg = load_config(args.config) if args.config else ExperimentConfig()
        _apply_overrides(cfg, args)
        validate_config(cfg)
        return _DISPATCH[args.cmd](cfg, args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except Exception as e:  # runtime/numeric failures map to one exit code
        print(f"error: {e}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    raise SystemExit(main())
