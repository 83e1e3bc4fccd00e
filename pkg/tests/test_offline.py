import numpy as np
import pytest

from zprl.config import OfflineConfig
from zprl.envs import generate_demos, load_demos
from zprl.errors import DivergenceError
from zprl.offline import export_latents, train_offline

_TINY = OfflineConfig(
    epochs=200, batch=16, lr=1e-3, beta=1e-4, dim_c=5, d_z=3,
    enc_hidden=(16,), vel_hidden=(32,), vib_hidden=(16, 16),
)


@pytest.fixture(scope="module")
def one_traj(tmp_path_factory):
    d = tmp_path_factory.mktemp("data") / "one"
    generate_demos("reach2d", n=1, clean_fraction=1.0, seed=0, out_dir=d)
    return load_demos(d)


@pytest.fixture(scope="module")
def few_traj(tmp_path_factory):
    d = tmp_path_factory.mktemp("data") / "few"
    generate_demos("reach2d", n=4, clean_fraction=0.5, seed=1, out_dir=d)
    return load_demos(d)


def test_single_trajectory_overfit_reduces_il_loss_tenfold(one_traj):
    # needs enough optimizer steps: one trajectory is a single batch per epoch
    cfg = OfflineConfig(
        **{**_TINY.__dict__, "epochs": 1500, "lr": 3e-3, "vel_hidden": (64, 64)}
    )
    bundle, history = train_offline(one_traj, cfg, seed=0)
    assert history[-1]["il"] < history[0]["il"] / 10.0
    assert bundle.env_id == "reach2d"
    assert not bundle.frozen


def test_training_is_deterministic(few_traj):
    cfg = OfflineConfig(**{**_TINY.__dict__, "epochs": 20})
    b1, h1 = train_offline(few_traj, cfg, seed=3)
    b2, h2 = train_offline(few_traj, cfg, seed=3)
    for name in ("encoder", "velocity", "vib_enc", "vib_dec"):
        np.testing.assert_array_equal(getattr(b1, name).params, getattr(b2, name).params)
    assert h1 == h2


def test_base_nets_ignore_the_bottleneck_branch(few_traj):
    # plug-in neutrality: enabling the VIB branch must not move base training
    cfg_on = OfflineConfig(**{**_TINY.__dict__, "epochs": 25})
    cfg_off = OfflineConfig(**{**cfg_on.__dict__, "vib_enabled": False})
    b_on, _ = train_offline(few_traj, cfg_on, seed=5)
    b_off, _ = train_offline(few_traj, cfg_off, seed=5)
    np.testing.assert_array_equal(b_on.encoder.params, b_off.encoder.params)
    np.testing.assert_array_equal(b_on.velocity.params, b_off.velocity.params)
    # and the branch itself did train when enabled
    assert not np.array_equal(b_on.vib_enc.params, b_off.vib_enc.params)


def test_large_beta_collapses_the_posterior(few_traj):
    cfg_lo = OfflineConfig(**{**_TINY.__dict__, "epochs": 60})
    cfg_hi = OfflineConfig(**{**cfg_lo.__dict__, "beta": 10.0})
    _, h_lo = train_offline(few_traj, cfg_lo, seed=7)
    _, h_hi = train_offline(few_traj, cfg_hi, seed=7)
    assert h_hi[-1]["kl"] < 0.1 * h_lo[-1]["kl"]


@pytest.mark.filterwarnings("ignore:overflow encountered")
@pytest.mark.filterwarnings("ignore:invalid value encountered")
def test_divergence_raises(one_traj):
    cfg = OfflineConfig(**{**_TINY.__dict__, "epochs": 50, "lr": 1e12})
    with pytest.raises(DivergenceError):
        train_offline(one_traj, cfg, seed=0)


def test_latent_export(tmp_path, few_traj):
    cfg = OfflineConfig(**{**_TINY.__dict__, "epochs": 5})
    bundle, _ = train_offline(few_traj, cfg, seed=9)
    out = tmp_path / "latents.csv"
    export_latents(few_traj, bundle, seed=9, path=out)
    lines = out.read_text().strip().split("\n")
    assert lines[0] == "trajectory,step,z_0,z_1,z_2"
    assert len(lines) == 1 + few_traj.n_pairs
    first = lines[1].split(",")
    assert int(first[0]) == 0 and int(first[1]) == 0
    again = tmp_path / "latents2.csv"
    export_latents(few_traj, bundle, seed=9, path=again)
    assert out.read_bytes() == again.read_bytes()
