import numpy as np
import pytest

from zprl.config import OfflineConfig
from zprl.diagnostics import (
    DISPLACEMENT_THRESHOLD,
    LatentGaussianFit,
    displacement,
    evaluate_policy,
    ledoit_wolf_fit,
    mahalanobis,
    smoothness,
)
from zprl.envs import CHUNK_LEN, ScriptedExpert, generate_demos, load_demos
from zprl.errors import CalibrationError, DivergenceError
from zprl.flow import init_bundle
from zprl.nets import Mlp, init_params, pack_layers
from zprl.seeding import stream

_TINY = OfflineConfig(dim_c=5, d_z=3, enc_hidden=(8,), vel_hidden=(8,), vib_hidden=(8, 8))


# -- smoothness ----------------------------------------------------------------


def test_smoothness_constant_positions_is_zero():
    pts = np.tile([0.3, -0.2], (6, 1))
    rep = smoothness(pts, dt=0.05)
    assert rep.vel == 0.0
    assert rep.acc == 0.0


def test_smoothness_uniform_motion():
    t = np.arange(8)
    pts = np.stack([0.2 * 0.05 * t, np.zeros(8)], axis=1)
    rep = smoothness(pts, dt=0.05)
    np.testing.assert_allclose(rep.vel, 0.2, rtol=1e-12)
    np.testing.assert_allclose(rep.acc, 0.0, atol=1e-9)


def test_smoothness_hand_case():
    # vel: (0.2 + 0.4)/2, acc: |0.03 + 0 - 2*0.01| / 0.05^2
    pts = np.array([[0.0, 0.0], [0.01, 0.0], [0.03, 0.0]])
    rep = smoothness(pts, dt=0.05)
    np.testing.assert_allclose(rep.vel, 0.3, rtol=1e-12)
    np.testing.assert_allclose(rep.acc, 4.0, rtol=1e-12)


def test_smoothness_two_points_has_no_acc():
    rep = smoothness(np.array([[0.0, 0.0], [0.1, 0.0]]), dt=0.1)
    np.testing.assert_allclose(rep.vel, 1.0)
    assert rep.acc is None


def test_smoothness_rejects_single_point():
    with pytest.raises(ValueError):
        smoothness(np.array([[0.0, 0.0]]), dt=0.05)
    with pytest.raises(ValueError):
        smoothness(np.zeros((3, 2)), dt=0.0)


def test_smoothness_affine_sequence_has_zero_acc():
    rng = stream(3, "affine")
    for _ in range(5):
        a = rng.uniform(-1, 1, size=2)
        b = rng.uniform(-1, 1, size=2)
        t = np.arange(12)[:, None]
        rep = smoothness(a + b * t, dt=0.05)
        assert rep.acc <= 1e-9


# -- Ledoit-Wolf fit -----------------------------------------------------------


def _identity_cov_samples(d):
    # pairs +/- sqrt(d) e_i: centered, empirical covariance exactly I
    eye = np.eye(d) * np.sqrt(d)
    return np.concatenate([eye, -eye], axis=0)


def test_ledoit_wolf_identity_empirical_cov():
    fit = ledoit_wolf_fit(_identity_cov_samples(6))
    np.testing.assert_allclose(fit.mean, np.zeros(6), atol=1e-15)
    np.testing.assert_allclose(fit.cov, np.eye(6), atol=1e-12)
    assert 0.0 <= fit.rho <= 1.0


def test_ledoit_wolf_monte_carlo_standard_normal():
    # when the scaled-identity target IS the truth, shrinkage should dominate
    # and pull the estimate closer to I than the raw empirical covariance
    x = stream(11, "lw.mc").standard_normal((10_000, 16))
    fit = ledoit_wolf_fit(x)
    emp_err = np.linalg.norm(np.cov(x.T, bias=True) - np.eye(16))
    shrunk_err = np.linalg.norm(fit.cov - np.eye(16))
    assert shrunk_err < 0.2
    assert shrunk_err < emp_err
    assert 0.5 < fit.rho <= 1.0  # verified against sklearn: 0.8406


def test_ledoit_wolf_undersampled_is_well_conditioned():
    # n << d: the empirical covariance is rank deficient, the shrunk one is PD
    x = stream(12, "lw.small").standard_normal((3, 16))
    fit = ledoit_wolf_fit(x)
    assert 0.0 < fit.rho <= 1.0
    assert np.linalg.eigvalsh(fit.cov).min() > 0.0


def test_ledoit_wolf_zero_variance_raises():
    with pytest.raises(CalibrationError):
        ledoit_wolf_fit(np.tile([1.0, 2.0, 3.0], (50, 1)))


def test_ledoit_wolf_needs_two_samples():
    with pytest.raises(ValueError):
        ledoit_wolf_fit(np.ones((1, 4)))


def test_ledoit_wolf_eigenvalue_bracketing():
    rng = stream(13, "lw.props")
    for _ in range(5):
        x = rng.standard_normal((40, 6)) @ rng.standard_normal((6, 6))
        fit = ledoit_wolf_fit(x)
        assert 0.0 <= fit.rho <= 1.0
        np.testing.assert_allclose(fit.cov, fit.cov.T, atol=1e-12)
        xc = x - x.mean(axis=0)
        emp_eigs = np.linalg.eigvalsh(xc.T @ xc / x.shape[0])
        mu = emp_eigs.mean()
        eigs = np.linalg.eigvalsh(fit.cov)
        lo = min(emp_eigs.min(), mu) - 1e-12
        hi = max(emp_eigs.max(), mu) + 1e-12
        assert eigs.min() >= lo and eigs.max() <= hi


def test_ledoit_wolf_matches_sklearn():
    sklearn_cov = pytest.importorskip("sklearn.covariance")
    x = stream(14, "lw.sk").standard_normal((500, 8)) * np.linspace(0.5, 2.0, 8)
    fit = ledoit_wolf_fit(x)
    ref = sklearn_cov.LedoitWolf(assume_centered=False).fit(x)
    np.testing.assert_allclose(fit.rho, ref.shrinkage_, rtol=1e-8)
    np.testing.assert_allclose(fit.cov, ref.covariance_, rtol=1e-8, atol=1e-12)


# -- Mahalanobis ---------------------------------------------------------------


def _fit(mean, cov):
    return LatentGaussianFit(mean=np.asarray(mean, float), cov=np.asarray(cov, float),
                             rho=0.0, n_samples=100)


def test_mahalanobis_at_the_mean_is_zero():
    fit = _fit(np.full(4, 0.7), np.eye(4))
    assert mahalanobis(np.full(4, 0.7), fit) == 0.0


def test_mahalanobis_identity_reduces_to_euclidean():
    fit = _fit(np.zeros(5), np.eye(5))
    x = np.array([3.0, 4.0, 0.0, 0.0, 0.0])
    np.testing.assert_allclose(mahalanobis(x, fit), 5.0, rtol=1e-12)


def test_mahalanobis_diagonal_hand_case():
    cov = np.diag([4.0, 1.0, 1.0])
    x = np.array([2.0, 0.0, 0.0])
    np.testing.assert_allclose(mahalanobis(x, _fit(np.zeros(3), cov)), 1.0, rtol=1e-12)


def test_mahalanobis_batched_rows():
    fit = _fit(np.zeros(2), np.eye(2))
    out = mahalanobis(np.array([[3.0, 4.0], [0.0, 0.0]]), fit)
    np.testing.assert_allclose(out, [5.0, 0.0], rtol=1e-12)


def test_mahalanobis_non_pd_matrix_raises():
    bad = _fit(np.zeros(2), np.array([[1.0, 2.0], [2.0, 1.0]]))  # eigenvalues 3, -1
    with pytest.raises(DivergenceError):
        mahalanobis(np.ones(2), bad)


# -- decoded displacement --------------------------------------------------------


@pytest.fixture(scope="module")
def tiny_setup(tmp_path_factory):
    d = tmp_path_factory.mktemp("data") / "demos"
    generate_demos("reach2d", n=3, clean_fraction=1.0, seed=21, out_dir=d)
    dataset = load_demos(d)
    bundle = init_bundle("reach2d", _TINY, seed=4).freeze()
    actor_widths = (_TINY.dim_c + _TINY.d_z, 16, 2 * _TINY.d_z)
    actor = Mlp(actor_widths, init_params(actor_widths, stream(5, "actor")))
    return dataset, bundle, actor


def test_displacement_zero_lambda_is_exactly_zero(tiny_setup):
    dataset, bundle, actor = tiny_setup
    out = displacement(dataset, bundle, actor, lam=0.0, rng=stream(6, "disp"))
    assert out == 0.0


def test_displacement_scales_linearly_with_linear_decoder(tiny_setup):
    dataset, bundle, actor = tiny_setup
    import dataclasses

    a_mat = stream(7, "amat").standard_normal((_TINY.d_z, _TINY.dim_c))
    linear_dec = Mlp((_TINY.d_z, _TINY.dim_c),
                     pack_layers([(a_mat, np.zeros(_TINY.dim_c))]),
                     output_act="identity")
    lin_bundle = dataclasses.replace(bundle, vib_dec=linear_dec)
    d1 = displacement(dataset, lin_bundle, actor, lam=0.15, rng=stream(8, "disp"))
    d2 = displacement(dataset, lin_bundle, actor, lam=0.30, rng=stream(8, "disp"))
    np.testing.assert_allclose(d2, 2.0 * d1, rtol=1e-12)


def test_displacement_monotone_in_lambda(tiny_setup):
    dataset, bundle, actor = tiny_setup
    vals = [displacement(dataset, bundle, actor, lam=l, rng=stream(9, "disp"))
            for l in (0.1, 0.2, 0.5)]
    assert vals[0] < vals[1] < vals[2]
    assert DISPLACEMENT_THRESHOLD == 0.8


# -- evaluation runner -----------------------------------------------------------


def test_evaluate_zero_action_policy_never_succeeds():
    def policy(obs, rng):
        return np.zeros((CHUNK_LEN, 2))

    rep = evaluate_policy("reach2d", policy, n_episodes=5, seed_base=100)
    assert rep.success_rate == 0.0
    assert rep.vel_mean == 0.0


def test_evaluate_scripted_expert_succeeds():
    expert = ScriptedExpert("reach2d")

    def policy(obs, rng):
        return expert.act(obs, style=0, noise_scale=0.0, rng=rng)

    rep = evaluate_policy("reach2d", policy, n_episodes=20, seed_base=200)
    assert rep.success_rate >= 0.95
    assert rep.vel_mean > 0.0
    assert rep.acc_mean >= 0.0
    assert rep.avg_episode_len > 0


def test_evaluate_same_seeds_twice_identical():
    expert = ScriptedExpert("reach2d")

    def policy(obs, rng):
        return expert.act(obs, style=1, noise_scale=0.1, rng=rng)

    r1 = evaluate_policy("reach2d", policy, n_episodes=6, seed_base=300)
    r2 = evaluate_policy("reach2d", policy, n_episodes=6, seed_base=300)
    assert r1 == r2


def test_evaluate_executed_and_desired_series_both_reported():
    expert = ScriptedExpert("push2d")

    def policy(obs, rng):
        return expert.act(obs, style=0, noise_scale=0.0, rng=rng)

    rep = evaluate_policy("push2d", policy, n_episodes=4, seed_base=400)
    assert rep.vel_exec_mean > 0.0
    assert rep.acc_exec_mean >= 0.0
    # desired positions integrate the commanded actions without workspace
    # clipping, so the two series need not agree
    assert rep.vel_mean > 0.0
