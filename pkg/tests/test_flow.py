import numpy as np
import pytest

from zprl.config import OfflineConfig
from zprl.errors import ChecksumError
from zprl.flow import (
    INFERENCE_KNOTS,
    TRAIN_GRID,
    euler_sample,
    il_loss,
    init_bundle,
    interpolate,
    k_embedding,
    load_bundle,
    save_bundle,
    validate_schedule,
)
from zprl.gradcheck import grad_check
from zprl.nets import Mlp
from zprl.seeding import stream

_TINY = OfflineConfig(dim_c=5, d_z=3, enc_hidden=(8,), vel_hidden=(8,), vib_hidden=(8, 8))


def test_train_grid_and_default_schedule():
    assert len(TRAIN_GRID) == 100
    np.testing.assert_allclose(TRAIN_GRID[0], 0.01)
    np.testing.assert_allclose(TRAIN_GRID[-1], 1.0)
    assert INFERENCE_KNOTS == (1.0, 0.01, 0.0)
    validate_schedule(INFERENCE_KNOTS)


@pytest.mark.parametrize("knots", [(0.5, 0.0), (1.0, 0.5), (1.0, 0.5, 0.5, 0.0), (1.0, 0.2, 0.4, 0.0), (1.0,)])
def test_bad_schedules_rejected(knots):
    with pytest.raises(ValueError):
        validate_schedule(knots)


def test_interpolation_endpoints():
    rng = np.random.default_rng(0)
    a = rng.normal(size=(3, 8))
    w = rng.normal(size=(3, 8))
    np.testing.assert_array_equal(interpolate(a, w, np.zeros(3)), a)
    np.testing.assert_array_equal(interpolate(a, w, np.ones(3)), w)
    mid = interpolate(a, w, np.full(3, 0.25))
    np.testing.assert_allclose(mid, 0.75 * a + 0.25 * w, rtol=1e-15)


def test_k_embedding_shape_and_injectivity():
    e1, e2 = k_embedding(0.3), k_embedding(0.7)
    assert e1.shape == (16,)
    assert not np.allclose(e1, e2)
    np.testing.assert_array_equal(k_embedding(0.3), e1)


def test_constant_field_single_step_is_exact():
    u = np.array([0.3, -1.2, 0.5, 2.0, -0.7, 0.1, 0.0, 1.5])
    field = lambda a, k, cond: np.broadcast_to(u, a.shape)
    rng = stream(7, "flow")
    out = euler_sample(field, np.zeros((1, 4)), (1.0, 0.0), rng, chunk_dim=8)
    w = stream(7, "flow").standard_normal((1, 8))
    np.testing.assert_array_equal(out, w - u)  # bit-exact: one step of size 1


def test_constant_field_multistep_matches_to_roundoff():
    u = np.linspace(-1, 1, 8)
    field = lambda a, k, cond: np.broadcast_to(u, a.shape)
    for knots in [(1.0, 0.01, 0.0), tuple(np.linspace(1, 0, 101))]:
        rng = stream(3, "flow")
        out = euler_sample(field, np.zeros((2, 4)), knots, rng, chunk_dim=8)
        w = stream(3, "flow").standard_normal((2, 8))
        np.testing.assert_allclose(out, w - u, rtol=0, atol=1e-12)


def test_linear_field_matches_closed_form():
    # da/dk = a integrated from k=1 to 0 gives a(0) = w * exp(-1)
    field = lambda a, k, cond: a
    w = stream(11, "flow").standard_normal((4, 8))
    closed = w * np.exp(-1.0)
    errs = {}
    for n in (100, 1000):
        knots = tuple(np.linspace(1, 0, n + 1))
        out = euler_sample(field, np.zeros((4, 1)), knots, stream(11, "flow"), chunk_dim=8)
        errs[n] = np.max(np.abs(out - closed))
    assert errs[100] < 0.02
    assert errs[1000] < errs[100]  # Euler error shrinks with the step


def test_il_loss_with_zero_velocity_net():
    # v == 0 reduces the objective to mean |w - a|^2, which the test recomputes
    # from the documented draw order (k indices, then w)
    bundle = init_bundle("reach2d", _TINY, seed=0)
    bundle.velocity.params[:] = 0.0
    rng = np.random.default_rng(5)
    obs = np.random.default_rng(1).uniform(-1, 1, size=(6, 6))
    chunks = np.random.default_rng(2).uniform(-1, 1, size=(6, 4, 2))
    value, grads = il_loss(obs, chunks, bundle, rng)

    oracle_rng = np.random.default_rng(5)
    oracle_rng.integers(0, len(TRAIN_GRID), size=6)
    w = oracle_rng.standard_normal((6, 8))
    a = chunks.reshape(6, 8)
    assert value == pytest.approx(np.mean(np.sum((w - a) ** 2, axis=1)), rel=1e-12)
    assert set(grads) == {"encoder", "velocity"}


def test_il_loss_gradients_match_central_difference():
    bundle = init_bundle("reach2d", _TINY, seed=1)
    obs = np.random.default_rng(1).uniform(-1, 1, size=(4, 6))
    chunks = np.random.default_rng(2).uniform(-1, 1, size=(4, 4, 2))
    ne = bundle.encoder.params.size

    def fn(flat):
        b = init_bundle("reach2d", _TINY, seed=1)
        b.encoder.params[:] = flat[:ne]
        b.velocity.params[:] = flat[ne:]
        value, grads = il_loss(obs, chunks, b, np.random.default_rng(9))
        return value, np.concatenate([grads["encoder"], grads["velocity"]])

    flat0 = np.concatenate([bundle.encoder.params, bundle.velocity.params])
    assert grad_check(fn, flat0) < 1e-4


def test_il_loss_is_deterministic_given_rng():
    bundle = init_bundle("reach2d", _TINY, seed=2)
    obs = np.random.default_rng(1).uniform(-1, 1, size=(5, 6))
    chunks = np.random.default_rng(2).uniform(-1, 1, size=(5, 4, 2))
    v1, g1 = il_loss(obs, chunks, bundle, np.random.default_rng(3))
    v2, g2 = il_loss(obs, chunks, bundle, np.random.default_rng(3))
    assert v1 == v2
    np.testing.assert_array_equal(g1["velocity"], g2["velocity"])


def test_zero_weight_encoder_gives_zero_embedding():
    bundle = init_bundle("reach2d", _TINY, seed=3)
    bundle.encoder.params[:] = 0.0
    c = bundle.encode(np.random.default_rng(0).uniform(-1, 1, size=(3, 6)))
    np.testing.assert_array_equal(c, np.zeros((3, 5)))


def test_bundle_roundtrip(tmp_path):
    bundle = init_bundle("push2d", _TINY, seed=4)
    bundle.frozen = True
    save_bundle(bundle, tmp_path / "bundle")
    again = load_bundle(tmp_path / "bundle")
    assert again.env_id == "push2d" and again.frozen
    assert again.schedule == bundle.schedule
    for name in ("encoder", "velocity", "vib_enc", "vib_dec"):
        np.testing.assert_array_equal(getattr(again, name).params, getattr(bundle, name).params)
        assert getattr(again, name).widths == getattr(bundle, name).widths
    assert again.checksums() == bundle.checksums()


def test_bundle_detects_corruption(tmp_path):
    bundle = init_bundle("reach2d", _TINY, seed=5)
    save_bundle(bundle, tmp_path / "b")
    f = tmp_path / "b" / "velocity.zprl"
    raw = bytearray(f.read_bytes())
    raw[-12] ^= 0x01
    f.write_bytes(bytes(raw))
    with pytest.raises(ChecksumError):
        load_bundle(tmp_path / "b")


def test_sample_chunk_from_bundle_is_seeded():
    bundle = init_bundle("reach2d", _TINY, seed=6)
    cond = bundle.encode(np.random.default_rng(0).uniform(-1, 1, size=6))
    c1 = bundle.sample_chunk(cond, stream(0, "w"))
    c2 = bundle.sample_chunk(cond, stream(0, "w"))
    c3 = bundle.sample_chunk(cond, stream(1, "w"))
    assert c1.shape == (4, 2)
    np.testing.assert_array_equal(c1, c2)
    assert not np.array_equal(c1, c3)
