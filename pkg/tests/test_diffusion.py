import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sandplanner import diffusion as df
from sandplanner.expert_data import Dataset

SMALL = df.ModelConfig(hidden=32, temb_dim=8, beams=8)
MEM = df.ModelConfig(hidden=256, beams=8)


def random_params(cfg, seed=0, scale=0.3):
    rng = np.random.default_rng(seed)
    return {k: rng.normal(0, scale, shp) for k, shp in df.param_shapes(cfg).items()}


def ctx_rows(n, beams, seed=0, null=None):
    rng = np.random.default_rng(seed)
    v = rng.normal(size=(n, 2))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    nl = np.zeros(n, bool) if null is None else np.asarray(null)
    return df.ContextFeatures(rng.uniform(-6, 6, (n, 2)), v, nl, rng.uniform(0.2, 6, (n, beams)))


# ---------------------------------------------------------------- schedule


@pytest.mark.parametrize("kind", ["cosine", "linear"])
@pytest.mark.parametrize("S", [2, 10, 50])
def test_schedule_identity_and_shape(kind, S):
    sc = df.make_schedule(S, kind)
    np.testing.assert_allclose(sc.alpha**2 + sc.sigma**2, 1.0, atol=1e-12)
    assert np.all(np.diff(sc.alpha) <= 0)
    assert sc.sigma[S] >= 0.99
    if S >= 10:
        assert sc.alpha[1] > 0.9


def test_linear_two_steps_strictly_decreasing():
    sc = df.make_schedule(2, "linear")
    assert sc.alpha[0] > sc.alpha[1] > sc.alpha[2]


def test_schedule_rejects_bad_input():
    with pytest.raises(ValueError):
        df.make_schedule(1)
    with pytest.raises(ValueError):
        df.make_schedule(10, "sigmoid")


# ---------------------------------------------------------------- forward / target


def test_forward_noise_limits():
    sc = df.make_schedule()
    x0 = np.arange(24.0) / 24
    eps = np.linspace(-1, 1, 24)
    assert np.array_equal(df.forward_noise(sc, x0, 4, np.zeros(24)), sc.alpha[4] * x0)
    assert np.array_equal(df.forward_noise(sc, np.zeros(24), 4, eps), sc.sigma[4] * eps)
    for s in (0, 11):
        with pytest.raises(ValueError):
            df.forward_noise(sc, x0, s, eps)


def test_forward_noise_monte_carlo():
    sc = df.make_schedule()
    rng = np.random.default_rng(0)
    x0 = np.array([0.5, -0.3])
    s = 5
    xs = df.forward_noise(sc, x0, s, rng.standard_normal((10000, 2)))
    tol = 3 * sc.sigma[s] / math.sqrt(10000)
    assert np.all(np.abs(xs.mean(0) - sc.alpha[s] * x0) <= tol)
    assert np.all(np.abs(xs.var(0) / sc.sigma[s] ** 2 - 1) <= 0.05)


def test_v_target_limits():
    sc = df.make_schedule()
    x0 = np.ones(24)
    assert np.array_equal(df.v_target(sc, x0, np.zeros(24), 3), -sc.sigma[3] * x0)
    v = df.v_target(sc, x0, np.zeros(24), 10)
    np.testing.assert_allclose(v, -x0, atol=1e-6)


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 10), st.integers(0, 2**31 - 1))
def test_v_inversion(s, seed):
    sc = df.make_schedule()
    rng = np.random.default_rng(seed)
    x0, eps = rng.normal(size=(2, 24))
    xs = df.forward_noise(sc, x0, s, eps)
    v = df.v_target(sc, x0, eps, s)
    x0h, epsh = df.predict_x0_eps(sc, xs, v, s)
    np.testing.assert_allclose(x0h, x0, atol=1e-12)
    np.testing.assert_allclose(epsh, eps, atol=1e-12)


# ---------------------------------------------------------------- network


def test_zero_init_head_outputs_zero():
    pol = df.DiffusionPolicy.initialize(SMALL)
    out = pol.denoise(np.ones((3, 24)), ctx_rows(3, 8), 5)
    assert np.array_equal(out, np.zeros((3, 24)))


def test_denoise_is_deterministic_and_checks_dims():
    pol = df.DiffusionPolicy(SMALL, random_params(SMALL), df.FeatureStats(np.zeros(12), np.ones(12)))
    c = ctx_rows(2, 8)
    assert np.array_equal(pol.denoise(np.ones((2, 24)), c, 3), pol.denoise(np.ones((2, 24)), c, 3))
    with pytest.raises(ValueError):
        pol.denoise(np.ones((2, 23)), c, 3)
    with pytest.raises(ValueError):
        pol.denoise(np.ones((2, 24)), ctx_rows(2, 9), 3)


@pytest.mark.parametrize("null", [False, True])
def test_gradient_matches_finite_differences(null):
    cfg = SMALL
    sched = df.make_schedule(cfg.S)
    params = random_params(cfg, seed=1)
    rng = np.random.default_rng(2)
    x0 = rng.normal(size=(1, 24))
    ctx = rng.normal(size=(1, cfg.ctx_dim))
    nl = np.array([null])
    s = np.array([4])
    eps = rng.normal(size=(1, 24))
    _, grads = df.vloss_and_grad(params, cfg, sched, x0, ctx, nl, s, eps)
    h = 1e-5
    for name, p in params.items():
        if name == "e_null" and not null:
            assert np.all(grads[name] == 0)
            continue
        idx = [tuple(rng.integers(0, d) for d in p.shape) for _ in range(6)]
        for ix in idx:
            old = p[ix]
            p[ix] = old + h
            lp, _ = df.vloss_and_grad(params, cfg, sched, x0, ctx, nl, s, eps)
            p[ix] = old - h
            lm, _ = df.vloss_and_grad(params, cfg, sched, x0, ctx, nl, s, eps)
            p[ix] = old
            fd = (lp - lm) / (2 * h)
            assert abs(fd - grads[name][ix]) <= 1e-4 * max(abs(fd), 1e-3), name


def test_null_flag_masks_vprev():
    c = ctx_rows(2, 8, null=[True, False])
    stats = df.FeatureStats.fit(c)
    X = stats.apply(c)
    assert np.all(X[0, 2:4] == 0)


def test_inverse_range_feature():
    c = df.ContextFeatures(np.zeros((1, 2)), np.zeros((1, 2)), np.array([False]), np.array([[0.05, 0.5, 4.0]]))
    np.testing.assert_allclose(c.raw("inverse")[0, 4:], [10.0, 2.0, 0.25])
    with pytest.raises(ValueError):
        c.raw("log")


# ---------------------------------------------------------------- sampling


def trained_on_one_label(steps=2000, **kw):
    rng = np.random.default_rng(0)
    A = np.zeros((1, 8, 3))
    A[0, :, 0] = np.linspace(0, 3, 8)
    A[0, :, 1] = 0.4 * np.sin(np.linspace(0, 3, 8))
    ds = Dataset(np.array([[3.0, 0.5]]), np.array([[1.0, 0.0]]), np.array([False]),
                 rng.uniform(1, 6, (1, 8)), A, samples_per_episode=1)
    pol, log = df.train(ds, MEM, df.TrainConfig(lr=1e-2, max_steps=steps, batch_size=64, **kw))
    return pol, log, ds


@pytest.fixture(scope="module")
def memorized():
    return trained_on_one_label()


def test_single_sample_memorization(memorized):
    _, log, _ = memorized
    assert np.mean(log.step_loss[-50:]) <= 1e-3
    assert log.epoch_loss[-1] < log.epoch_loss[0]


def test_training_is_seed_deterministic():
    _, a, _ = trained_on_one_label(steps=30)
    _, b, _ = trained_on_one_label(steps=30)
    assert a.step_loss == b.step_loss


def test_samples_collapse_to_the_label(memorized):
    pol, _, ds = memorized
    ctx = df.ContextFeatures(ds.goal, ds.v_prev, ds.v_null, ds.ranges)
    A = pol.sample(ctx, K=16, rng=np.random.default_rng(1))
    err = np.abs(df.anchors_to_latent(A) - df.anchors_to_latent(ds.anchors[0])).max()
    assert err <= 0.05


def test_sample_properties(memorized):
    pol, _, ds = memorized
    ctx = df.ContextFeatures(ds.goal, ds.v_prev, ds.v_null, ds.ranges)
    noise = np.random.default_rng(3).standard_normal((4, 24))
    a = pol.sample(ctx, K=4, mode="deterministic", init_noise=noise)
    b = pol.sample(ctx, K=4, mode="deterministic", init_noise=noise)
    assert np.array_equal(a, b)
    assert np.all(a[:, 0] == 0)
    anc = pol.sample(ctx, K=16, rng=np.random.default_rng(4))
    flat = anc.reshape(16, -1)
    d = np.linalg.norm(flat[:, None] - flat[None], axis=-1)
    assert np.all(d[~np.eye(16, dtype=bool)] > 0)
    with pytest.raises(ValueError):
        pol.sample(ctx, K=0)


def test_warm_start(memorized):
    pol, _, ds = memorized
    ctx = df.ContextFeatures(ds.goal, ds.v_prev, ds.v_null, ds.ranges)
    prev = ds.anchors[0]
    out = pol.warm_start_sample(prev, ctx, K=8, start_step=6, rng=np.random.default_rng(0))
    assert pol.last_reverse_steps == 6 and out.shape == (8, 8, 3)
    near = pol.warm_start_sample(prev, ctx, K=4, start_step=1, rng=np.random.default_rng(0), mode="deterministic")
    assert np.abs(df.anchors_to_latent(near) - df.anchors_to_latent(prev)).max() <= 0.1
    for bad in (0, 11):
        with pytest.raises(ValueError):
            pol.warm_start_sample(prev, ctx, start_step=bad)


def test_full_restart_matches_cold_sampling_in_distribution(memorized):
    pol, _, ds = memorized
    ctx = df.ContextFeatures(ds.goal, ds.v_prev, ds.v_null, ds.ranges)
    cold = pol.sample(ctx, K=400, rng=np.random.default_rng(5))
    warm = pol.warm_start_sample(np.zeros((8, 3)), ctx, K=400, start_step=10, rng=np.random.default_rng(6))
    # sigma_S is ~1 so the start point barely matters; compare means
    assert np.abs(cold.mean(0) - warm.mean(0)).max() < 0.05


def test_divergence_raises():
    _, _, ds = trained_on_one_label(steps=1)
    ds.anchors[0, 3, 0] = np.nan  # one corrupt label poisons the loss
    with pytest.raises(df.TrainingDivergedError):
        df.train(ds, SMALL, df.TrainConfig(max_steps=5, batch_size=8))


def test_empty_dataset():
    _, _, ds = trained_on_one_label(steps=1)
    with pytest.raises(ValueError):
        df.train(ds.subset(slice(0, 0)), SMALL)


# ---------------------------------------------------------------- checkpoint


def test_checkpoint_roundtrip(tmp_path, memorized):
    pol, _, ds = memorized
    p = tmp_path / "p.sdpc"
    pol.save(p)
    assert p.read_bytes()[:4] == b"SDPC"
    back = df.DiffusionPolicy.load(p)
    assert back.cfg == pol.cfg and back.kind is pol.kind
    for k in pol.params:
        assert np.array_equal(back.params[k], pol.params[k])
    ctx = df.ContextFeatures(ds.goal, ds.v_prev, ds.v_null, ds.ranges)
    x = np.ones((2, 24))
    assert np.array_equal(back.denoise(x, ctx, 3), pol.denoise(x, ctx, 3))


def test_checkpoint_rejects_garbage(memorized):
    data = bytearray(df.checkpoint_bytes(memorized[0]))
    with pytest.raises(ValueError):
        df.checkpoint_from_bytes(b"XXXX" + bytes(data[4:]))
    with pytest.raises(ValueError):
        df.checkpoint_from_bytes(bytes(data[:-8]))


def test_token_jitter_rotates_live_tokens_only():
    rng = np.random.default_rng(3)
    ang = rng.uniform(-np.pi, np.pi, 6)
    v = np.column_stack([np.cos(ang), np.sin(ang)])
    null = np.array([False, True, False, False, True, False])
    c = df.ContextFeatures(rng.normal(size=(6, 2)), np.where(null[:, None], 0.0, v), null, rng.uniform(1, 5, (6, 4)))
    stats = df.FeatureStats.fit(c)
    C = stats.apply(c)
    turn = rng.normal(0, 0.3, 6)
    J = df._jitter_token(C, c.v_prev, null, stats, turn)
    assert np.array_equal(J[:, [0, 1, 4, 5, 6, 7]], C[:, [0, 1, 4, 5, 6, 7]])
    assert np.all(J[null, 2:4] == 0)
    back = J[~null, 2:4] * stats.std[2:4] + stats.mean[2:4]
    got = np.arctan2(back[:, 1], back[:, 0])
    np.testing.assert_allclose(np.angle(np.exp(1j * (got - ang[~null]))), turn[~null], atol=1e-12)
    # zero turn is the identity
    np.testing.assert_allclose(df._jitter_token(C, c.v_prev, null, stats, np.zeros(6)), C, atol=1e-12)
