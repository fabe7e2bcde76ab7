import numpy as np
import pytest

from streampolicy.core import make_rng
from streampolicy.flowmatch import FlowParams
from streampolicy.normkit import NormStats
from streampolicy.velocitynet import (
    AdamState, CheckpointError, Policy, adam_step, forward, forward_batch,
    init_adam, init_velocity_model, load_policy, loss_and_grad, read_container,
    save_policy, time_features, write_container, TAG_VELOCITY_POLICY,
)


def _small_model(seed=0):
    return init_velocity_model(2, 7, hidden=(16, 12), rng=make_rng(seed, 7, 0))


def _batch(rng, n=6):
    return (rng.normal(size=(n, 2)), rng.uniform(0, 1, size=n),
            rng.normal(size=(n, 7)), rng.normal(size=(n, 2)))


def test_gradient_matches_central_differences(rng):
    """Analytic gradients against O(eps^2) central differences, every
    parameter tensor, a handful of entries each."""
    model = _small_model()
    X, T, OBS, V = _batch(rng)
    _, grads = loss_and_grad(model, X, T, OBS, V)
    eps = 1e-6
    worst = 0.0
    for name, g in grads.items():
        flat = model.params[name].ravel()
        gflat = g.ravel()
        for idx in range(0, flat.size, max(1, flat.size // 7)):
            orig = flat[idx]
            flat[idx] = orig + eps
            lp, _ = loss_and_grad(model, X, T, OBS, V)
            flat[idx] = orig - eps
            lm, _ = loss_and_grad(model, X, T, OBS, V)
            flat[idx] = orig
            fd = (lp - lm) / (2 * eps)
            denom = max(abs(fd), abs(gflat[idx]), 1e-8)
            worst = max(worst, abs(fd - gflat[idx]) / denom)
    assert worst < 1e-4, worst


def test_forward_batch_agrees_with_single(rng):
    model = _small_model()
    X, T, OBS, _ = _batch(rng)
    batched = forward_batch(model, X, T, OBS)
    for i in range(X.shape[0]):
        assert np.allclose(batched[i], forward(model, X[i], float(T[i]), OBS[i]), atol=1e-12)


def test_time_features_shape_and_range():
    f = time_features(0.3)
    assert f.shape == (9,)
    assert abs(f[0] - 0.3) < 1e-15
    assert np.all(np.abs(f[1:]) <= 1.0)


def test_adam_descends(rng):
    model = _small_model()
    X, T, OBS, V = _batch(rng, n=32)
    state = init_adam(model.params, lr=1e-2)
    first, _ = loss_and_grad(model, X, T, OBS, V)
    for _ in range(60):
        loss, grads = loss_and_grad(model, X, T, OBS, V)
        adam_step(model.params, grads, state, lr=1e-2)
    final, _ = loss_and_grad(model, X, T, OBS, V)
    assert final < 0.5 * first


def test_container_roundtrip(tmp_path):
    rng = make_rng(1, 2)
    arrays = [("a", rng.normal(size=(3, 4))), ("b", np.arange(5, dtype=np.float64))]
    cfgin = {"alpha": 1, "names": ["x", "y"]}
    p = tmp_path / "c.bin"
    write_container(p, tag=TAG_VELOCITY_POLICY, arrays=arrays, config=cfgin)
    tag, loaded, cfg = read_container(p, expect_tag=TAG_VELOCITY_POLICY)
    assert tag == TAG_VELOCITY_POLICY
    assert cfg == cfgin
    for name, arr in arrays:
        assert np.array_equal(loaded[name], arr)


def test_container_rejects_corruption(tmp_path):
    p = tmp_path / "c.bin"
    write_container(p, tag=1, arrays=[("a", np.ones(3))], config={})
    raw = bytearray(p.read_bytes())
    raw[len(raw) // 2] ^= 0xFF
    p.write_bytes(bytes(raw))
    with pytest.raises(CheckpointError):
        read_container(p)


def test_container_rejects_wrong_magic(tmp_path):
    p = tmp_path / "junk.bin"
    p.write_bytes(b"NOTMAGIC" + b"\x00" * 64)
    with pytest.raises(CheckpointError):
        read_container(p)


def test_container_tag_mismatch(tmp_path):
    p = tmp_path / "c.bin"
    write_container(p, tag=2, arrays=[("a", np.ones(1))], config={})
    with pytest.raises(CheckpointError):
        read_container(p, expect_tag=1)


def _toy_policy():
    model = _small_model(3)
    stats = NormStats(q_min=np.array([-1.0, -1.0]), q_max=np.array([1.0, 1.0]),
                      scale=np.array([2.0, 2.0]))
    return Policy(model=model, stats=stats, flow=FlowParams())


def test_policy_save_load_identical(tmp_path):
    policy = _toy_policy()
    p = tmp_path / "p.ckpt"
    adam = init_adam(policy.model.params, lr=1e-3)
    save_policy(p, policy, adam=adam, iteration=42)
    loaded, adam2, it = load_policy(p)
    assert it == 42
    assert adam2 is not None and adam2.step == adam.step
    assert loaded.alpha0_convention == policy.alpha0_convention
    assert loaded.flow == policy.flow
    x = np.array([0.1, -0.2])
    obs = np.linspace(-1, 1, 7)
    assert np.array_equal(loaded.velocity(x, 3, obs), policy.velocity(x, 3, obs))


def test_policy_action_pair_consistent():
    policy = _toy_policy()
    a_norm, a_raw = policy.action(np.zeros(2), 0, np.zeros(7))
    assert np.allclose(a_raw, a_norm * policy.stats.scale)
    v = policy.velocity(np.zeros(2), 0, np.zeros(7))
    assert np.allclose(a_norm, v / policy.flow.h)
