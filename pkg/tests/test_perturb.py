import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from markovlens.envs import make_env
from markovlens.errors import ConfigurationError
from markovlens.perturb import (
    ArNoiseSpec,
    ArState,
    DropSpec,
    EnvRecipe,
    GaussianNoiseSpec,
    PerturbedEnv,
    ar_advance,
    ar_perturb,
    drop_dims,
    gaussian_perturb,
)


def test_zero_gaussian_is_identity():
    obs = np.array([0.3, -1.2, 4.0])
    out = gaussian_perturb(obs, GaussianNoiseSpec(0.0, 0.0), np.random.default_rng(0))
    assert out.tobytes() == obs.tobytes()


def test_gaussian_deterministic_shift():
    out = gaussian_perturb(np.array([1.0, 2.0]), GaussianNoiseSpec(5.0, 0.0, (0,)), np.random.default_rng(0))
    np.testing.assert_array_equal(out, [6.0, 2.0])


def test_gaussian_only_targets_listed_dims():
    obs = np.zeros(4)
    out = gaussian_perturb(obs, GaussianNoiseSpec(0.0, 1.0, (1, 3)), np.random.default_rng(0))
    assert out[0] == 0 and out[2] == 0 and out[1] != 0 and out[3] != 0


def test_gaussian_bad_index_and_variance():
    with pytest.raises(ConfigurationError):
        gaussian_perturb(np.zeros(2), GaussianNoiseSpec(0.0, 1.0, (2,)), np.random.default_rng(0))
    with pytest.raises(ConfigurationError):
        GaussianNoiseSpec(0.0, -0.1)
    with pytest.raises(ConfigurationError):
        gaussian_perturb(np.zeros(3), GaussianNoiseSpec(0.0, 1.0, (1, 1)), np.random.default_rng(0))


def test_gaussian_draws_uncorrelated_in_time():
    rng = np.random.default_rng(1)
    spec = GaussianNoiseSpec(0.0, 1.0, (0,))
    n = 100_000
    draws = np.array([gaussian_perturb(np.zeros(1), spec, rng)[0] for _ in range(n)])
    d = draws - draws.mean()
    lag1 = np.dot(d[1:], d[:-1]) / np.dot(d, d)
    assert abs(lag1) < 3 / np.sqrt(n)


def test_ar_collapses_to_zero():
    state, z = ar_advance(ArState(np.array([7.0])), ArNoiseSpec((0.0,), 0.0), np.random.default_rng(0))
    assert z == 0.0
    np.testing.assert_array_equal(state.history, [0.0])


def test_ar_deterministic_recurrence():
    _, z = ar_advance(ArState(np.array([1.0])), ArNoiseSpec((0.9,), 0.0), np.random.default_rng(0))
    assert z == pytest.approx(0.9)


def test_ar_history_shifts():
    state = ArState(np.array([1.0, 2.0, 3.0]))
    new, z = ar_advance(state, ArNoiseSpec((0.5, 0.25, 0.125), 0.0), np.random.default_rng(0))
    assert z == pytest.approx(0.5 + 0.5 + 0.375)
    np.testing.assert_allclose(new.history, [z, 1.0, 2.0])


def test_ar1_stationary_variance():
    # closed form for AR(1): sigma^2 / (1 - rho^2)
    spec = ArNoiseSpec((0.9,), 0.1)
    rng = np.random.default_rng(2)
    state = ArState.zeros(1)
    zs = np.empty(100_000)
    for t in range(zs.size):
        state, zs[t] = ar_advance(state, spec, rng)
    expected = 0.01 / (1 - 0.81)
    assert abs(zs.var() - expected) / expected < 0.15


def test_ar_history_length_mismatch():
    with pytest.raises(ConfigurationError):
        ar_advance(ArState.zeros(1), ArNoiseSpec((0.9, 0.1), 0.1), np.random.default_rng(0))


def test_ar_spec_validation():
    with pytest.raises(ConfigurationError):
        ArNoiseSpec((), 0.1)
    with pytest.raises(ConfigurationError):
        ArNoiseSpec((0.5,), -1.0)


def test_ar_perturb():
    np.testing.assert_array_equal(ar_perturb(np.ones(3), 0.0, ArNoiseSpec((0.5,), 0.1)), np.ones(3))
    out = ar_perturb(np.ones(3), 0.5, ArNoiseSpec((0.5,), 0.1, (0, 2)))
    np.testing.assert_array_equal(out, [1.5, 1.0, 1.5])
    with pytest.raises(ConfigurationError):
        ar_perturb(np.ones(3), 0.5, ArNoiseSpec((0.5,), 0.1, (3,)))


def test_drop_dims():
    x = np.array([1.0, 2.0, 3.0, 4.0])
    np.testing.assert_array_equal(drop_dims(x, DropSpec(())), x)
    np.testing.assert_array_equal(drop_dims(x, DropSpec((0,))), [2, 3, 4])
    np.testing.assert_array_equal(drop_dims(x, DropSpec((1, 3))), [1, 3])
    with pytest.raises(ConfigurationError):
        drop_dims(x, DropSpec((0, 1, 2, 3)))
    with pytest.raises(ConfigurationError):
        drop_dims(x, DropSpec((4,)))


@settings(max_examples=50, deadline=None)
@given(st.lists(st.booleans(), min_size=2, max_size=8).filter(lambda m: not all(m)))
def test_drop_preserves_order_and_length(mask):
    x = np.arange(len(mask), dtype=float)
    dropped = tuple(i for i, m in enumerate(mask) if m)
    out = drop_dims(x, DropSpec(dropped))
    assert out.shape[0] == len(mask) - len(dropped)
    assert list(out) == [i for i, m in enumerate(mask) if not m]


def _rollout(env, seed, n=300):
    obs = [env.reset(seed)]
    rewards, terms = [], []
    for t in range(n):
        out = env.step(t % 2)
        obs.append(out.observation)
        rewards.append(out.reward)
        terms.append(out.terminated)
        if out.terminated or out.truncated:
            obs.append(env.reset())
    return np.array(obs), rewards, terms


def test_wrapper_does_not_touch_dynamics():
    plain = make_env("CartPole-v1")
    noisy = EnvRecipe("CartPole-v1", gaussian=(GaussianNoiseSpec(0.0, 1.0),), ar=ArNoiseSpec((0.9,), 0.5)).build()
    _, r_plain, t_plain = _rollout(plain, 3)
    _, r_noisy, t_noisy = _rollout(noisy, 3)
    assert r_plain == r_noisy and t_plain == t_noisy


def test_wrapper_seeded_reproducibility_and_drop_after_noise():
    recipe = EnvRecipe("CartPole-v1", ar=ArNoiseSpec((0.9, 0.1), 0.1, (3,)), drop=DropSpec((0,)))
    a, _, _ = _rollout(recipe.build(), 5)
    b, _, _ = _rollout(recipe.build(), 5)
    assert a.tobytes() == b.tobytes()
    assert a.shape[1] == 3
    # dim index 3 refers to the full observation, i.e. the last kept column
    clean, _, _ = _rollout(EnvRecipe("CartPole-v1", drop=DropSpec((0,))).build(), 5)
    np.testing.assert_array_equal(a[:, :2], clean[:, :2])
    assert not np.allclose(a[:, 2], clean[:, 2])


def test_ar_state_resets_each_episode():
    env = EnvRecipe("CartPole-v1", ar=ArNoiseSpec((1.0,), 0.0)).build()
    env.reset(0)
    env._ar_state = ArState(np.array([5.0]))
    env.reset()
    np.testing.assert_array_equal(env._ar_state.history, [0.0])


def test_wrapper_labels_and_nonstationary_warning(caplog):
    spec = ArNoiseSpec((0.95, 0.1), 0.1)  # unused elsewhere: the warning fires once per process per spec
    with caplog.at_level("WARNING"):
        env = PerturbedEnv(make_env("CartPole-v1"), ar=spec, drop=DropSpec((3,)))
    assert "not stationary" in caplog.text
    caplog.clear()
    with caplog.at_level("WARNING"):
        PerturbedEnv(make_env("CartPole-v1"), ar=spec)
    assert "not stationary" not in caplog.text
    assert env.observation_labels == ["CartPos", "CartVel", "PoleAngle"]
    assert env.obs_dim == 3
