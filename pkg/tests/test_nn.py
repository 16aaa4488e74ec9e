import numpy as np
import pytest

from markovlens.errors import ContractViolation, TrainingError
from markovlens.nn import AdamState, MlpParams, adam_step, init_mlp, mlp_backward, mlp_forward


def random_params(rng, in_dim, out_dim, scale=0.5):
    p = MlpParams.zeros(in_dim, out_dim)
    return p.like(rng.normal(scale=scale, size=p.to_vector().size))


def finite_difference_grad(params, x, out_grad, h=1e-5):
    theta = params.to_vector()
    grad = np.empty_like(theta)
    for k in range(theta.size):
        up, down = theta.copy(), theta.copy()
        up[k] += h
        down[k] -= h
        f_up = np.dot(out_grad, mlp_forward(params.like(up), x))
        f_down = np.dot(out_grad, mlp_forward(params.like(down), x))
        grad[k] = (f_up - f_down) / (2 * h)
    return grad


def gradcheck_draw(seed, in_dim=4, out_dim=2):
    """Init-scale params plus jitter, random input and output gradient."""
    rng = np.random.default_rng(seed)
    p = init_mlp(in_dim, out_dim, rng, out_gain=1.0)
    v = p.to_vector()
    p = p.like(v + rng.normal(scale=0.05, size=v.size))
    return p, rng.normal(size=in_dim), rng.normal(size=out_dim)


def max_relative_error(analytic, numeric, floor=1e-4):
    # below the floor, central differences with h=1e-5 are limited by truncation error
    return float(np.max(np.abs(analytic - numeric) / np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)))


def test_zero_params_give_zero_output():
    p = MlpParams.zeros(4, 2)
    np.testing.assert_array_equal(mlp_forward(p, np.ones(4)), np.zeros(2))


def test_single_unit_net_at_zero():
    p = MlpParams(np.ones((1, 1)), np.zeros(1), np.ones((1, 1)), np.zeros(1), np.ones((1, 1)), np.zeros(1))
    assert mlp_forward(p, np.zeros(1))[0] == 0.0


def test_random_params_finite_outputs():
    rng = np.random.default_rng(0)
    p = random_params(rng, 4, 3, scale=10.0)
    assert np.all(np.isfinite(mlp_forward(p, rng.normal(size=(50, 4)) * 1e3)))


def test_dimension_mismatch():
    p = MlpParams.zeros(4, 2)
    with pytest.raises(ContractViolation):
        mlp_forward(p, np.ones(3))
    with pytest.raises(ContractViolation):
        mlp_backward(p, np.ones(4), np.ones(3))


def test_zero_output_grad_zero_param_grads():
    rng = np.random.default_rng(1)
    p = random_params(rng, 3, 2)
    g = mlp_backward(p, rng.normal(size=3), np.zeros(2))
    assert not np.any(g.to_vector())


def test_output_bias_gradient_is_output_grad():
    p = MlpParams.zeros(3, 2)
    g = mlp_backward(p, np.array([0.1, 0.2, 0.3]), np.array([0.7, -1.3]))
    np.testing.assert_array_equal(g.b3, [0.7, -1.3])


@pytest.mark.parametrize("seed", range(5))
def test_gradient_matches_finite_differences(seed):
    p, x, og = gradcheck_draw(seed)
    analytic = mlp_backward(p, x, og).to_vector()
    assert max_relative_error(analytic, finite_difference_grad(p, x, og)) < 1e-6


def test_batched_gradient_is_sum_of_single():
    rng = np.random.default_rng(3)
    p = random_params(rng, 4, 2)
    X = rng.normal(size=(5, 4))
    G = rng.normal(size=(5, 2))
    batched = mlp_backward(p, X, G).to_vector()
    summed = sum(mlp_backward(p, X[i], G[i]).to_vector() for i in range(5))
    np.testing.assert_allclose(batched, summed, rtol=1e-12, atol=1e-12)


def test_forward_lipschitz_bound():
    rng = np.random.default_rng(4)
    p = random_params(rng, 4, 2)
    bound = np.linalg.norm(p.W3, 2) * np.linalg.norm(p.W2, 2) * np.linalg.norm(p.W1, 2)  # |tanh'| <= 1
    for _ in range(100):
        x = rng.normal(size=4)
        d = rng.normal(size=4) * 1e-3
        assert np.linalg.norm(mlp_forward(p, x + d) - mlp_forward(p, x)) <= bound * np.linalg.norm(d) + 1e-15


def test_init_is_orthogonal_with_gains():
    p = init_mlp(4, 2, np.random.default_rng(0), out_gain=0.01)
    np.testing.assert_allclose(p.W2 @ p.W2.T, 2.0 * np.eye(64), atol=1e-10)
    np.testing.assert_allclose(p.W1.T @ p.W1, 2.0 * np.eye(4), atol=1e-10)
    np.testing.assert_allclose(p.W3 @ p.W3.T, 1e-4 * np.eye(2), atol=1e-14)
    assert not np.any(p.b1) and not np.any(p.b3)


def test_adam_zero_grad_keeps_params():
    p = np.array([1.0, -2.0])
    new, state = adam_step(p, np.zeros(2), AdamState.fresh(2), 1e-3)
    np.testing.assert_array_equal(new, p)
    assert state.t == 1


def test_adam_first_step():
    new, _ = adam_step(np.array([0.0]), np.array([1.0]), AdamState.fresh(1), 0.001)
    assert new[0] == pytest.approx(-0.001 / (1 + 1e-8), rel=1e-12)


def test_adam_deterministic_and_structured():
    rng = np.random.default_rng(5)
    p = random_params(rng, 3, 2)
    g = random_params(rng, 3, 2)
    s = AdamState.fresh(p.to_vector().size)
    a, sa = adam_step(p, g, s, 3e-4)
    b, sb = adam_step(p, g, s, 3e-4)
    assert isinstance(a, MlpParams)
    assert a.to_vector().tobytes() == b.to_vector().tobytes()
    assert np.all(sa.v >= 0) and sa.t == sb.t == 1


def test_adam_non_finite_gradient():
    with pytest.raises(TrainingError):
        adam_step(np.zeros(2), np.array([np.nan, 0.0]), AdamState.fresh(2), 1e-3)
