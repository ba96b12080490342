import math

import numpy as np
import pytest

from pgp_lqr.analytic import (FeedbackGain, constants, cost_or_inf, exact_cost, exact_gradient,
                              exact_value, finite_difference_gradient, gradient_mapping,
                              in_sublevel, lyapunov_pair, trajectory_decay_bound, yprime)
from pgp_lqr.errors import ConfigurationError, StabilityError
from pgp_lqr.optimize import Full, Pattern
from pgp_lqr.rng import make_rng
from pgp_lqr.system import (InitialDistribution, SystemParams, random_dissipative_system,
                            scalar_system)

K_STAR = math.sqrt(2) - 1


def scalar_cost(k):
    return (1 + k * k) / (2 * (1 + k))


@pytest.fixture(scope="module")
def scalar():
    return scalar_system()


def test_scalar_cost_closed_form(scalar):
    assert exact_cost(scalar, [[0.0]]) == pytest.approx(0.5, abs=1e-15)
    assert exact_cost(scalar, [[1.0]]) == pytest.approx(0.5, abs=1e-15)
    for k in (-0.5, 0.3, 2.0):
        assert exact_cost(scalar, [[k]]) == pytest.approx(scalar_cost(k), rel=1e-13)


def test_scalar_value_and_gradient(scalar):
    assert exact_value(scalar, [[0.0]], [0.0]) == 0.0
    assert exact_value(scalar, [[0.0]], [1.0]) == pytest.approx(0.5)
    assert exact_gradient(scalar, [[0.0]])[0, 0] == pytest.approx(-0.5, abs=1e-10)
    assert abs(exact_gradient(scalar, [[K_STAR]])[0, 0]) <= 1e-8


def test_cost_scales_with_weights():
    s = random_dissipative_system(3, 2, 2, seed=0)
    K = 0.1 * np.ones((2, 2))
    assert exact_cost(s.scaled_costs(3.5), K) == pytest.approx(3.5 * exact_cost(s, K), rel=1e-12)


@pytest.mark.parametrize("seed", range(5))
def test_gradient_matches_finite_differences(seed):
    s = random_dissipative_system(4, 2, 3, seed=seed)
    K = 0.2 * make_rng(seed).standard_normal((2, 3))
    G = exact_gradient(s, K)
    fd = finite_difference_gradient(s, K)
    assert np.linalg.norm(G - fd) / np.linalg.norm(G) <= 1e-5


def test_value_monte_carlo_consistency():
    s = random_dissipative_system(4, 2, 2, seed=1)
    K = np.zeros((2, 2))
    X0 = s.init.sample(make_rng(2), 100_000)
    assert np.mean(exact_value(s, K, X0)) == pytest.approx(exact_cost(s, K), rel=0.01)


def test_unstable_gain_raises(scalar):
    with pytest.raises(StabilityError):
        exact_cost(scalar, [[-2.0]])
    assert cost_or_inf(scalar, [[-2.0]]) == math.inf
    assert not in_sublevel(scalar, [[-2.0]], 10.0)
    assert in_sublevel(scalar, [[0.0]], 0.5)


def test_feedback_gain_stability(scalar):
    assert FeedbackGain([[0.0]]).stability == "unknown"
    assert FeedbackGain([[0.0]], scalar).stability == "stable"
    assert FeedbackGain([[-3.0]], scalar).stability == "unstable"


def test_gradient_mapping_examples(scalar):
    assert gradient_mapping(scalar, [[K_STAR]], 0.1, Full())[0, 0] == pytest.approx(0, abs=1e-8)
    s = random_dissipative_system(3, 2, 2, seed=2)
    K = 0.1 * np.ones((2, 2))
    for alpha in (1e-3, 0.5):
        np.testing.assert_allclose(gradient_mapping(s, K, alpha, Full()), -exact_gradient(s, K),
                                   rtol=1e-12)
    # a system whose gradient only lives on the masked entries
    one = np.eye(1)
    s1 = SystemParams(-one, np.array([[1.0, 0.0]]), one, one, np.eye(2),
                      InitialDistribution("custom", 1, 1.0, one, lambda rng, n: np.ones((n, 1))))
    G = exact_gradient(s1, np.zeros((2, 1)))
    assert G[0, 0] != 0 and G[1, 0] == 0
    omega = Pattern(np.array([[1], [0]]))
    assert np.array_equal(gradient_mapping(s1, np.zeros((2, 1)), 0.1, omega), np.zeros((2, 1)))
    with pytest.raises(ConfigurationError):
        gradient_mapping(s1, np.zeros((2, 1)), 0.0, omega)


def test_constants_hand_evaluation(scalar):
    c = constants(scalar, a=1.0)
    assert c.sigma == pytest.approx(1.0)
    assert c.kappa == pytest.approx(3.0)
    assert c.xi == pytest.approx(1 / 12)
    assert c.X_bound == pytest.approx(1.0)
    assert c.Y_bound == pytest.approx(144.0)
    assert c.Yprime_bound == pytest.approx(2 * 144.0 ** 2)
    assert c.A_bound == pytest.approx(4.0)
    assert c.beta == pytest.approx(8.0)
    # L = 2*1*1*144 + 4*(1*1*3*1 + 1*1*1) * Y' * 1
    assert c.L == pytest.approx(288 + 16 * 2 * 144.0 ** 2)
    assert all(v > 0 for v in c.as_dict().values())


def test_constants_monotone_in_level():
    s = random_dissipative_system(3, 2, 2, seed=3)
    lo, hi = constants(s), constants(s, a=2 * constants(s).a)
    assert hi.kappa > lo.kappa and hi.X_bound > lo.X_bound and hi.L > lo.L
    assert lo.Y_bound >= max(lo.a / (lo.xi ** 2), np.eye(3).max() / 3 / lo.sigma) * (1 - 1e-12)


def test_constants_errors(scalar):
    with pytest.raises(ConfigurationError):
        constants(scalar, a=0.1)
    one = np.eye(1)
    init = InitialDistribution.uniform_cube(1)
    s = SystemParams(-one, one, np.array([[1.0], [1.0]]), np.eye(2), one, init)
    with pytest.raises(ConfigurationError, match="row-rank"):
        constants(s)


def test_yprime_is_directional_derivative():
    s = random_dissipative_system(3, 2, 2, seed=4)
    K = 0.1 * np.ones((2, 2))
    E = make_rng(0).standard_normal((2, 2))
    h = 1e-6
    dY = (lyapunov_pair(s, K + h * E)[1] - lyapunov_pair(s, K - h * E)[1]) / (2 * h)
    np.testing.assert_allclose(yprime(s, K, E), dY, rtol=1e-6, atol=1e-9)


def test_trajectory_decay_bound_shape(scalar):
    c = constants(scalar, a=1.0)
    b = trajectory_decay_bound(scalar, c, np.array([0.0, 1.0, 10.0]))
    assert b[0] == pytest.approx(2 * c.Y_bound * c.A_bound)
    assert np.all(np.diff(b) < 0)
