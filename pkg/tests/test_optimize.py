import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from pgp_lqr.analytic import constants, exact_cost, exact_gradient, gradient_mapping
from pgp_lqr.errors import ConfigurationError, DimensionError, EstimationError
from pgp_lqr.optimize import (PSD, ConstraintSet, Full, KnownModelLogger, OptimizerConfig, Pattern,
                              check_stationarity, exact_oracle, exact_pgp_run, min_iterations,
                              reference_pattern, pgp_run, recommended_step)
from pgp_lqr.system import random_dissipative_system, scalar_system

K_STAR = math.sqrt(2) - 1
finite = st.floats(-1e3, 1e3, allow_nan=False)


def test_reference_pattern_projection():
    P = reference_pattern().project(np.ones((4, 2)))
    expected = np.array([[0, 1], [0, 1], [1, 0], [1, 0]], dtype=float)
    np.testing.assert_array_equal(P, expected)
    assert reference_pattern().contains(P)
    assert not reference_pattern().contains(np.ones((4, 2)))
    with pytest.raises(DimensionError):
        reference_pattern().project(np.ones((2, 4)))
    with pytest.raises(ConfigurationError):
        Pattern(np.array([[2, 0]]))


def test_psd_projection_examples():
    np.testing.assert_allclose(PSD().project(np.diag([2.0, -1.0])), np.diag([2.0, 0.0]))
    S = np.array([[2.0, 1.0], [1.0, 2.0]])
    np.testing.assert_allclose(PSD().project(S), S, atol=1e-15)
    assert PSD().contains(S) and not PSD().contains(np.diag([1.0, -1.0]))
    with pytest.raises(DimensionError):
        PSD().project(np.ones((2, 3)))


def test_constraint_round_trip():
    for omega in (Full(), PSD(), reference_pattern()):
        back = ConstraintSet.from_dict(omega.to_dict())
        assert type(back) is type(omega)
    np.testing.assert_array_equal(ConstraintSet.from_dict(reference_pattern().to_dict()).mask,
                                  reference_pattern().mask)
    with pytest.raises(ConfigurationError):
        ConstraintSet.from_dict({"kind": "ball"})


@settings(max_examples=300, deadline=None)
@given(arrays(np.float64, (4, 2), elements=finite), arrays(np.float64, (4, 2), elements=finite),
       arrays(np.float64, (4, 2), elements=finite))
def test_pattern_projection_axioms(Y1, Y2, Z):
    omega = reference_pattern()
    P1, P2, X = omega.project(Y1), omega.project(Y2), omega.project(Z)
    assert np.array_equal(omega.project(P1), P1)
    assert np.all(P1[reference_pattern().mask == 1] == 0)
    assert np.linalg.norm(P1 - P2) <= np.linalg.norm(Y1 - Y2) * (1 + 1e-15)
    assert np.sum((Y1 - P1) * (X - P1)) <= 1e-12 * (1 + np.abs(Y1).max() * np.abs(Z).max())


@settings(max_examples=300, deadline=None)
@given(arrays(np.float64, (3, 3), elements=finite), arrays(np.float64, (3, 3), elements=finite),
       arrays(np.float64, (3, 3), elements=finite))
def test_psd_projection_axioms(Y1, Y2, Z):
    omega = PSD()
    P1, P2, X = omega.project(Y1), omega.project(Y2), omega.project(Z)
    scale = 1 + max(np.abs(Y1).max(), np.abs(Y2).max(), np.abs(Z).max())
    assert np.abs(omega.project(P1) - P1).max() <= 1e-12 * scale
    assert omega.contains(P1, tol=1e-12 * scale)
    assert np.linalg.norm(P1 - P2) <= np.linalg.norm(Y1 - Y2) + 1e-12 * scale
    assert np.sum((Y1 - P1) * (X - P1)) <= 1e-12 * scale ** 2


def test_step_and_iteration_bounds():
    assert recommended_step(2.0, 0.0) == pytest.approx(0.9)
    assert min_iterations(1.0, 0.1, 0.1, 0.0, 2.0) == 1112
    assert min_iterations(1.0, 0.05, 0.1, 0.0, 2.0) > min_iterations(1.0, 0.1, 0.1, 0.0, 2.0)
    with pytest.raises(ConfigurationError):
        min_iterations(1.0, 0.1, 1.0, 0.0, 2.0)
    with pytest.raises(ConfigurationError):
        recommended_step(2.0, 1.0)
    with pytest.raises(ConfigurationError):
        OptimizerConfig(1.0, 0.1, 10, lam=0.0, L=2.0)
    with pytest.raises(ConfigurationError):
        OptimizerConfig(0.0, 0.1, 10)


def test_exact_scalar_run_finds_minimiser():
    s = scalar_system()
    log = pgp_run(exact_oracle(s), [[0.0]], Full(), OptimizerConfig(0.5, 1e-6, 10_000, lam=0.0),
                  KnownModelLogger(s))
    assert log.reason == "step_norm"
    assert len(log.records) < 10_000
    assert log.K_final[0, 0] == pytest.approx(K_STAR, abs=1e-6)
    assert abs(exact_gradient(s, log.K_final)[0, 0]) <= 1e-6
    assert np.all(np.diff(log.costs()) < 0)
    # the returned gain is the pre-step iterate of the final record
    np.testing.assert_array_equal(log.records[-1].K, log.K_final)


@pytest.mark.parametrize("seed", range(3))
def test_exact_descent_is_monotone(seed):
    s = random_dissipative_system(4, 2, 2, seed=seed)
    alpha = recommended_step(constants(s, a=exact_cost(s, s.K0)).L, 0.0)
    log = pgp_run(exact_oracle(s), s.K0, Full(), OptimizerConfig(alpha, 1e-12, 300, lam=0.0),
                  KnownModelLogger(s))
    assert log.reason == "max_iter"
    assert np.all(np.diff(log.costs()) < 0)


def test_compiled_run_matches_loop():
    s = random_dissipative_system(2, 2, 1, seed=3)
    omega = Pattern(np.array([[0], [1]]))
    cfg = OptimizerConfig(0.05, 1e-4, 5000, lam=0.0)
    log = pgp_run(exact_oracle(s), s.K0, omega, cfg, KnownModelLogger(s))
    run = exact_pgp_run(s, s.K0, omega, cfg.alpha, cfg.epsilon, cfg.max_iter)
    assert log.reason == run.reason == "step_norm"
    assert len(log.records) == run.iterations + 1
    np.testing.assert_allclose(run.K_final, log.K_final, rtol=1e-10)
    np.testing.assert_allclose(run.costs, log.costs(), rtol=1e-10)
    assert run.strictly_decreasing()
    ok, nrm = check_stationarity(s, run.K_final, cfg.alpha, omega, cfg.epsilon)
    assert ok and nrm <= cfg.epsilon


def test_feasibility_of_logged_iterates():
    s = random_dissipative_system(4, 4, 2, seed=1)
    omega = reference_pattern()
    log = pgp_run(exact_oracle(s), s.K0, omega, OptimizerConfig(0.01, 1e-9, 200), KnownModelLogger(s))
    assert all(np.all(r.K[omega.mask == 1] == 0) for r in log.records)
    rows = log.rows()
    assert list(rows[0]) == ["iter", "f_true_if_available", "grad_est_norm", "step_norm",
                             "hurwitz", "samples_cumulative"]


def test_instability_abort_and_persist():
    s = scalar_system()

    def bad_oracle(K, i):
        return np.array([[50.0]]), 3

    cfg = OptimizerConfig(0.1, 1e-9, 5)
    log = pgp_run(bad_oracle, [[0.0]], Full(), cfg, KnownModelLogger(s))
    assert log.reason == "unstable" and len(log.records) == 1
    np.testing.assert_array_equal(log.K_final, [[0.0]])
    cfg = OptimizerConfig(0.1, 1e-9, 5, persist=True)
    log = pgp_run(bad_oracle, [[0.0]], Full(), cfg, KnownModelLogger(s))
    assert log.reason == "unstable" and log.alpha_final == 0.05
    assert len(log.records) == 2  # one rollback, then the halved step fails too


def test_estimation_failure_is_logged():
    def failing(K, i):
        if i == 2:
            raise EstimationError("all rollouts diverged")
        return np.zeros((1, 1)) + 1.0, 1

    log = pgp_run(failing, [[0.0]], Full(), OptimizerConfig(1e-3, 1e-9, 10))
    assert log.reason == "estimation_failed" and len(log.records) == 2
    assert log.records[-1].samples == 2


def test_start_outside_set_rejected():
    with pytest.raises(ConfigurationError):
        pgp_run(exact_oracle(scalar_system()), [[-1.0]], PSD(), OptimizerConfig(0.1, 1e-3, 5))


def test_stationarity_check_and_mapping():
    s = scalar_system()
    ok, nrm = check_stationarity(s, [[K_STAR]], 0.1, Full(), 1e-8)
    assert ok and nrm <= 1e-8
    assert gradient_mapping(s, [[0.0]], 0.1, PSD())[0, 0] == pytest.approx(0.5)
