import json
import math

import numpy as np
import pytest

from pgp_lqr.analytic import exact_value, value_matrix
from pgp_lqr.errors import DimensionError, DivergenceError, SystemFileError
from pgp_lqr.matlin import expm, is_hurwitz
from pgp_lqr.rng import make_rng
from pgp_lqr.system import (InitialDistribution, Plant, SystemParams, closed_loop,
                            load_system, observability_rank, random_dissipative_system,
                            random_phl_system, save_system, scalar_system, simulate_cost,
                            stacked_matrix, stacked_observation, system_from_dict, system_to_dict)


@pytest.fixture(scope="module")
def reference_system():
    return random_phl_system(seed=0)


def test_closed_loop_examples(reference_system):
    s = scalar_system()
    assert closed_loop(s, np.zeros((1, 1)))[0, 0] == -1.0
    assert closed_loop(s, [[1.0]])[0, 0] == -2.0
    assert is_hurwitz(closed_loop(reference_system, reference_system.K0))
    with pytest.raises(DimensionError):
        closed_loop(s, np.zeros((2, 1)))


def test_parameter_validation():
    init = InitialDistribution.uniform_cube(2)
    A, B, C = -np.eye(2), np.eye(2, 1), np.eye(1, 2) + [[0, 1.0]]
    with pytest.raises(ValueError):
        SystemParams(A, B, C, -np.eye(1), np.eye(1), init)
    with pytest.raises(ValueError):
        SystemParams(A, np.zeros((2, 1)), C, np.eye(1), np.eye(1), init)
    with pytest.raises(ValueError, match="observable"):
        SystemParams(-np.eye(2), B, np.array([[1.0, 0.0]]), np.eye(1), np.eye(1), init)
    with pytest.raises(ValueError):
        SystemParams(A, B, C, np.eye(1), np.eye(1), init, K0=np.ones((2, 2)))
    with pytest.raises(Exception):
        SystemParams(A, B, C * np.nan, np.eye(1), np.eye(1), init)


def test_uniform_cube_distribution():
    d = InitialDistribution.uniform_cube(3)
    np.testing.assert_allclose(d.second_moment, np.eye(3) / 3)
    X = d.sample(make_rng(0), 100_000)
    assert np.all(np.linalg.norm(X, axis=1) <= d.bound)
    assert np.linalg.norm(X.T @ X / len(X) - np.eye(3) / 3) <= 0.02
    np.testing.assert_array_equal(d.sample(make_rng(5), 4), d.sample(make_rng(5), 4))


def test_simulate_cost_scalar_limit():
    s = scalar_system()
    rec = simulate_cost(s, np.zeros((1, 1)), [1.0], 0.0)
    assert rec.cost == 0.0
    rec = simulate_cost(s, np.zeros((1, 1)), [1.0], 60.0, record_outputs=False)
    assert rec.cost == pytest.approx(0.5, rel=1e-12)
    rec = simulate_cost(s, np.zeros((1, 1)), [1.0], 1.0)
    assert rec.cost == pytest.approx((1 - math.exp(-2)) / 2, rel=1e-12)
    np.testing.assert_allclose(rec.outputs[:, 0], np.exp(-rec.times), rtol=1e-12)


def test_simulate_cost_truncation_identity():
    s = random_dissipative_system(4, 2, 2, seed=3)
    K = 0.1 * np.ones((2, 2))
    x0 = np.array([0.3, -0.7, 0.2, 0.9])
    X = value_matrix(s, K)
    for tau in (0.5, 2.0, 7.25):
        rec = simulate_cost(s, K, x0, tau)
        gap = exact_value(s, K, x0) - rec.cost
        assert gap >= -1e-12
        assert gap == pytest.approx(rec.final_state @ X @ rec.final_state, rel=1e-9, abs=1e-14)
        assert gap <= np.linalg.norm(X, 2) * rec.final_state @ rec.final_state + 1e-14


def test_simulate_cost_monotone_in_horizon():
    s = random_dissipative_system(3, 1, 2, seed=1)
    K = np.zeros((1, 2))
    costs = [simulate_cost(s, K, np.ones(3), t).cost for t in (0.0, 0.3, 1.0, 3.0, 10.0)]
    assert all(c >= 0 for c in costs)
    assert np.all(np.diff(costs) >= 0)


def test_stepping_and_doubling_paths_agree():
    s = random_dissipative_system(4, 2, 2, seed=2)
    K = 0.2 * np.ones((2, 2))
    a = simulate_cost(s, K, np.ones(4), 9.3)
    b = simulate_cost(s, K, np.ones(4), 9.3, record_outputs=False)
    assert a.cost == pytest.approx(b.cost, rel=1e-11)
    np.testing.assert_allclose(a.final_state, b.final_state, rtol=1e-10, atol=1e-14)


def test_divergence_is_reported():
    s = scalar_system()
    with pytest.raises(DivergenceError):
        simulate_cost(s, [[-5.0]], [1.0], 200.0)


def test_stacked_observation_matches_explicit_matrix():
    s = random_dissipative_system(4, 2, 2, seed=4)
    K = 0.1 * np.ones((2, 2))
    delays = np.linspace(0, 1, 4)
    x0 = np.array([1.0, -1.0, 0.5, 0.0])
    AK = closed_loop(s, K)
    F = np.vstack([s.C @ expm(AK * h) for h in delays])
    np.testing.assert_allclose(stacked_observation(s, K, x0, 0.0, delays), F @ x0, atol=1e-10)
    np.testing.assert_allclose(stacked_matrix(s, K, delays), F, atol=1e-14)
    np.testing.assert_array_equal(stacked_observation(s, K, np.zeros(4), 0.3, delays), np.zeros(8))
    np.testing.assert_allclose(stacked_observation(s, K, x0, 0.0, [0.0]), s.C @ x0)
    t = 0.7
    np.testing.assert_allclose(stacked_observation(s, K, x0, t, delays),
                               F @ expm(AK * t) @ x0, atol=1e-10)


def test_plant_is_black_box(reference_system):
    plant = Plant(reference_system)
    for name in ("A", "B", "C", "Q", "R", "sys"):
        assert not hasattr(plant, name)
    assert (plant.n, plant.m, plant.p) == (10, 4, 2)
    with pytest.raises(AttributeError):
        plant.extra = 1


def test_plant_rollout_accounting_and_consistency():
    s = random_dissipative_system(3, 2, 1, seed=5)
    plant = Plant(s)
    K = np.array([[0.1], [0.0]])
    X0 = s.init.sample(make_rng(1), 3)
    costs, outs = plant.rollout(K, X0, 2.0, [0.0, 0.5, 2.0])
    assert plant.rollouts == 3
    for x0, c, o in zip(X0, costs, outs):
        rec = simulate_cost(s, K, x0, 2.0, dt=0.5)
        assert c == pytest.approx(rec.cost, rel=1e-11)
        np.testing.assert_allclose(o[:, 0], rec.outputs[[0, 1, 4], 0], rtol=1e-10, atol=1e-14)
    pc, div = plant.perturbed_costs(np.repeat(K[None], 3, axis=0), X0, 2.0)
    assert not div.any()
    np.testing.assert_allclose(pc, costs, rtol=1e-11)
    assert plant.rollouts == 6
    assert plant.cost(K, X0[0], 2.0) == pytest.approx(costs[0], rel=1e-11)


def test_generator_properties(reference_system):
    s = reference_system
    assert (s.n, s.m, s.p) == (10, 4, 2)
    assert is_hurwitz(s.A)
    assert np.linalg.eigvalsh(s.A + s.A.T).max() < 0
    np.testing.assert_array_equal(s.K0, np.zeros((4, 2)))
    again = random_phl_system(seed=0)
    np.testing.assert_array_equal(again.A, s.A)


def test_generator_observable_over_many_seeds():
    ranks = [observability_rank(random_phl_system(seed=k).A, random_phl_system(seed=k).C)
             for k in range(100)]
    assert ranks == [10] * 100


def test_system_file_round_trip(tmp_path, reference_system):
    path = tmp_path / "sys.json"
    save_system(reference_system, path)
    back = load_system(path)
    for name in ("A", "B", "C", "Q", "R", "K0"):
        np.testing.assert_array_equal(getattr(back, name), getattr(reference_system, name))
    assert back.seed == 0
    doc = json.loads(path.read_text())
    assert doc["generator"]["draw_order"][0].startswith("randn")


@pytest.mark.parametrize("field, value", [("A", [[1, 2]]), ("B", "oops"), ("n", -1),
                                          ("C", [[float("nan")] * 10] * 2)])
def test_corrupted_system_file_names_field(reference_system, field, value):
    doc = system_to_dict(reference_system)
    doc[field] = value
    with pytest.raises(SystemFileError) as info:
        system_from_dict(doc)
    assert info.value.field == field
    assert field in str(info.value)


def test_missing_field_and_bad_json(tmp_path, reference_system):
    doc = system_to_dict(reference_system)
    del doc["R"]
    with pytest.raises(SystemFileError) as info:
        system_from_dict(doc)
    assert info.value.field == "R"
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(SystemFileError):
        load_system(bad)


def test_non_dissipative_frame_rejected(reference_system):
    doc = system_to_dict(reference_system)
    doc["A"] = (np.array(doc["A"]) + 5 * np.eye(10)).tolist()
    with pytest.raises(SystemFileError) as info:
        system_from_dict(doc)
    assert info.value.field == "A"
