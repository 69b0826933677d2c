import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles import qp_projection
from satopf.errors import EmptyFeasibleSet, InfeasibleFirstStage
from satopf.first_stage import (
    FeasibleSetSpec,
    FirstStage,
    feasible_start,
    is_feasible,
    project,
    project_hyperplane_box,
    project_simplex_lb,
    random_feasible,
    validate,
)


def box_spec(n=2, demand=10.0, upper=8.0, eps=0.0, cap=np.inf):
    up = np.full(n, upper)
    return FeasibleSetSpec(
        demand=demand, p0_lower=np.zeros(n), p0_upper=up, r_plus_max=up, r_minus_max=up,
        cap_upper=np.full(n, cap), cap_lower=np.full(n, -cap), alpha_lower=np.full(n, eps),
        alpha_upper=np.ones(n), reserve_set=np.ones(n, bool), epsilon=eps,
    )


def test_validate_accepts_feasible():
    validate(FirstStage([5, 5], [0, 0], [0, 0], [0.5, 0.5]), box_spec())


def test_validate_reports_balance():
    with pytest.raises(InfeasibleFirstStage) as e:
        validate(FirstStage([6, 5], [0, 0], [0, 0], [0.5, 0.5]), box_spec())
    assert e.value.constraint == "balance"


def test_validate_reports_participation():
    with pytest.raises(InfeasibleFirstStage) as e:
        validate(FirstStage([5, 5], [0, 0], [0, 0], [0.5, 0.5]), box_spec(eps=0.6))
    assert e.value.constraint == "participation"


def test_validate_reports_reserve_limits():
    with pytest.raises(InfeasibleFirstStage) as e:
        validate(FirstStage([5, 5], [4, 0], [0, 0], [0.5, 0.5]), box_spec(cap=8.0))
    assert e.value.constraint == "reserve_limits"


def test_default_epsilon_rule(six_bus):
    net, _, spec, _ = six_bus
    assert spec.epsilon == min(0.001, 0.01 / 3)


def test_feasible_point_is_fixed():
    spec = box_spec()
    x = FirstStage([5, 5], [1, 2], [0.5, 0], [0.3, 0.7])
    assert project(x, spec).allclose(x, atol=1e-12)


def test_alpha_projection_example():
    spec = box_spec()
    x = project(FirstStage([5, 5], [0, 0], [0, 0], [1.5, 0.0]), spec)
    np.testing.assert_allclose(x.alpha, [1.0, 0.0], atol=1e-15)


def test_hyperplane_box_example():
    # oracle: KKT at (8, 2) with multiplier -1: unit 1 at its upper bound, unit 2 free
    np.testing.assert_allclose(project_hyperplane_box(np.array([10.0, 1.0]), 0.0, 8.0, 10.0), [8, 2])
    x = project(FirstStage([10, 1], [0, 0], [0, 0], [0.5, 0.5]), box_spec())
    np.testing.assert_allclose(x.p0, [8.0, 2.0], atol=1e-9)


@pytest.mark.parametrize(
    "v, lb, expected",
    [((0.8, 0.8), (0.1, 0.1), (0.5, 0.5)), ((0.2, 0.3, 0.5), (0, 0, 0), (0.2, 0.3, 0.5)),
     ((2.0, -1.0, 0.0), (0, 0, 0), (1.0, 0.0, 0.0))],
)
def test_simplex_projection_examples(v, lb, expected):
    np.testing.assert_allclose(project_simplex_lb(np.array(v), np.array(lb, float)), expected, atol=1e-15)


def _kkt_simplex(v, lb, y, tol=1e-12):
    # y - v = -mu + nu with nu >= 0 supported where y == lb and mu constant
    g = v - y
    free = y > lb + tol
    mu = g[free].mean() if free.any() else g.max()
    assert np.allclose(g[free], mu, atol=1e-10)
    assert np.all(g[~free] <= mu + 1e-10)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(-3, 3), min_size=2, max_size=8), st.floats(0, 0.1))
def test_simplex_projection_kkt(v, eps):
    v = np.array(v)
    lb = np.full(v.size, eps)
    y = project_simplex_lb(v, lb)
    assert abs(y.sum() - 1) <= 1e-12 and np.all(y >= lb - 1e-15)
    _kkt_simplex(v, lb, y)


def test_empty_sets_raise():
    with pytest.raises(EmptyFeasibleSet):
        project(FirstStage([5, 5], [0, 0], [0, 0], [0.5, 0.5]), box_spec(demand=20.0))
    with pytest.raises(EmptyFeasibleSet):
        project_simplex_lb(np.array([0.5, 0.5]), np.array([0.6, 0.6]))


def _raw(rng, spec):
    g = spec.n_gens
    scale = np.maximum(spec.p0_upper, 1.0)
    return FirstStage(rng.normal(0.5, 1.0, g) * scale, rng.normal(0, 0.3, g) * scale,
                      rng.normal(0, 0.3, g) * scale, rng.normal(0.3, 0.5, g))


def test_projection_matches_qp_oracle(six_bus, rng):
    _, _, spec, _ = six_bus
    for _ in range(10):
        x = _raw(rng, spec)
        ref = qp_projection(spec, x.to_vector())
        for method in ("dual", "dykstra"):
            y = project(x, spec, method=method)
            validate(y, spec)
            np.testing.assert_allclose(y.to_vector(), ref, atol=1e-6 * (1 + np.abs(ref).max()))


def test_projection_idempotent_and_nonexpansive(six_bus, rng):
    _, _, spec, _ = six_bus
    for _ in range(50):
        a, b = _raw(rng, spec), _raw(rng, spec)
        pa, pb = project(a, spec), project(b, spec)
        assert np.abs(project(pa, spec).to_vector() - pa.to_vector()).max() <= 1e-9
        gap = np.linalg.norm(pa.to_vector() - pb.to_vector())
        assert gap <= np.linalg.norm(a.to_vector() - b.to_vector()) * (1 + 1e-9) + 1e-9


def test_projection_beats_random_feasible(six_bus, rng):
    _, _, spec, _ = six_bus
    x = _raw(rng, spec)
    d = np.linalg.norm(x.to_vector() - project(x, spec).to_vector())
    others = [np.linalg.norm(x.to_vector() - random_feasible(spec, rng).to_vector()) for _ in range(300)]
    assert d <= min(others)


def test_fixed_participation_respected():
    from satopf.casefile import load_case

    net, _, _ = load_case("six_bus_case2")
    spec = FeasibleSetSpec.from_network(net)
    x = project(FirstStage([80, 80, 80], [0, 5, 0], [0, 5, 0], [0.2, 0.6, 0.2]), spec)
    assert x.alpha[1] == pytest.approx(0.1 * spec.epsilon, abs=1e-15)
    assert x.r_plus[1] == 0.0 and x.r_minus[1] == 0.0
    assert is_feasible(x, spec)


def test_random_and_start_points_feasible(six_bus, rng):
    _, _, spec, _ = six_bus
    validate(feasible_start(spec), spec)
    for _ in range(100):
        validate(random_feasible(spec, rng), spec)


def test_vector_round_trip(rng):
    x = FirstStage(*rng.normal(size=(4, 3)))
    assert FirstStage.from_vector(x.to_vector()).allclose(x, atol=0)
    assert FirstStage.from_dict(x.to_dict()).allclose(x, atol=0)
