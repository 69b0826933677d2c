import json

import jsonschema
import numpy as np
import pytest

from conftest import make_two_unit_network
from satopf.casefile import load_schema
from satopf.costs import CostConfig
from satopf.errors import ExcessiveInfeasibility
from satopf.evaluation import (
    CSV_COLUMNS,
    EvaluationReport,
    StudySpec,
    SweepRecord,
    logspace,
    monte_carlo_evaluate,
    pareto_front,
    pareto_sweep,
    read_records_json,
    select_best,
    write_records_csv,
    write_records_json,
)
from satopf.first_stage import FirstStage, feasible_start
from satopf.network import Generator, GeneratorKind, Line, Load, Network
from satopf.psg import PsgConfig
from satopf.uncertainty import ScenarioSet, UncertaintyModel


def fake(cost, viol, model="SA", rep=0):
    r = EvaluationReport(cost, cost, 0.0, 0.0, 0.0, 0.0, viol, None, None, 10, 0, 0, 0, "d", "full")
    return SweepRecord(model, 10.0, None, None, rep, rep, r)


def flat_model(net):
    return UncertaintyModel(np.zeros(len(net.loads)), net.p_max[net.wind_index], np.zeros(net.wind_index.size))


def test_violation_counting():
    net = make_two_unit_network(flow_limit=12.5)
    x = FirstStage([5.0, 5.0], [0, 0], [0, 0], [0.5, 0.5])
    ss = ScenarioSet(np.array([[0.0], [1.0], [2.0], [3.0]]), np.zeros((4, 0)))
    rep = monte_carlo_evaluate(net, flat_model(net), x, scenarios=ss)
    assert rep.joint_line_violation_prob == 0.25
    assert rep.sample_size == 4
    # 12.5 * 0.95 = 11.875, so the delta limit also catches the flow of 12
    rep = monte_carlo_evaluate(net, flat_model(net), x, scenarios=ss, violation_limit="delta")
    assert rep.joint_line_violation_prob == 0.5


def test_wind_utilization_ratio():
    gens = [
        Generator(0, GeneratorKind.REGULAR, 0.0, 50.0, 0, 50, 50, 50, 10.0),
        Generator(0, GeneratorKind.WIND, 0.0, 6.0, 0, 10, 10, 10, 0.0),
        Generator(0, GeneratorKind.WIND, 0.0, 4.0, 0, 10, 10, 10, 0.0),
    ]
    net = Network(2, [Line(0, 1, 1.0, 100.0)], gens, [Load(1, 20.0)])
    x = FirstStage([12.0, 5.0, 3.0], [0, 0, 0], [0, 0, 0], [1.0, 0.0, 0.0])
    ss = ScenarioSet(np.zeros((5, 1)), np.tile([6.0, 4.0], (5, 1)))
    rep = monte_carlo_evaluate(net, flat_model(net), x, scenarios=ss)
    assert rep.wind_utilization_pct == pytest.approx(80.0, rel=1e-14)


def test_report_identity_and_schema(six_bus):
    net, model, spec, costs = six_bus
    x = feasible_start(spec)
    rep = monte_carlo_evaluate(net, model, x, costs, n=5000, seed=1, include_affine_metrics=True)
    assert rep.expected_total_cost == (
        rep.first_stage_gen_cost + rep.first_stage_reserve_cost + rep.expected_penalty_cost
    )
    assert 0 <= rep.joint_line_violation_prob <= 1 and 0 <= rep.wind_utilization_pct <= 100
    assert 0 <= rep.affine_gen_violation_prob <= 1
    schema = load_schema("report")
    doc = {"schema_version": 1, "case": "x", "variant": "case1", "model": "SA", "report": rep.to_dict()}
    jsonschema.validate(doc, schema)
    assert EvaluationReport.from_dict(json.loads(json.dumps(rep.to_dict()))) == rep


def test_common_random_numbers(six_bus, rng):
    from satopf.first_stage import random_feasible

    net, model, spec, costs = six_bus
    a = monte_carlo_evaluate(net, model, feasible_start(spec), costs, n=3000, seed=9)
    b = monte_carlo_evaluate(net, model, random_feasible(spec, rng), costs, n=3000, seed=9)
    c = monte_carlo_evaluate(net, model, feasible_start(spec), costs, n=3000, seed=10)
    assert a.sample_digest == b.sample_digest != c.sample_digest


def test_too_many_infeasible(two_unit, x_half):
    ss = ScenarioSet(np.array([[30.0], [0.0]]), np.zeros((2, 0)))
    with pytest.raises(ExcessiveInfeasibility):
        monte_carlo_evaluate(two_unit, flat_model(two_unit), x_half, scenarios=ss)


def test_logspace_grid():
    g = logspace(1, 5, 17)
    assert len(g) == 17 and g[0] == 10.0 and g[-1] == pytest.approx(1e5, rel=1e-14)
    np.testing.assert_allclose(np.diff(np.log10(g)), 0.25, atol=1e-12)
    assert len(logspace(0, 5, 16)) == 16


def test_select_best_examples():
    a, b = fake(3049, 0.004), fake(3043, 0.0069)
    assert select_best([a, b]) is a
    assert select_best([a]) is a
    assert select_best([b]) is None
    assert select_best([]) is None
    failed = SweepRecord("GP", 10.0, 1.0, None, 0, 0, error="SolverFailure")
    assert select_best([failed, a]) is a


def test_pareto_front_monotone(rng):
    recs = [fake(float(c), float(v)) for c, v in zip(rng.uniform(100, 200, 60), rng.uniform(0, 0.1, 60))]
    front = pareto_front(recs)
    v = [r.report.joint_line_violation_prob for r in front]
    c = [r.report.expected_total_cost for r in front]
    assert v == sorted(v) and all(y < x for x, y in zip(c, c[1:]))
    for r in recs:
        dominated = any(
            f.report.expected_total_cost <= r.report.expected_total_cost
            and f.report.joint_line_violation_prob <= r.report.joint_line_violation_prob
            for f in front
        )
        assert dominated


def test_study_points_and_seeds():
    st = StudySpec(replicates=2)
    pts = st.points()
    assert len(pts) == 2 * (17 + 9 * 16 + 9 * 2)
    assert {st.seed_for(k) for k in range(2)} == {0, 1}


def test_small_sweep_round_trip(six_bus, tmp_path):
    net, model, spec, costs = six_bus
    st = StudySpec(
        models=("SA", "GP", "CAP"), gamma_line_sa=[100.0], gamma_line_cmp=[100.0], gamma_gen=[20.0],
        eps_gen=[1e-2], replicates=1, eval_n=2000, saa_scenarios=50,
        psg=PsgConfig(max_iters=20, eval_sample_size=100, eval_every=10),
    )
    recs = pareto_sweep(net, model, costs, spec, st)
    assert [r.model for r in recs] == ["SA", "GP", "CAP"]
    assert all(r.ok for r in recs)
    assert len({r.report.sample_digest for r in recs}) == 1
    write_records_json(recs, tmp_path / "r.json")
    jsonschema.validate(json.loads((tmp_path / "r.json").read_text()), load_schema("records"))
    back = read_records_json(tmp_path / "r.json")
    assert [b.to_dict() for b in back] == [r.to_dict() for r in recs]
    write_records_csv(recs, tmp_path / "r.csv")
    header = (tmp_path / "r.csv").read_text().splitlines()[0]
    assert header.split(",") == list(CSV_COLUMNS)


def test_sweep_records_failures(six_bus):
    net, model, spec, costs = six_bus
    st = StudySpec(models=("CAP",), gamma_line_cmp=[100.0], eps_gen=[1e-9], replicates=1,
                   eval_n=100, saa_scenarios=20)
    recs = pareto_sweep(net, model.scaled(20.0), costs, spec, st)
    assert len(recs) == 1 and not recs[0].ok and "EmptyFeasibleSet" in recs[0].error
