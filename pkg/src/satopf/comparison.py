"""Affine-policy comparison models solved as scenario SAAs.

Both models keep every unit on the pure affine response
``p_i = p0_i + alpha_i Sigma_d`` and penalize reserve exceedance with exact
positive parts and line flows beyond ``delta f_max`` with a squared hinge.

* CAP adds per-unit chance constraints on the generation limits, reformulated
  exactly for Normal uncertainty (second-order cone for wind units, whose
  capacity is itself random).
* GP instead adds ``gamma_gen max(0, p - p_max(w), p_min(w) - p)^2``.

The SAAs are convex and are handed to cvxpy.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import cvxpy as cp
import numpy as np
from scipy.stats import norm

from .costs import CostCoefficients, CostConfig
from .errors import EmptyFeasibleSet, SolverFailure
from .first_stage import FeasibleSetSpec, FirstStage, project
from .network import Network, line_flows, solve_dc_flow
from .recourse import scenario_limits
from .uncertainty import Scenario, ScenarioSet, UncertaintyModel, sample, sigma_d_stats

__all__ = [
    "CapConstraint",
    "AffineRecourse",
    "cap_reformulate",
    "cap_constraints",
    "affine_evaluate",
    "saa_objective",
    "solve_cap",
    "solve_gp",
    "SAA_STREAM",
]

logger = logging.getLogger(__name__)

SAA_STREAM = 201
_SOLVERS = ("CLARABEL", "ECOS", "SCS")


@dataclass(frozen=True)
class CapConstraint:
    """Deterministic equivalent of the two chance constraints of one unit.

    Upper: ``p0 + z sqrt(alpha^2 sigma_sd^2 + sigma_w^2) <= p_max`` (``sigma_w``
    is zero for regular units, giving ``p0 + z alpha sigma_sd <= p_max``).
    Lower: ``p0 - z alpha sigma_sd >= p_min``.
    """

    z: float
    sigma_sd: float
    sigma_w: float
    p_min: float
    p_max: float

    def upper_margin(self, alpha):
        alpha = np.asarray(alpha, dtype=float)
        return self.z * np.sqrt((alpha * self.sigma_sd) ** 2 + self.sigma_w**2)

    def lower_margin(self, alpha):
        return self.z * np.asarray(alpha, dtype=float) * self.sigma_sd

    def satisfied(self, p0: float, alpha: float, tol: float = 1e-9) -> bool:
        return bool(
            p0 + self.upper_margin(alpha) <= self.p_max + tol
            and p0 - self.lower_margin(alpha) >= self.p_min - tol
        )

    def max_alpha(self, p0: float) -> float:
        """Largest participation satisfying both sides at nominal output ``p0``."""
        if self.z <= 0 or self.sigma_sd == 0:
            return np.inf if self.satisfied(p0, 0.0) else -np.inf
        lo_room = (p0 - self.p_min) / (self.z * self.sigma_sd)
        up_room2 = ((self.p_max - p0) / self.z) ** 2 - self.sigma_w**2
        if self.p_max - p0 < 0 or up_room2 < 0:
            return -np.inf
        return float(min(lo_room, np.sqrt(up_room2) / self.sigma_sd))


def cap_reformulate(
    p_min: float, p_max: float, eps_gen: float, sigma_sd: float, sigma_w: float = 0.0
) -> CapConstraint:
    if not 0 < eps_gen < 1:
        raise ValueError("eps_gen must lie in (0, 1)")
    return CapConstraint(float(norm.ppf(1.0 - eps_gen)), sigma_sd, sigma_w, p_min, p_max)


def cap_constraints(net: Network, model: UncertaintyModel, eps_gen: float) -> list[CapConstraint]:
    _, s_sd = sigma_d_stats(model)
    sw = np.zeros(net.n_gens)
    if net.wind_index.size:
        sw[net.wind_index] = model.wind_sigma * model.component_std_factor()
    return [
        cap_reformulate(float(net.p_min[i]), float(net.p_max[i]), eps_gen, s_sd, float(sw[i]))
        for i in range(net.n_gens)
    ]


# --------------------------------------------------------------------------
# affine recourse evaluation


@dataclass(frozen=True, eq=False)
class AffineRecourse:
    p: np.ndarray  # (N, G)
    flows: np.ndarray  # (N, E)
    theta: np.ndarray | None
    reserve_up: np.ndarray
    reserve_down: np.ndarray
    line: np.ndarray
    gen_penalty: np.ndarray
    gen_violation: np.ndarray  # any unit outside its limits

    @property
    def cost(self) -> np.ndarray:
        return self.reserve_up + self.reserve_down + self.line + self.gen_penalty


def _as_set(scenarios) -> ScenarioSet:
    if isinstance(scenarios, ScenarioSet):
        return scenarios
    if isinstance(scenarios, Scenario):
        return ScenarioSet.from_scenarios([scenarios])
    return ScenarioSet.from_scenarios(list(scenarios))


def affine_evaluate(
    net: Network,
    x: FirstStage,
    scenarios,
    costs: CostConfig | CostCoefficients | None = None,
    gamma_gen: float | None = None,
    with_angles: bool = False,
    tol: float = 1e-9,
) -> AffineRecourse:
    """Outputs, flows and penalty terms under the pure affine policy."""
    coeffs = costs if isinstance(costs, CostCoefficients) else CostCoefficients.build(
        net, costs or CostConfig()
    )
    ss = _as_set(scenarios)
    sd = ss.sigma_d
    p = x.p0 + np.outer(sd, x.alpha)
    inj = net.injection(p, ss.load_fluct)
    theta = None
    if with_angles:
        theta = solve_dc_flow(net, inj)
        flows = line_flows(net, theta)
    else:
        flows = inj @ net.ptdf.T
    up = np.maximum(p - x.p0 - x.r_plus, 0.0) @ coeffs.pen_up
    down = np.maximum(x.p0 - p - x.r_minus, 0.0) @ coeffs.pen_down
    excess = np.maximum(np.abs(flows) - coeffs.line_threshold, 0.0)
    line = coeffs.gamma_line * (excess**2).sum(axis=1)
    p_min, p_max = scenario_limits(net, ss)
    over = np.maximum(np.maximum(p - p_max, p_min - p), 0.0)
    gg = 0.0 if gamma_gen is None else gamma_gen
    gen_pen = gg * (over**2).sum(axis=1)
    viol = np.any(over > tol * (1.0 + np.abs(p_max)), axis=1)
    return AffineRecourse(p, flows, theta, up, down, line, gen_pen, viol)


def saa_objective(
    net: Network,
    costs: CostConfig,
    x: FirstStage,
    scenarios: ScenarioSet,
    gamma_gen: float | None = None,
) -> float:
    """Sample-average objective of the affine models (numpy evaluation)."""
    coeffs = CostCoefficients.build(net, costs)
    rec = affine_evaluate(net, x, scenarios, coeffs, gamma_gen)
    gen, res = coeffs.first_stage(x.p0, x.r_plus, x.r_minus)
    return gen + res + float(rec.cost.mean())


# --------------------------------------------------------------------------
# SAA models


def _scenario_set(model, scenarios, seed) -> ScenarioSet:
    if isinstance(scenarios, ScenarioSet):
        return scenarios
    return sample(model, seed, int(scenarios), stream=SAA_STREAM)


def _build_saa(net, costs, spec, ss, gamma_gen):
    coeffs = CostCoefficients.build(net, costs)
    g, n = net.n_gens, len(ss)
    p0 = cp.Variable(g, name="p0")
    rp = cp.Variable(g, name="r_plus")
    rm = cp.Variable(g, name="r_minus")
    al = cp.Variable(g, name="alpha")

    cons = [
        cp.sum(p0) == spec.demand,
        p0 >= spec.p0_lower,
        p0 <= spec.p0_upper,
        rp >= 0,
        rm >= 0,
        rp <= spec.r_plus_max,
        rm <= spec.r_minus_max,
        al >= spec.alpha_lower,
        al <= spec.alpha_upper,
        cp.sum(al) == 1,
    ]
    reg = np.flatnonzero(np.isfinite(spec.cap_upper))
    if reg.size:
        cons += [
            p0[reg] + rp[reg] <= spec.cap_upper[reg],
            p0[reg] - rm[reg] >= spec.cap_lower[reg],
        ]

    sd = ss.sigma_d[:, None]
    ones = np.ones((n, 1))
    row = lambda v, k: cp.reshape(v, (1, k), order="C")  # noqa: E731
    dev = sd @ row(al, g)  # alpha_i Sigma_d, (N, G)
    obj = coeffs.energy @ p0 + coeffs.reserve @ (rp + rm)
    pen = cp.sum(cp.pos(dev - ones @ row(rp, g)) @ coeffs.pen_up)
    pen += cp.sum(cp.pos(-dev - ones @ row(rm, g)) @ coeffs.pen_down)

    m = np.asarray(net.gen_ptdf)
    e = net.n_lines
    const = net.injection(np.zeros((n, g)), ss.load_fluct) @ net.ptdf.T  # (N, E)
    flows = ones @ row(m @ p0, e) + sd @ row(m @ al, e) + const
    if coeffs.gamma_line > 0 and e:
        excess = cp.pos(cp.abs(flows) - np.broadcast_to(coeffs.line_threshold, (n, e)))
        pen += coeffs.gamma_line * cp.sum(cp.square(excess))
    if gamma_gen is not None and gamma_gen > 0:
        p_min, p_max = scenario_limits(net, ss)
        p = ones @ row(p0, g) + dev
        over = cp.pos(cp.maximum(p - p_max, p_min - p))
        pen += gamma_gen * cp.sum(cp.square(over))
    obj = obj + pen / n
    return (p0, rp, rm, al), cons, obj


def _solve(variables, cons, obj, spec: FeasibleSetSpec, what: str) -> FirstStage:
    prob = cp.Problem(cp.Minimize(obj), cons)
    last = None
    for solver in _SOLVERS:
        if solver not in cp.installed_solvers():
            continue
        try:
            prob.solve(solver=solver)
        except cp.error.SolverError as exc:
            last = exc
            continue
        if prob.status in (cp.OPTIMAL, cp.OPTIMAL_INACCURATE):
            break
        if prob.status in (cp.INFEASIBLE, cp.INFEASIBLE_INACCURATE):
            raise EmptyFeasibleSet(f"{what}: feasible set is empty")
    else:
        raise SolverFailure(f"{what}: no solver succeeded ({last})")
    if prob.status not in (cp.OPTIMAL, cp.OPTIMAL_INACCURATE):
        raise SolverFailure(f"{what}: solver status {prob.status}")
    p0, rp, rm, al = (np.asarray(v.value, dtype=float) for v in variables)
    # clean solver round-off so the point validates exactly
    return project(FirstStage(p0, np.maximum(rp, 0), np.maximum(rm, 0), al), spec)


def solve_cap(
    net: Network,
    model: UncertaintyModel,
    costs: CostConfig,
    spec: FeasibleSetSpec,
    scenarios: ScenarioSet | int = 500,
    eps_gen: float | None = None,
    gamma_line: float | None = None,
    seed: int = 0,
) -> FirstStage:
    """CAP model: chance-constrained affine policy over a scenario SAA."""
    eps_gen = costs.eps_gen if eps_gen is None else eps_gen
    if gamma_line is not None:
        costs = costs.with_(gamma_line=gamma_line)
    ss = _scenario_set(model, scenarios, seed)
    variables, cons, obj = _build_saa(net, costs, spec, ss, None)
    p0, _, _, al = variables
    for i, c in enumerate(cap_constraints(net, model, eps_gen)):
        if c.sigma_w > 0:
            cons.append(p0[i] + c.z * cp.norm(cp.hstack([c.sigma_sd * al[i], c.sigma_w])) <= c.p_max)
        else:
            cons.append(p0[i] + c.z * c.sigma_sd * al[i] <= c.p_max)
        cons.append(p0[i] - c.z * c.sigma_sd * al[i] >= c.p_min)
    return _solve(variables, cons, obj, spec, "CAP")


def solve_gp(
    net: Network,
    model: UncertaintyModel,
    costs: CostConfig,
    spec: FeasibleSetSpec,
    scenarios: ScenarioSet | int = 500,
    gamma_gen: float | None = None,
    gamma_line: float | None = None,
    seed: int = 0,
) -> FirstStage:
    """GP model: affine policy with a squared generator-limit violation penalty."""
    gamma_gen = costs.gamma_gen if gamma_gen is None else gamma_gen
    if gamma_line is not None:
        costs = costs.with_(gamma_line=gamma_line)
    ss = _scenario_set(model, scenarios, seed)
    variables, cons, obj = _build_saa(net, costs, spec, ss, gamma_gen)
    return _solve(variables, cons, obj, spec, "GP")
