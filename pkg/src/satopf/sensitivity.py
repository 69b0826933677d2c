"""Stochastic gradients of the smoothed two-stage objective.

Differentiating the targets, the smoothed saturation and the total balance
with respect to ``q in {p0_l, alpha_l}`` gives, with ``g'_i`` the slope of the
smoothed saturation at the target and ``S = sum_i g'_i alpha_i``::

    ds/dp0_l    = -g'_l / S
    ds/dalpha_l = -g'_l (s + Sigma_d) / S
    dp_i/dq     = g'_i (dp0_i/dq + (s + Sigma_d) dalpha_i/dq + alpha_i ds/dq)

Angle sensitivities solve the reduced Laplacian with right-hand side
``dp/dq`` at the generator buses. The recourse solution does not depend on
the scheduled reserves; those enter the cost only through the reserve
exceedance penalties.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .costs import CostCoefficients, CostConfig
from .errors import DegenerateSensitivity
from .first_stage import FirstStage
from .network import Network, line_flows, solve_dc_flow
from .recourse import (
    RecourseSolution,
    SmoothingParams,
    _gsat_grad,
    solve_recourse,
    solve_recourse_batch,
    softplus_grad,
)
from .uncertainty import Scenario, ScenarioSet

__all__ = [
    "RecourseJacobian",
    "StochasticGradient",
    "recourse_jacobian",
    "stochastic_gradient",
    "batch_gradients",
    "sample_objective",
]

DEGENERACY_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class RecourseJacobian:
    """Partials w.r.t. ``q = (p0_0..p0_{G-1}, alpha_0..alpha_{G-1})`` (columns)."""

    d_target: np.ndarray  # (G, 2G)
    d_p: np.ndarray  # (G, 2G)
    d_s: np.ndarray  # (2G,)
    d_theta: np.ndarray  # (V, 2G)
    d_flows: np.ndarray  # (E, 2G)


@dataclass(frozen=True, eq=False)
class StochasticGradient:
    g_p0: np.ndarray
    g_rplus: np.ndarray
    g_rminus: np.ndarray
    g_alpha: np.ndarray

    def to_vector(self) -> np.ndarray:
        return np.concatenate([self.g_p0, self.g_rplus, self.g_rminus, self.g_alpha])

    @classmethod
    def from_vector(cls, v: np.ndarray) -> "StochasticGradient":
        return cls(*np.split(np.asarray(v, dtype=float), 4))


def _slopes(solution_p_target, p_min, p_max, tau, alpha):
    gp = _gsat_grad(solution_p_target, p_min, p_max, tau)
    denom = (gp * alpha).sum(axis=-1)
    return gp, denom


def recourse_jacobian(
    net: Network, x: FirstStage, scenario: Scenario, solution: RecourseSolution
) -> RecourseJacobian:
    if solution.mode != "smooth":
        raise ValueError("sensitivities are defined for smooth-mode solutions only")
    gp, denom = _slopes(solution.p_target, solution.p_min, solution.p_max, solution.tau, x.alpha)
    if denom < DEGENERACY_TOL:
        raise DegenerateSensitivity(
            "every participating unit is saturated; the slack sensitivity is undefined"
        )
    n = x.n_gens
    lever = solution.slack + scenario.sigma_d
    d_s = np.concatenate([-gp / denom, -gp * lever / denom])
    direct = np.hstack([np.eye(n), lever * np.eye(n)])
    d_target = direct + np.outer(x.alpha, d_s)
    d_p = gp[:, None] * d_target
    inj = net.gen_incidence @ d_p  # (V, 2G); columns sum to zero
    d_theta = solve_dc_flow(net, inj.T).T
    d_flows = line_flows(net, d_theta.T).T
    return RecourseJacobian(d_target, d_p, d_s, d_theta, d_flows)


def _coeffs(net, costs) -> CostCoefficients:
    if isinstance(costs, CostCoefficients):
        return costs
    return CostCoefficients.build(net, costs or CostConfig())


def stochastic_gradient(
    net: Network,
    x: FirstStage,
    scenario: Scenario,
    costs: CostConfig | CostCoefficients | None = None,
    smoothing: SmoothingParams | None = None,
    solution: RecourseSolution | None = None,
) -> StochasticGradient:
    """Gradient of ``first-stage cost + q(x, w)`` through the explicit Jacobian."""
    coeffs = _coeffs(net, costs)
    if solution is None:
        solution = solve_recourse(net, x, scenario, "smooth", smoothing, coeffs)
    jac = recourse_jacobian(net, x, scenario, solution)
    n = x.n_gens
    tp = coeffs.tau_pos
    su = softplus_grad(solution.p - x.p0 - x.r_plus, tp) * coeffs.pen_up
    sv = softplus_grad(x.p0 - solution.p - x.r_minus, tp) * coeffs.pen_down

    excess = np.maximum(np.abs(solution.flows) - coeffs.line_threshold, 0.0)
    dline_dflow = 2.0 * coeffs.gamma_line * excess * np.sign(solution.flows)
    line_grad = dline_dflow @ jac.d_flows  # (2G,)

    dq_dp = su - sv  # coefficient of dp_i/dq in the reserve penalties
    res_grad = dq_dp @ jac.d_p
    res_grad[:n] += -su + sv  # explicit p0 dependence of the exceedance arguments

    g_p0 = coeffs.energy + res_grad[:n] + line_grad[:n]
    g_alpha = res_grad[n:] + line_grad[n:]
    g_rplus = coeffs.reserve - su
    g_rminus = coeffs.reserve - sv
    return StochasticGradient(g_p0, g_rplus, g_rminus, g_alpha)


def batch_gradients(
    net: Network,
    x: FirstStage,
    scenarios: ScenarioSet,
    costs: CostConfig | CostCoefficients | None = None,
    smoothing: SmoothingParams | None = None,
    tol_s: float | None = None,
):
    """Per-scenario gradients in adjoint form.

    Returns ``(grads, values, usable)``: ``grads`` is ``(N, 4G)`` ordered like
    :meth:`FirstStage.to_vector`, ``values`` the sampled objective, and
    ``usable`` masks out infeasible or degenerate scenarios (their rows are
    NaN).
    """
    coeffs = _coeffs(net, costs)
    batch = solve_recourse_batch(net, x, scenarios, "smooth", smoothing, coeffs, tol_s)
    n_s, n = len(batch), x.n_gens
    grads = np.full((n_s, 4 * n), np.nan)
    values = np.full(n_s, np.nan)
    feas = batch.feasible
    idx = np.flatnonzero(feas)
    usable = np.zeros(n_s, dtype=bool)
    if idx.size == 0:
        return grads, values, usable
    pt, p = batch.p_target[idx], batch.p[idx]
    gp, denom = _slopes(pt, batch.p_min[idx], batch.p_max[idx], batch.tau[idx], x.alpha)
    ok = denom >= DEGENERACY_TOL
    tp = coeffs.tau_pos
    su = softplus_grad(p - x.p0 - x.r_plus, tp) * coeffs.pen_up
    sv = softplus_grad(x.p0 - p - x.r_minus, tp) * coeffs.pen_down
    flows = batch.flows[idx]
    excess = np.maximum(np.abs(flows) - coeffs.line_threshold, 0.0)
    psi = (2.0 * coeffs.gamma_line * excess * np.sign(flows)) @ net.gen_ptdf
    a = su - sv + psi
    safe = np.where(ok, denom, 1.0)
    abar = (a * gp * x.alpha).sum(axis=1) / safe
    core = gp * (a - abar[:, None])
    lever = batch.slack[idx] + batch.sigma_d[idx]
    g = np.hstack(
        [
            coeffs.energy + core - su + sv,
            coeffs.reserve - su,
            coeffs.reserve - sv,
            lever[:, None] * core,
        ]
    )
    gen_cost, res_cost = coeffs.first_stage(x.p0, x.r_plus, x.r_minus)
    v = gen_cost + res_cost + batch.cost[idx]
    keep = idx[ok]
    grads[keep] = g[ok]
    values[keep] = v[ok]
    usable[keep] = True
    return grads, values, usable


def sample_objective(
    net: Network,
    x: FirstStage,
    scenario: Scenario,
    costs: CostConfig | CostCoefficients | None = None,
    smoothing: SmoothingParams | None = None,
) -> float:
    """First-stage cost plus smooth-mode recourse cost for one scenario."""
    coeffs = _coeffs(net, costs)
    sol = solve_recourse(net, x, scenario, "smooth", smoothing, coeffs)
    gen, res = coeffs.first_stage(x.p0, x.r_plus, x.r_minus)
    return gen + res + sol.cost_terms.total
