"""Second-stage response under reserve saturation.

For first-stage ``(p0, r+, r-, alpha)`` and a scenario, target levels
``pT = p0 + alpha (Sigma_d + s)`` are clipped to the scenario's generation
limits, either exactly (``mode="exact"``) or through the C1 five-piece
smoothing ``g_tau`` (``mode="smooth"``). The scalar slack ``s`` is the root of
the monotone total-balance residual and is found by bisection from the
closed-form brackets. Everything is vectorized over a leading scenario axis.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .costs import CostCoefficients, CostConfig
from .errors import BisectionStall, OverlappingSmoothing, ScenarioInfeasible
from .first_stage import FirstStage
from .network import Network, line_flows, solve_dc_flow
from .uncertainty import Scenario, ScenarioSet

__all__ = [
    "SmoothingParams",
    "FeasibilityInterval",
    "CostTerms",
    "RecourseSolution",
    "RecourseBatch",
    "saturate",
    "smooth_saturate",
    "smooth_saturate_grad",
    "softplus",
    "softplus_grad",
    "smooth_negpart",
    "scenario_limits",
    "feasibility_interval",
    "solve_recourse",
    "solve_recourse_batch",
    "recourse_cost",
    "cost_terms",
]

INTERIOR_MARGIN = 1e-12
MAX_BISECTIONS = 200


@dataclass(frozen=True)
class SmoothingParams:
    tau_sat: float = 1e-4  # fraction of each unit's (p_max(w) - p_min(w))
    tau_pos: float = 1e-4

    def __post_init__(self):
        if not (self.tau_sat > 0 and self.tau_pos > 0):
            raise ValueError("smoothing widths must be positive")

    @classmethod
    def from_costs(cls, costs: CostConfig) -> "SmoothingParams":
        return cls(costs.tau_sat, costs.tau_pos)

    def widths(self, p_min: np.ndarray, p_max: np.ndarray) -> np.ndarray:
        return self.tau_sat * (p_max - p_min)


@dataclass(frozen=True)
class FeasibilityInterval:
    lower: float
    upper: float

    def contains(self, value: float, margin: float = INTERIOR_MARGIN) -> bool:
        return self.lower + margin < value < self.upper - margin

    @property
    def width(self) -> float:
        return self.upper - self.lower


# --------------------------------------------------------------------------
# elementary maps


def saturate(p_target, p_min, p_max):
    """Exact saturation: the median of target and the two limits."""
    return np.minimum(np.maximum(p_target, p_min), p_max)


def _gsat(x, lo, hi, tau):
    x, lo, hi, tau = np.broadcast_arrays(*(np.asarray(a, dtype=float) for a in (x, lo, hi, tau)))
    out = np.clip(x, lo, hi)
    sm = tau > 0
    if np.any(sm):
        t = np.where(sm, tau, 1.0)
        low = sm & (x >= lo - t) & (x <= lo + t)
        high = sm & (x >= hi - t) & (x <= hi + t)
        out = np.where(low, lo + (x - (lo - t)) ** 2 / (4 * t), out)
        out = np.where(high, hi - (x - (hi + t)) ** 2 / (4 * t), out)
    return out


def _gsat_grad(x, lo, hi, tau):
    x, lo, hi, tau = np.broadcast_arrays(*(np.asarray(a, dtype=float) for a in (x, lo, hi, tau)))
    out = ((x > lo) & (x < hi)).astype(float)
    sm = tau > 0
    if np.any(sm):
        t = np.where(sm, tau, 1.0)
        low = sm & (x >= lo - t) & (x <= lo + t)
        high = sm & (x >= hi - t) & (x <= hi + t)
        out = np.where(sm & ((x < lo - t) | (x > hi + t)), 0.0, out)
        out = np.where(sm & (x > lo + t) & (x < hi - t), 1.0, out)
        out = np.where(low, (x - (lo - t)) / (2 * t), out)
        out = np.where(high, ((hi + t) - x) / (2 * t), out)
    return out


def _check_overlap(lo, hi, tau):
    if np.any(np.asarray(hi) - np.asarray(lo) <= 2 * np.asarray(tau)):
        raise OverlappingSmoothing("smoothing pieces overlap: need x_upper - x_lower > 2 tau")


def smooth_saturate(x, x_lower, x_upper, tau):
    """C1 approximation of ``clip(x, x_lower, x_upper)`` with kink width ``tau``."""
    _check_overlap(x_lower, x_upper, tau)
    return _gsat(x, x_lower, x_upper, tau)


def smooth_saturate_grad(x, x_lower, x_upper, tau):
    _check_overlap(x_lower, x_upper, tau)
    return _gsat_grad(x, x_lower, x_upper, tau)


def softplus(z, tau_pos):
    """``tau log(1 + exp(z / tau))``, evaluated without overflow."""
    z = np.asarray(z, dtype=float)
    return np.maximum(z, 0.0) + tau_pos * np.log1p(np.exp(-np.abs(z) / tau_pos))


def softplus_grad(z, tau_pos):
    return expit(np.asarray(z, dtype=float) / tau_pos)


def smooth_negpart(z, tau_pos):
    """Smooth ``min(z, 0)``: ``-softplus(-z)``."""
    return -softplus(-np.asarray(z, dtype=float), tau_pos)


# --------------------------------------------------------------------------
# scenario data


def _as_set(scenarios) -> ScenarioSet:
    if isinstance(scenarios, ScenarioSet):
        return scenarios
    if isinstance(scenarios, Scenario):
        return ScenarioSet.from_scenarios([scenarios])
    return ScenarioSet.from_scenarios(list(scenarios))


def scenario_limits(net: Network, scenarios: ScenarioSet) -> tuple[np.ndarray, np.ndarray]:
    """Per-scenario generation limits ``(p_min(w), p_max(w))``, each ``(N, G)``."""
    n = len(scenarios)
    p_min = np.broadcast_to(net.p_min, (n, net.n_gens)).copy()
    p_max = np.broadcast_to(net.p_max, (n, net.n_gens)).copy()
    if net.wind_index.size:
        p_max[:, net.wind_index] = np.maximum(scenarios.wind_cap, p_min[:, net.wind_index])
    return p_min, p_max


def _taus(mode: str, smoothing: SmoothingParams | None, p_min, p_max):
    if mode == "exact":
        return np.zeros_like(p_min)
    if mode != "smooth":
        raise ValueError(f"mode must be 'exact' or 'smooth', got {mode!r}")
    smoothing = smoothing or SmoothingParams()
    if smoothing.tau_sat >= 0.5:  # widths are relative, so this is the overlap condition
        raise OverlappingSmoothing(f"relative smoothing width {smoothing.tau_sat} must be below 0.5")
    return smoothing.widths(p_min, p_max)


def _interval_arrays(net, x, sigma_d, p_min, p_max, tau):
    res = x.alpha > 0
    fixed_out = _gsat(x.p0[None, :], p_min, p_max, tau)
    lower = np.where(res, p_min, fixed_out).sum(axis=1) - net.total_demand
    upper = np.where(res, p_max, fixed_out).sum(axis=1) - net.total_demand
    return lower, upper


def feasibility_interval(
    net: Network,
    x: FirstStage,
    scenario: Scenario,
    mode: str = "exact",
    smoothing: SmoothingParams | None = None,
) -> FeasibilityInterval:
    """Interval of net demand fluctuations for which the recourse is feasible.

    Units with zero participation contribute their clamped nominal output
    (the median of ``p0`` and the limits; its smoothed value in smooth mode).
    """
    ss = _as_set(scenario)
    p_min, p_max = scenario_limits(net, ss)
    tau = _taus(mode, smoothing, p_min, p_max)
    lo, hi = _interval_arrays(net, x, ss.sigma_d, p_min, p_max, tau)
    return FeasibilityInterval(float(lo[0]), float(hi[0]))


# --------------------------------------------------------------------------
# slack search


def _residual(s, p0, alpha, sigma_d, p_min, p_max, tau, target):
    pt = p0 + alpha * (sigma_d + s)[:, None]
    return _gsat(pt, p_min, p_max, tau).sum(axis=1) - target


def default_tol_s(net: Network) -> float:
    return 1e-9 * (net.total_demand + 1.0)


def _brackets(x, sigma_d, p_min, p_max, tau, delta_d):
    res = x.alpha > 0
    a = np.where(res, x.alpha, np.nan)
    with np.errstate(invalid="ignore", divide="ignore"):
        up = np.nanmax((p_max + tau - x.p0) / a, axis=1) - sigma_d
        down = np.nanmin((p_min - tau - x.p0) / a, axis=1) - sigma_d
    # the total output grows at most at rate sum(alpha) in s (one on X; off X
    # only when a caller perturbs alpha, e.g. finite differences)
    near = -delta_d / x.alpha.sum()
    s_lo = np.where(delta_d < 0, near, down)
    s_hi = np.where(delta_d < 0, up, near)
    return np.minimum(s_lo, s_hi), np.maximum(s_lo, s_hi)


def solve_slack(
    net: Network,
    x: FirstStage,
    sigma_d: np.ndarray,
    p_min: np.ndarray,
    p_max: np.ndarray,
    tau: np.ndarray,
    tol_s: float,
    s_lo: np.ndarray | None = None,
    s_hi: np.ndarray | None = None,
) -> np.ndarray:
    """Bisection for the slack of every row; rows must be strictly feasible.

    Brackets default to the closed-form ones chosen by the sign of the
    residual at ``s = 0``; explicit brackets may be supplied instead.
    """
    target = net.total_demand + sigma_d
    args = (x.p0, x.alpha, sigma_d, p_min, p_max, tau, target)
    delta_d = _residual(np.zeros_like(sigma_d), *args)
    if s_lo is None or s_hi is None:
        lo, hi = _brackets(x, sigma_d, p_min, p_max, tau, delta_d)
    else:
        lo, hi = np.asarray(s_lo, dtype=float).copy(), np.asarray(s_hi, dtype=float).copy()
    r_lo = _residual(lo, *args)
    r_hi = _residual(hi, *args)
    if np.any(r_lo > tol_s) or np.any(r_hi < -tol_s) or not np.all(np.isfinite(lo + hi)):
        raise BisectionStall("slack bracket does not enclose a root")
    done = delta_d == 0
    for _ in range(MAX_BISECTIONS):
        width = hi - lo
        conv = done | (width <= 1e-13 * (1.0 + np.abs(lo) + np.abs(hi)))
        if np.all(conv):
            break
        mid = 0.5 * (lo + hi)
        r = _residual(mid, *args)
        left = (r <= 0) & ~conv
        right = (r > 0) & ~conv
        lo = np.where(left, mid, lo)
        r_lo = np.where(left, r, r_lo)
        hi = np.where(right, mid, hi)
        r_hi = np.where(right, r, r_hi)
    span = r_hi - r_lo
    with np.errstate(invalid="ignore", divide="ignore"):
        frac = np.where(span > 0, -r_lo / span, 0.5)
    s = np.where(done, 0.0, lo + np.clip(frac, 0.0, 1.0) * (hi - lo))
    final = _residual(s, *args)
    if np.any(np.abs(final) > tol_s):
        raise BisectionStall(f"bisection residual {float(np.abs(final).max()):.3g} above {tol_s:.3g}")
    return s


# --------------------------------------------------------------------------
# solutions and costs


@dataclass(frozen=True, eq=False)
class CostTerms:
    deviation: float
    reserve_up: float
    reserve_down: float
    line: float

    @property
    def total(self) -> float:
        return self.deviation + self.reserve_up + self.reserve_down + self.line


def cost_terms(
    x: FirstStage,
    p: np.ndarray,
    flows: np.ndarray,
    coeffs: CostCoefficients,
    mode: str,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Reserve-up, reserve-down and line penalties per scenario (rows of ``p``)."""
    p = np.atleast_2d(p)
    flows = np.atleast_2d(flows)
    u = p - x.p0 - x.r_plus
    v = x.p0 - p - x.r_minus
    if mode == "smooth":
        up = softplus(u, coeffs.tau_pos) @ coeffs.pen_up
        down = softplus(v, coeffs.tau_pos) @ coeffs.pen_down
    else:
        up = np.maximum(u, 0.0) @ coeffs.pen_up
        down = np.maximum(v, 0.0) @ coeffs.pen_down
    excess = np.maximum(np.abs(flows) - coeffs.line_threshold, 0.0)
    line = coeffs.gamma_line * (excess**2).sum(axis=1)
    return up, down, line


@dataclass(frozen=True, eq=False)
class RecourseBatch:
    """Recourse solutions for a batch; infeasible rows hold NaN."""

    mode: str
    feasible: np.ndarray
    interval_lower: np.ndarray
    interval_upper: np.ndarray
    slack: np.ndarray
    p_target: np.ndarray
    p: np.ndarray
    p_min: np.ndarray
    p_max: np.ndarray
    tau: np.ndarray
    flows: np.ndarray
    reserve_up: np.ndarray
    reserve_down: np.ndarray
    line: np.ndarray
    sigma_d: np.ndarray

    @property
    def cost(self) -> np.ndarray:
        return self.reserve_up + self.reserve_down + self.line

    def __len__(self) -> int:
        return self.slack.size


def solve_recourse_batch(
    net: Network,
    x: FirstStage,
    scenarios,
    mode: str = "smooth",
    smoothing: SmoothingParams | None = None,
    costs: CostConfig | CostCoefficients | None = None,
    tol_s: float | None = None,
) -> RecourseBatch:
    ss = _as_set(scenarios)
    if isinstance(costs, CostCoefficients):
        coeffs = costs
    else:
        coeffs = CostCoefficients.build(net, costs or CostConfig())
    if smoothing is None:
        smoothing = SmoothingParams(coeffs.tau_sat, coeffs.tau_pos)
    tol_s = default_tol_s(net) if tol_s is None else tol_s
    p_min, p_max = scenario_limits(net, ss)
    tau = _taus(mode, smoothing, p_min, p_max)
    sd = ss.sigma_d
    lower, upper = _interval_arrays(net, x, sd, p_min, p_max, tau)
    feasible = (sd > lower + INTERIOR_MARGIN) & (sd < upper - INTERIOR_MARGIN)

    n, g = len(ss), net.n_gens
    slack = np.full(n, np.nan)
    pt = np.full((n, g), np.nan)
    p = np.full((n, g), np.nan)
    flows = np.full((n, net.n_lines), np.nan)
    up = np.full(n, np.nan)
    down = np.full(n, np.nan)
    line = np.full(n, np.nan)
    idx = np.flatnonzero(feasible)
    if idx.size:
        s = solve_slack(net, x, sd[idx], p_min[idx], p_max[idx], tau[idx], tol_s)
        pt_f = x.p0 + x.alpha * (sd[idx] + s)[:, None]
        p_f = _gsat(pt_f, p_min[idx], p_max[idx], tau[idx])
        inj = net.injection(p_f, ss.load_fluct[idx])
        fl = inj @ net.ptdf.T
        u, d, ln = cost_terms(x, p_f, fl, coeffs, mode)
        slack[idx], pt[idx], p[idx], flows[idx] = s, pt_f, p_f, fl
        up[idx], down[idx], line[idx] = u, d, ln
    return RecourseBatch(
        mode, feasible, lower, upper, slack, pt, p, p_min, p_max, tau, flows, up, down, line, sd
    )


@dataclass(frozen=True, eq=False)
class RecourseSolution:
    mode: str
    x: FirstStage
    scenario: Scenario
    interval: FeasibilityInterval
    slack: float
    p_target: np.ndarray
    p: np.ndarray
    p_min: np.ndarray
    p_max: np.ndarray
    tau: np.ndarray
    theta: np.ndarray
    flows: np.ndarray
    cost_terms: CostTerms

    @property
    def sigma_d(self) -> float:
        return self.scenario.sigma_d


def solve_recourse(
    net: Network,
    x: FirstStage,
    scenario: Scenario,
    mode: str = "smooth",
    smoothing: SmoothingParams | None = None,
    costs: CostConfig | CostCoefficients | None = None,
    tol_s: float | None = None,
) -> RecourseSolution:
    """Solve the second stage for one scenario.

    Raises :class:`ScenarioInfeasible` when the net demand fluctuation is not
    strictly inside the feasibility interval.
    """
    batch = solve_recourse_batch(net, x, scenario, mode, smoothing, costs, tol_s)
    interval = FeasibilityInterval(float(batch.interval_lower[0]), float(batch.interval_upper[0]))
    if not batch.feasible[0]:
        raise ScenarioInfeasible(float(batch.sigma_d[0]), interval)
    if isinstance(scenario, ScenarioSet):
        scenario = scenario[0]
    p = batch.p[0]
    theta = solve_dc_flow(net, net.injection(p, scenario.load_fluct))
    return RecourseSolution(
        mode=mode,
        x=x,
        scenario=scenario,
        interval=interval,
        slack=float(batch.slack[0]),
        p_target=batch.p_target[0],
        p=p,
        p_min=batch.p_min[0],
        p_max=batch.p_max[0],
        tau=batch.tau[0],
        theta=theta,
        flows=line_flows(net, theta),
        cost_terms=CostTerms(
            0.0, float(batch.reserve_up[0]), float(batch.reserve_down[0]), float(batch.line[0])
        ),
    )


def recourse_cost(solution: RecourseSolution, coeffs: CostCoefficients | None = None) -> float:
    """Second-stage cost; recomputed from outputs and flows when ``coeffs`` is given."""
    if coeffs is None:
        return solution.cost_terms.total
    up, down, line = cost_terms(solution.x, solution.p, solution.flows, coeffs, solution.mode)
    return float(up[0] + down[0] + line[0])
