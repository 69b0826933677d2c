"""Independent reference computations used by the tests.

None of these call into the code paths they check: the slack oracle sorts
breakpoints instead of bisecting, the dispatch oracle is an LP, and the
projection oracle is a generic QP.
"""

from __future__ import annotations

import cvxpy as cp
import numpy as np
from scipy.optimize import linprog


def breakpoint_slack(p0, alpha, sigma_d, p_min, p_max, demand):
    """Exact slack of the clipped-affine balance by walking sorted breakpoints.

    Total output ``P(s) = sum_i clip(p0_i + alpha_i (sigma_d + s), lo_i, hi_i)``
    is piecewise linear in ``s`` with kinks where a unit hits a limit.
    """
    p0, alpha, p_min, p_max = map(np.asarray, (p0, alpha, p_min, p_max))
    act = alpha > 0
    kinks = np.concatenate(
        [(p_min[act] - p0[act]) / alpha[act], (p_max[act] - p0[act]) / alpha[act]]
    ) - sigma_d
    kinks = np.unique(kinks)

    def total(s):
        return np.clip(p0 + alpha * (sigma_d + s), p_min, p_max).sum()

    target = demand + sigma_d
    vals = np.array([total(s) for s in kinks])
    # segment [k, k+1] where the total crosses the target, with strictly positive slope
    for k in range(len(kinks) - 1):
        a, b = vals[k], vals[k + 1]
        if a <= target <= b and b > a:
            return kinks[k] + (target - a) * (kinks[k + 1] - kinks[k]) / (b - a)
    raise ValueError("target outside the attainable range")


def lp_dispatch(net, threshold_frac=0.95, p_upper=None):
    """Deterministic economic dispatch ``min c.p`` with flows inside ``delta f_max``.

    Returns ``(cost, p)``. Wind units have zero energy cost and an upper
    bound of their mean capacity.
    """
    c = np.where(net.is_wind, 0.0, net.unit_cost)
    hi = np.asarray(net.p_max if p_upper is None else p_upper, dtype=float)
    bounds = list(zip(np.zeros(net.n_gens), hi))
    m = net.gen_ptdf
    base = net.injection(np.zeros(net.n_gens)) @ net.ptdf.T
    lim = threshold_frac * net.flow_limit
    a_ub = np.vstack([m, -m])
    b_ub = np.concatenate([lim - base, lim + base])
    res = linprog(c, A_ub=a_ub, b_ub=b_ub, A_eq=np.ones((1, net.n_gens)),
                  b_eq=[net.total_demand], bounds=bounds, method="highs")
    assert res.status == 0, res.message
    return float(res.fun), res.x


def qp_projection(spec, v):
    """Euclidean projection of the stacked vector ``v`` onto X by a QP solve."""
    g = spec.n_gens
    y = cp.Variable(4 * g)
    p0, rp, rm, al = y[:g], y[g : 2 * g], y[2 * g : 3 * g], y[3 * g :]
    cons = [
        cp.sum(p0) == spec.demand,
        p0 >= spec.p0_lower, p0 <= spec.p0_upper,
        rp >= 0, rp <= spec.r_plus_max, rm >= 0, rm <= spec.r_minus_max,
        al >= spec.alpha_lower, al <= spec.alpha_upper, cp.sum(al) == 1,
    ]
    reg = np.flatnonzero(np.isfinite(spec.cap_upper))
    cons += [p0[reg] + rp[reg] <= spec.cap_upper[reg], p0[reg] - rm[reg] >= spec.cap_lower[reg]]
    cp.Problem(cp.Minimize(cp.sum_squares(y - v)), cons).solve(
        solver="CLARABEL", tol_gap_abs=1e-12, tol_gap_rel=1e-12, tol_feas=1e-12
    )
    return np.asarray(y.value)


def central_difference(f, x, rel_h=1e-6):
    """Coordinatewise central differences with step ``rel_h * max(|x_i|, 1)``."""
    x = np.asarray(x, dtype=float)
    out = np.empty_like(x)
    for i in range(x.size):
        h = rel_h * max(abs(x[i]), 1.0)
        e = np.zeros_like(x)
        e[i] = h
        out[i] = (f(x + e) - f(x - e)) / (2 * h)
    return out


def smooth_clip_reference(x, lo, hi, tau):
    """Five-piece smoothed clip written out piece by piece (scalar loop)."""
    out = []
    for v in np.atleast_1d(x):
        if v < lo - tau:
            out.append(lo)
        elif v <= lo + tau:
            out.append(lo + (v - lo + tau) ** 2 / (4 * tau))
        elif v < hi - tau:
            out.append(v)
        elif v <= hi + tau:
            out.append(hi - (v - hi - tau) ** 2 / (4 * tau))
        else:
            out.append(hi)
    return np.array(out)


def kink_clearance(net, x, solution, coeffs, h):
    """Smallest distance, in units of the relevant width, to any kink.

    Returns ``min(d_sat / tau_sat, d_pos / tau_pos, d_line / h)`` where each
    ``d`` is the distance of the relevant argument to the nearest piece
    boundary of its smoothing or penalty function.
    """
    pt, lo, hi, tau = solution.p_target, solution.p_min, solution.p_max, solution.tau
    edges = np.stack([lo - tau, lo + tau, hi - tau, hi + tau])
    d_sat = np.min(np.abs(pt - edges) / tau)
    u = solution.p - x.p0 - x.r_plus
    v = x.p0 - solution.p - x.r_minus
    d_pos = min(np.min(np.abs(u)), np.min(np.abs(v))) / coeffs.tau_pos
    d_line = np.min(np.abs(np.abs(solution.flows) - coeffs.line_threshold)) / h
    return min(d_sat, d_pos, d_line)
