"""First-stage decisions, the feasible set X, feasibility checks and projection.

X couples nominal outputs through a single balance equation and couples each
unit's nominal output with its reserves (regular units only). Participation
factors are independent of the power block, so

    Proj_X(p0, r+, r-, alpha) = (Proj_P(p0, r+, r-), Proj_A(alpha))

where ``P`` is the balance hyperplane intersected with the per-unit cells and
``A`` the participation simplex with lower bounds. ``Proj_P`` is computed
either by a scalar dual search on the balance multiplier (default, exact up to
floating point) or by Dykstra's alternating projections between the
balance/box block and the per-unit cells.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations

import numpy as np

from .errors import EmptyFeasibleSet, InfeasibleFirstStage
from .network import Network

__all__ = [
    "FirstStage",
    "FeasibleSetSpec",
    "validate",
    "project",
    "project_simplex_lb",
    "project_hyperplane_box",
    "project_cells",
    "random_feasible",
    "feasible_start",
]


@dataclass(frozen=True, eq=False)
class FirstStage:
    p0: np.ndarray
    r_plus: np.ndarray
    r_minus: np.ndarray
    alpha: np.ndarray

    def __post_init__(self):
        for name in ("p0", "r_plus", "r_minus", "alpha"):
            object.__setattr__(self, name, np.array(getattr(self, name), dtype=float).reshape(-1))
        n = self.p0.size
        if not (self.r_plus.size == self.r_minus.size == self.alpha.size == n):
            raise ValueError("first-stage blocks must have equal length")

    @property
    def n_gens(self) -> int:
        return self.p0.size

    def to_vector(self) -> np.ndarray:
        return np.concatenate([self.p0, self.r_plus, self.r_minus, self.alpha])

    @classmethod
    def from_vector(cls, v: np.ndarray) -> "FirstStage":
        v = np.asarray(v, dtype=float)
        if v.size % 4:
            raise ValueError("vector length must be a multiple of 4")
        p0, rp, rm, al = np.split(v, 4)
        return cls(p0, rp, rm, al)

    def to_dict(self) -> dict:
        return {k: getattr(self, k).tolist() for k in ("p0", "r_plus", "r_minus", "alpha")}

    @classmethod
    def from_dict(cls, d: dict) -> "FirstStage":
        return cls(d["p0"], d["r_plus"], d["r_minus"], d["alpha"])

    def allclose(self, other: "FirstStage", atol: float = 1e-9) -> bool:
        return bool(np.allclose(self.to_vector(), other.to_vector(), rtol=0, atol=atol))


@dataclass(frozen=True, eq=False)
class FeasibleSetSpec:
    """Bound data of X.

    ``cap_upper``/``cap_lower`` hold ``p_max``/``p_min`` of regular units and
    ``+inf``/``-inf`` for wind, so the reserve-capacity coupling is inactive
    for wind.
    """

    demand: float
    p0_lower: np.ndarray
    p0_upper: np.ndarray
    r_plus_max: np.ndarray
    r_minus_max: np.ndarray
    cap_upper: np.ndarray
    cap_lower: np.ndarray
    alpha_lower: np.ndarray
    alpha_upper: np.ndarray
    reserve_set: np.ndarray
    epsilon: float

    @classmethod
    def from_network(cls, net: Network, epsilon: float | None = None) -> "FeasibleSetSpec":
        g = net.generators
        n = len(g)
        if epsilon is None:
            epsilon = min(0.001, 0.01 / max(n, 1))
        reserve = np.array([x.in_reserve_set for x in g], dtype=bool)
        wind = net.is_wind
        al = np.where(reserve, epsilon, 0.0)
        au = np.ones(n)
        for i, x in enumerate(g):
            if x.alpha_fixed is not None:
                al[i] = au[i] = x.alpha_fixed
        return cls(
            demand=net.total_demand,
            p0_lower=np.array([x.p0_lower for x in g]),
            p0_upper=np.array([x.p0_upper for x in g]),
            r_plus_max=np.array([x.r_plus_max for x in g]),
            r_minus_max=np.array([x.r_minus_max for x in g]),
            cap_upper=np.where(wind, np.inf, net.p_max),
            cap_lower=np.where(wind, -np.inf, net.p_min),
            alpha_lower=al,
            alpha_upper=au,
            reserve_set=reserve,
            epsilon=float(epsilon),
        )

    @property
    def n_gens(self) -> int:
        return self.p0_lower.size

    @property
    def p0_range(self) -> tuple[np.ndarray, np.ndarray]:
        """Nominal-output interval implied by the cell of each unit."""
        lo = np.maximum(self.p0_lower, self.cap_lower)
        hi = np.minimum(self.p0_upper, self.cap_upper)
        return lo, hi

    def check_nonempty(self) -> None:
        lo, hi = self.p0_range
        if np.any(lo > hi) or np.any(self.r_plus_max < 0) or np.any(self.r_minus_max < 0):
            raise EmptyFeasibleSet("a unit has inconsistent output or reserve bounds")
        scale = 1e-9 * (1.0 + abs(self.demand))
        if lo.sum() > self.demand + scale or hi.sum() < self.demand - scale:
            raise EmptyFeasibleSet(
                f"demand {self.demand:.6g} outside attainable range [{lo.sum():.6g}, {hi.sum():.6g}]"
            )
        if np.any(self.alpha_lower > self.alpha_upper):
            raise EmptyFeasibleSet("participation bounds inconsistent")
        if self.alpha_lower.sum() > 1 + 1e-12 or self.alpha_upper.sum() < 1 - 1e-12:
            raise EmptyFeasibleSet("participation bounds cannot sum to one")


def validate(x: FirstStage, spec: FeasibleSetSpec, tol: float = 1e-7) -> None:
    """Raise :class:`InfeasibleFirstStage` naming the first violated block."""
    if x.n_gens != spec.n_gens:
        raise ValueError(f"first stage has {x.n_gens} units, feasible set {spec.n_gens}")
    ptol = tol * (1.0 + abs(spec.demand))
    if np.any(x.p0 < spec.p0_lower - ptol) or np.any(x.p0 > spec.p0_upper + ptol):
        raise InfeasibleFirstStage("bounds", "nominal output outside [p0_lower, p0_upper]")
    gap = float(x.p0.sum() - spec.demand)
    if abs(gap) > ptol:
        raise InfeasibleFirstStage("balance", f"sum(p0) - demand = {gap:.3g}")
    if (
        np.any(x.r_plus < -ptol)
        or np.any(x.r_minus < -ptol)
        or np.any(x.r_plus > spec.r_plus_max + ptol)
        or np.any(x.r_minus > spec.r_minus_max + ptol)
    ):
        raise InfeasibleFirstStage("reserve_bounds", "reserve outside [0, r_max]")
    if np.any(x.p0 + x.r_plus > spec.cap_upper + ptol) or np.any(
        x.p0 - x.r_minus < spec.cap_lower - ptol
    ):
        raise InfeasibleFirstStage("reserve_limits", "reserve exceeds generation capacity")
    if (
        np.any(x.alpha < spec.alpha_lower - tol)
        or np.any(x.alpha > spec.alpha_upper + tol)
        or abs(float(x.alpha.sum()) - 1.0) > tol
    ):
        raise InfeasibleFirstStage("participation", "participation factors violate bounds or sum")


def is_feasible(x: FirstStage, spec: FeasibleSetSpec, tol: float = 1e-7) -> bool:
    try:
        validate(x, spec, tol)
    except InfeasibleFirstStage:
        return False
    return True


# --------------------------------------------------------------------------
# scalar-multiplier projections


def project_hyperplane_box(v, lower, upper, total: float) -> np.ndarray:
    """Project ``v`` onto ``{y : lower <= y <= upper, sum(y) = total}``.

    Solves for the multiplier ``lam`` of ``sum(clip(v - lam, lower, upper)) =
    total`` exactly by locating it between consecutive breakpoints of the
    piecewise-linear, nonincreasing left-hand side.
    """
    v = np.asarray(v, dtype=float)
    lo = np.broadcast_to(np.asarray(lower, dtype=float), v.shape)
    hi = np.broadcast_to(np.asarray(upper, dtype=float), v.shape)
    if np.any(lo > hi):
        raise EmptyFeasibleSet("box bounds inconsistent")
    slack = 1e-12 * (1.0 + abs(total) + float(np.abs(v).sum()))
    if lo.sum() > total + slack or hi.sum() < total - slack:
        raise EmptyFeasibleSet(f"sum {total:.6g} unattainable within box")
    bps = np.concatenate([v - hi, v - lo])
    bps = np.unique(bps[np.isfinite(bps)])
    f = np.clip(v[None, :] - bps[:, None], lo, hi).sum(axis=1)  # nonincreasing
    above = np.flatnonzero(f >= total)
    if above.size == 0:
        # beyond the first breakpoint to the left; free coordinates have upper=inf
        free = np.isinf(hi)
        lam = bps[0] - (total - f[0]) / max(free.sum(), 1)
    elif above[-1] == bps.size - 1:
        j = bps.size - 1
        if f[j] == total:
            lam = bps[j]
        else:
            free = np.isinf(lo)
            lam = bps[j] + (f[j] - total) / max(free.sum(), 1)
    else:
        j = above[-1]
        drop = f[j] - f[j + 1]
        lam = bps[j] if drop <= 0 else bps[j] + (f[j] - total) / drop * (bps[j + 1] - bps[j])
    return np.clip(v - lam, lo, hi)


def project_simplex_lb(v, lower, total: float = 1.0) -> np.ndarray:
    """Project onto ``{y >= lower, sum(y) = total}`` by sort-and-shift."""
    v = np.asarray(v, dtype=float)
    lb = np.broadcast_to(np.asarray(lower, dtype=float), v.shape)
    t = total - lb.sum()
    if t < -1e-12:
        raise EmptyFeasibleSet("lower bounds exceed the simplex total")
    t = max(t, 0.0)
    w = v - lb
    u = np.sort(w)[::-1]
    css = np.cumsum(u) - t
    k = np.arange(1, u.size + 1)
    rho = np.flatnonzero(u - css / k > 0)
    shift = css[rho[-1]] / (rho[-1] + 1) if rho.size else css[-1] / u.size
    return lb + np.maximum(w - shift, 0.0)


# --------------------------------------------------------------------------
# per-unit cells in (p0, r+, r-)

# rows: p0 >= p0L, p0 <= p0U, r+ >= 0, r+ <= r+max, r- >= 0, r- <= r-max,
#       p0 + r+ <= cap_upper, p0 - r- >= cap_lower
_CELL_A = np.array(
    [
        [-1.0, 0.0, 0.0],
        [1.0, 0.0, 0.0],
        [0.0, -1.0, 0.0],
        [0.0, 1.0, 0.0],
        [0.0, 0.0, -1.0],
        [0.0, 0.0, 1.0],
        [1.0, 1.0, 0.0],
        [-1.0, 0.0, 1.0],
    ]
)


def _cell_subsets():
    idx, mats, actv = [], [], []
    for k in range(0, 4):
        for sub in combinations(range(len(_CELL_A)), k):
            a = _CELL_A[list(sub)]
            if k and np.linalg.matrix_rank(a) < k:
                continue
            m = np.zeros((3, 3))
            if k:
                m[:, :k] = a.T @ np.linalg.inv(a @ a.T)
            row = list(sub) + [0] * (3 - k)
            used = [True] * k + [False] * (3 - k)
            idx.append(row)
            mats.append(m)
            actv.append(used)
    return np.array(idx), np.array(mats), np.array(actv)


_SUB_IDX, _SUB_M, _SUB_USED = _cell_subsets()
_SUB_A = np.where(_SUB_USED[..., None], _CELL_A[_SUB_IDX], 0.0)  # (S, 3, 3)


def _cell_rhs(spec: FeasibleSetSpec) -> np.ndarray:
    return np.column_stack(
        [
            -spec.p0_lower,
            spec.p0_upper,
            np.zeros(spec.n_gens),
            spec.r_plus_max,
            np.zeros(spec.n_gens),
            spec.r_minus_max,
            spec.cap_upper,
            -spec.cap_lower,
        ]
    )


def project_cells(y: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    """Project each row of ``y`` (G x 3) onto its cell ``{z : A z <= rhs_i}``.

    Active-set enumeration: every independent subset of at most three facets
    yields the projection onto that face's affine hull; the closest candidate
    that is feasible is the Euclidean projection.
    """
    y = np.asarray(y, dtype=float)
    b_sub = np.where(_SUB_USED[:, None, :], rhs[:, _SUB_IDX].transpose(1, 0, 2), 0.0)  # (S,G,3)
    resid = np.einsum("sij,gj->sgi", _SUB_A, y) - b_sub
    with np.errstate(invalid="ignore"):
        cand = y[None] - np.einsum("sji,sgi->sgj", _SUB_M, resid)
        viol = np.einsum("kj,sgj->sgk", _CELL_A, cand) - rhs[None]
        scale = 1e-12 * (1.0 + np.abs(y).max(axis=1))
        ok = np.all(viol <= scale[None, :, None], axis=2) & np.all(np.isfinite(cand), axis=2)
        dist = np.where(ok, ((cand - y[None]) ** 2).sum(axis=2), np.inf)
    best = np.argmin(dist, axis=0)
    if np.any(~np.isfinite(dist[best, np.arange(y.shape[0])])):
        raise EmptyFeasibleSet("a unit's cell is empty")
    return cand[best, np.arange(y.shape[0])]


def _project_power_dual(spec: FeasibleSetSpec, y: np.ndarray, tol: float) -> np.ndarray:
    rhs = _cell_rhs(spec)
    demand = spec.demand
    e1 = np.array([1.0, 0.0, 0.0])

    def at(lam):
        z = project_cells(y - lam * e1, rhs)
        return z, z[:, 0].sum() - demand

    z, g = at(0.0)
    ftol = tol * (1.0 + abs(demand))
    if abs(g) <= ftol:
        return z
    # bracket the root of the nonincreasing function g
    step = max(1.0, abs(g))
    a, ga = 0.0, g
    b, gb = step if g > 0 else -step, None
    for _ in range(200):
        zb, gb = at(b)
        if (g > 0 and gb <= 0) or (g < 0 and gb >= 0):
            break
        a, ga = b, gb
        step *= 2.0
        b = b + step if g > 0 else b - step
    else:
        raise EmptyFeasibleSet("could not bracket the balance multiplier")
    if abs(gb) <= ftol:
        return zb
    lo, g_lo, hi, g_hi = (a, ga, b, gb) if a < b else (b, gb, a, ga)  # g_lo > 0 > g_hi
    z_best = zb
    side = 0
    for it in range(200):
        if g_lo - g_hi > 0 and it % 3 != 2:
            lam = lo + g_lo / (g_lo - g_hi) * (hi - lo)
            if not lo < lam < hi:
                lam = 0.5 * (lo + hi)
        else:
            lam = 0.5 * (lo + hi)
        z_best, gm = at(lam)
        if abs(gm) <= ftol or hi - lo <= 1e-15 * (1.0 + abs(lam)):
            return z_best
        if gm > 0:
            lo, g_lo = lam, gm
            if side == 1:
                g_hi *= 0.5
            side = 1
        else:
            hi, g_hi = lam, gm
            if side == -1:
                g_lo *= 0.5
            side = -1
    return z_best


def _project_power_dykstra(
    spec: FeasibleSetSpec, y: np.ndarray, tol: float, max_sweeps: int
) -> np.ndarray:
    rhs = _cell_rhs(spec)
    x = y.copy()
    p = np.zeros_like(x)
    q = np.zeros_like(x)
    for _ in range(max_sweeps):
        w = x + p
        z = w.copy()
        z[:, 0] = project_hyperplane_box(w[:, 0], spec.p0_lower, spec.p0_upper, spec.demand)
        p = w - z
        w = z + q
        x_new = project_cells(w, rhs)
        q = w - x_new
        change = float(np.abs(x_new - x).max())
        x = x_new
        if change <= tol:
            break
    return x


def _project_alpha(spec: FeasibleSetSpec, alpha: np.ndarray) -> np.ndarray:
    fixed = spec.alpha_lower == spec.alpha_upper
    if not fixed.any() and np.all(spec.alpha_upper >= 1.0):
        return project_simplex_lb(alpha, spec.alpha_lower, 1.0)
    return project_hyperplane_box(alpha, spec.alpha_lower, spec.alpha_upper, 1.0)


def project(
    x_raw: FirstStage,
    spec: FeasibleSetSpec,
    tol: float = 1e-10,
    method: str = "dual",
    max_sweeps: int = 10_000,
) -> FirstStage:
    """Euclidean projection onto X.

    ``method="dual"`` searches the balance multiplier to ``tol`` relative
    balance error; ``method="dykstra"`` alternates between the balance/box
    block and the cells until successive iterates change by at most ``tol``.
    """
    spec.check_nonempty()
    y = np.column_stack([x_raw.p0, x_raw.r_plus, x_raw.r_minus])
    if method == "dual":
        z = _project_power_dual(spec, y, tol)
    elif method == "dykstra":
        z = _project_power_dykstra(spec, y, tol, max_sweeps)
    else:
        raise ValueError(f"unknown projection method {method!r}")
    return FirstStage(z[:, 0], z[:, 1], z[:, 2], _project_alpha(spec, x_raw.alpha))


# --------------------------------------------------------------------------
# feasible points


def random_feasible(spec: FeasibleSetSpec, rng: np.random.Generator) -> FirstStage:
    """A random point of X (not uniformly distributed)."""
    spec.check_nonempty()
    lo, hi = spec.p0_range
    p0 = project_hyperplane_box(rng.uniform(lo, hi), lo, hi, spec.demand)
    rp_cap = np.minimum(spec.r_plus_max, spec.cap_upper - p0)
    rm_cap = np.minimum(spec.r_minus_max, p0 - spec.cap_lower)
    rp = rng.uniform(0.0, 1.0, p0.size) * np.maximum(rp_cap, 0.0)
    rm = rng.uniform(0.0, 1.0, p0.size) * np.maximum(rm_cap, 0.0)
    free = spec.alpha_lower < spec.alpha_upper
    alpha = spec.alpha_lower.copy()
    room = 1.0 - alpha.sum()
    if free.any():
        w = rng.dirichlet(np.ones(free.sum()))
        cap = (spec.alpha_upper - spec.alpha_lower)[free]
        alpha[free] += project_hyperplane_box(w * room, 0.0, cap, room)
    return FirstStage(p0, rp, rm, alpha)


def feasible_start(spec: FeasibleSetSpec) -> FirstStage:
    """Deterministic feasible point: balanced mid-range dispatch, no reserves."""
    spec.check_nonempty()
    lo, hi = spec.p0_range
    p0 = project_hyperplane_box(0.5 * (lo + hi), lo, hi, spec.demand)
    n = spec.n_gens
    alpha = _project_alpha(spec, np.full(n, 1.0 / n))
    return FirstStage(p0, np.zeros(n), np.zeros(n), alpha)
