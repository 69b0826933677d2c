"""Projected stochastic gradient for the smoothed problem.

Each iteration averages mini-batch gradients, restricts them to the active
face of the equality blocks of X, takes a diagonal AdaGrad step (or a fixed
step) and projects back onto X. The objective is estimated every
``eval_every`` iterations on one evaluation sample drawn at the start (common
random numbers), and the iterate with the smallest estimate is returned.
"""

from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .costs import CostCoefficients, CostConfig
from .errors import ExcessiveInfeasibility, InfeasibleFirstStage, InfeasibleStart
from .first_stage import FeasibleSetSpec, FirstStage, project, validate
from .network import Network
from .recourse import SmoothingParams, solve_recourse_batch
from .sensitivity import batch_gradients
from .uncertainty import ScenarioSet, UncertaintyModel, sample

__all__ = ["PsgConfig", "IterateRecord", "PsgResult", "solve_smooth", "estimate_objective"]

logger = logging.getLogger(__name__)

EVAL_STREAM = 101
TRAIN_STREAM = 102
MAX_INFEASIBLE_FRACTION = 0.01


@dataclass(frozen=True)
class PsgConfig:
    max_iters: int = 2000
    batch_size: int = 20
    step: float = 0.01
    adagrad_epsilon: float = 1e-8
    eval_sample_size: int = 2000
    eval_every: int = 25
    patience: int = 20
    seed: int = 0
    step_rule: str = "adagrad"  # "adagrad" | "fixed"
    relative_steps: bool = True  # scale AdaGrad steps by each coordinate's bound width

    def __post_init__(self):
        if self.max_iters < 0 or self.batch_size < 1 or self.eval_sample_size < 1:
            raise ValueError("max_iters >= 0, batch_size >= 1 and eval_sample_size >= 1 required")
        if self.step < 0:
            raise ValueError("step must be nonnegative")
        if self.eval_every < 1 or self.patience < 1:
            raise ValueError("eval_every and patience must be positive")
        if self.step_rule not in ("adagrad", "fixed"):
            raise ValueError(f"unknown step rule {self.step_rule!r}")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True, eq=False)
class IterateRecord:
    iteration: int
    x: FirstStage
    objective: float
    std_error: float
    wall_time: float
    best_objective: float


@dataclass(eq=False)
class PsgResult:
    x: FirstStage
    objective: float
    std_error: float
    trace: list[IterateRecord] = field(default_factory=list)
    iterations: int = 0
    skipped_samples: int = 0
    eval_sample_digest: str = ""

    def __iter__(self):
        yield self.x
        yield self.trace


def _coeffs(net, costs) -> CostCoefficients:
    if isinstance(costs, CostCoefficients):
        return costs
    return CostCoefficients.build(net, costs or CostConfig())


def estimate_objective(
    net: Network,
    costs: CostConfig | CostCoefficients,
    x: FirstStage,
    scenarios: ScenarioSet,
    smoothing: SmoothingParams | None = None,
) -> tuple[float, float]:
    """Mean and standard error of first-stage plus smooth recourse cost.

    Scenarios outside the feasibility interval are excluded; more than 1% of
    them raises :class:`ExcessiveInfeasibility`.
    """
    coeffs = _coeffs(net, costs)
    batch = solve_recourse_batch(net, x, scenarios, "smooth", smoothing, coeffs)
    n_bad = int((~batch.feasible).sum())
    if n_bad > MAX_INFEASIBLE_FRACTION * len(batch):
        raise ExcessiveInfeasibility(n_bad, len(batch))
    gen, res = coeffs.first_stage(x.p0, x.r_plus, x.r_minus)
    vals = gen + res + batch.cost[batch.feasible]
    if vals.size == 0:
        raise ExcessiveInfeasibility(n_bad, len(batch))
    se = float(vals.std(ddof=1) / np.sqrt(vals.size)) if vals.size > 1 else 0.0
    return float(vals.mean()), se


def _step_scale(spec: FeasibleSetSpec) -> np.ndarray:
    lo, hi = spec.p0_range
    width = np.concatenate(
        [hi - lo, spec.r_plus_max, spec.r_minus_max, spec.alpha_upper - spec.alpha_lower]
    )
    return np.where(np.isfinite(width), width, 1.0)


def _face_block(g, x, lo, hi):
    """Remove from ``g`` the parts that leave ``{sum(x) = const, lo <= x <= hi}``.

    Coordinates sitting on a bound with the descent direction pointing out
    are frozen, and the rest of the gradient is centred so the step stays on
    the hyperplane. Preconditioning the result by any positive diagonal then
    still gives a descent direction after projection.
    """
    tol = 1e-9 * (1.0 + np.abs(hi - lo))
    tol = np.where(np.isfinite(tol), tol, 1e-9)
    free = np.ones(g.size, dtype=bool)
    out = np.zeros_like(g)
    for _ in range(g.size + 1):
        if not free.any():
            return np.zeros_like(g)
        out = np.where(free, g - g[free].mean(), 0.0)
        stuck = free & (((x <= lo + tol) & (out > 0)) | ((x >= hi - tol) & (out < 0)))
        if not stuck.any():
            break
        free &= ~stuck
    return out


def _face_gradient(g: np.ndarray, x: FirstStage, spec: FeasibleSetSpec) -> np.ndarray:
    """Gradient restricted to the active face of the balance and participation blocks."""
    n = x.n_gens
    lo = np.maximum(spec.p0_lower, spec.cap_lower + x.r_minus)
    hi = np.minimum(spec.p0_upper, spec.cap_upper - x.r_plus)
    out = g.copy()
    out[:n] = _face_block(g[:n], x.p0, lo, hi)
    out[3 * n :] = _face_block(g[3 * n :], x.alpha, spec.alpha_lower, spec.alpha_upper)
    return out


def solve_smooth(
    net: Network,
    model: UncertaintyModel,
    costs: CostConfig,
    spec: FeasibleSetSpec,
    x1: FirstStage,
    cfg: PsgConfig | None = None,
    smoothing: SmoothingParams | None = None,
) -> PsgResult:
    cfg = cfg or PsgConfig()
    try:
        validate(x1, spec)
    except InfeasibleFirstStage as exc:
        raise InfeasibleStart(f"initial point is not in X: {exc}") from exc

    coeffs = _coeffs(net, costs)
    smoothing = smoothing or SmoothingParams.from_costs(costs)
    eval_set = sample(model, cfg.seed, cfg.eval_sample_size, stream=EVAL_STREAM)
    t0 = time.perf_counter()

    x = x1
    obj, se = estimate_objective(net, coeffs, x, eval_set, smoothing)
    best = (x, obj, se)
    trace = [IterateRecord(0, x, obj, se, 0.0, obj)]
    since_best = 0
    skipped = 0
    accum = np.zeros(4 * x.n_gens)
    scale = _step_scale(spec) if cfg.relative_steps else np.ones(4 * x.n_gens)
    it = 0
    for it in range(1, cfg.max_iters + 1):
        batch = sample(model, cfg.seed, cfg.batch_size, start=(it - 1) * cfg.batch_size,
                       stream=TRAIN_STREAM)
        grads, _, usable = batch_gradients(net, x, batch, coeffs, smoothing)
        skipped += int((~usable).sum())
        if usable.any():
            g = _face_gradient(grads[usable].mean(axis=0), x, spec)
            if cfg.step_rule == "adagrad":
                accum += g * g
                delta = cfg.step * scale * g / np.sqrt(cfg.adagrad_epsilon + accum)
            else:
                delta = cfg.step * g
            if np.any(delta != 0):
                x = project(FirstStage.from_vector(x.to_vector() - delta), spec)
        if it % cfg.eval_every == 0 or it == cfg.max_iters:
            obj, se = estimate_objective(net, coeffs, x, eval_set, smoothing)
            if obj < best[1]:
                best = (x, obj, se)
                since_best = 0
            else:
                since_best += 1
            trace.append(IterateRecord(it, x, obj, se, time.perf_counter() - t0, best[1]))
            if since_best >= cfg.patience:
                logger.info("psg: no improvement in %d evaluations, stopping at %d", since_best, it)
                break
    if skipped:
        logger.info("psg: skipped %d infeasible or degenerate mini-batch samples", skipped)
    return PsgResult(best[0], best[1], best[2], trace, it, skipped, eval_set.digest())
