"""Out-of-sample evaluation on the exact saturation model, and Pareto sweeps.

Costs reported by :class:`EvaluationReport`:

``expected_total_cost``
    generation + reserve + expected reserve-exceedance penalty. The line
    penalty is a tuning device and is reported on its own as
    ``expected_line_penalty``.
``joint_line_violation_prob``
    fraction of scenarios where any ``|flow|`` exceeds its limit. The limit
    is the full ``f_max`` by default; ``violation_limit="delta"`` uses
    ``delta f_max`` instead.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .comparison import affine_evaluate, solve_cap, solve_gp
from .costs import CostCoefficients, CostConfig
from .errors import ExcessiveInfeasibility, SatOPFError
from .first_stage import FeasibleSetSpec, FirstStage
from .network import Network
from .psg import PsgConfig, solve_smooth
from .recourse import solve_recourse_batch
from .uncertainty import UncertaintyModel, sample

__all__ = [
    "EvaluationReport",
    "SweepRecord",
    "StudySpec",
    "monte_carlo_evaluate",
    "logspace",
    "pareto_sweep",
    "select_best",
    "pareto_front",
    "frontier_cost",
    "write_records_csv",
    "write_records_json",
    "read_records_json",
    "CSV_COLUMNS",
    "MC_STREAM",
]

logger = logging.getLogger(__name__)

MC_STREAM = 301
MAX_INFEASIBLE_FRACTION = 0.01
CHUNK = 10_000


@dataclass(frozen=True)
class EvaluationReport:
    expected_total_cost: float
    first_stage_gen_cost: float
    first_stage_reserve_cost: float
    expected_penalty_cost: float
    expected_line_penalty: float
    std_error: float
    joint_line_violation_prob: float
    affine_gen_violation_prob: float | None
    wind_utilization_pct: float | None
    sample_size: int
    seed: int
    n_infeasible: int
    n_clamped: int
    sample_digest: str
    violation_limit: str = "full"

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "EvaluationReport":
        return cls(**{f.name: d[f.name] for f in fields(cls) if f.name in d})


def monte_carlo_evaluate(
    net: Network,
    model: UncertaintyModel,
    x: FirstStage,
    costs: CostConfig | None = None,
    n: int = 100_000,
    seed: int = 0,
    include_affine_metrics: bool = False,
    violation_limit: str = "full",
    scenarios=None,
) -> EvaluationReport:
    """Evaluate ``x`` under the exact (nonsmooth) recourse.

    Every call with the same ``(seed, n)`` consumes the same scenarios, so
    candidates evaluated in one study share common random numbers. Passing
    ``scenarios`` overrides the sampled set.
    """
    if violation_limit not in ("full", "delta"):
        raise ValueError("violation_limit must be 'full' or 'delta'")
    costs = costs or CostConfig()
    coeffs = CostCoefficients.build(net, costs)
    limit = net.flow_limit * (costs.delta if violation_limit == "delta" else 1.0)
    wind = net.wind_index

    ss_all = scenarios if scenarios is not None else sample(model, seed, n, stream=MC_STREAM)
    n = len(ss_all)
    sums = dict(pen=0.0, pen2=0.0, line=0.0, viol=0, affine=0, wind_out=0.0, wind_avail=0.0)
    n_bad = 0
    for start in range(0, n, CHUNK):
        ss = ss_all[start : start + CHUNK]
        b = solve_recourse_batch(net, x, ss, "exact", None, coeffs)
        ok = b.feasible
        n_bad += int((~ok).sum())
        pen = (b.reserve_up + b.reserve_down)[ok]
        sums["pen"] += float(pen.sum())
        sums["pen2"] += float((pen * pen).sum())
        sums["line"] += float(b.line[ok].sum())
        sums["viol"] += int(np.any(np.abs(b.flows[ok]) > limit, axis=1).sum())
        if wind.size:
            sums["wind_out"] += float(b.p[ok][:, wind].sum())
            sums["wind_avail"] += float(ss.wind_cap[ok].sum())
        if include_affine_metrics:
            sums["affine"] += int(affine_evaluate(net, x, ss, coeffs).gen_violation.sum())
    if n_bad > MAX_INFEASIBLE_FRACTION * n or n_bad == n:
        raise ExcessiveInfeasibility(n_bad, n)
    m = n - n_bad
    gen, res = coeffs.first_stage(x.p0, x.r_plus, x.r_minus)
    pen_mean = sums["pen"] / m
    var = max(sums["pen2"] / m - pen_mean**2, 0.0) * m / max(m - 1, 1)
    util = None
    if wind.size and sums["wind_avail"] > 0:
        util = 100.0 * sums["wind_out"] / sums["wind_avail"]
    return EvaluationReport(
        expected_total_cost=gen + res + pen_mean,
        first_stage_gen_cost=gen,
        first_stage_reserve_cost=res,
        expected_penalty_cost=pen_mean,
        expected_line_penalty=sums["line"] / m,
        std_error=math.sqrt(var / m),
        joint_line_violation_prob=sums["viol"] / m,
        affine_gen_violation_prob=(sums["affine"] / n) if include_affine_metrics else None,
        wind_utilization_pct=util,
        sample_size=n,
        seed=seed,
        n_infeasible=n_bad,
        n_clamped=ss_all.n_clamped,
        sample_digest=ss_all.digest(),
        violation_limit=violation_limit,
    )


# --------------------------------------------------------------------------
# sweeps


def logspace(start: float, stop: float, num: int) -> list[float]:
    """``num`` log-uniform values from ``10**start`` to ``10**stop``."""
    return [float(v) for v in np.logspace(start, stop, num)]


@dataclass
class SweepRecord:
    model: str  # "SA" | "GP" | "CAP"
    gamma_line: float
    gamma_gen: float | None
    eps_gen: float | None
    replicate: int
    seed: int
    report: EvaluationReport | None = None
    x: FirstStage | None = None
    error: str | None = None
    solve_seconds: float = 0.0  # wall clock, kept out of the serialized record

    @property
    def ok(self) -> bool:
        return self.report is not None

    def to_dict(self) -> dict:
        return {
            "model": self.model,
            "gamma_line": self.gamma_line,
            "gamma_gen": self.gamma_gen,
            "eps_gen": self.eps_gen,
            "replicate": self.replicate,
            "seed": self.seed,
            "report": None if self.report is None else self.report.to_dict(),
            "x": None if self.x is None else self.x.to_dict(),
            "error": self.error,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SweepRecord":
        return cls(
            d["model"], d["gamma_line"], d.get("gamma_gen"), d.get("eps_gen"),
            d["replicate"], d["seed"],
            None if d.get("report") is None else EvaluationReport.from_dict(d["report"]),
            None if d.get("x") is None else FirstStage.from_dict(d["x"]),
            d.get("error"),
        )


@dataclass
class StudySpec:
    """Grids, replicates and solver settings of a Pareto study.

    Replicate ``k`` uses seed ``base_seed + k`` for its SAA sample and PSG
    streams; every candidate is evaluated on the sample fixed by
    ``eval_seed``.
    """

    models: Sequence[str] = ("SA", "GP", "CAP")
    gamma_line_sa: Sequence[float] = field(default_factory=lambda: logspace(1, 5, 17))
    gamma_line_cmp: Sequence[float] = field(default_factory=lambda: logspace(1, 5, 9))
    gamma_gen: Sequence[float] = field(default_factory=lambda: logspace(0, 5, 16))
    eps_gen: Sequence[float] = (1e-3, 1e-2)
    replicates: int = 5
    base_seed: int = 0
    eval_seed: int = 12345
    eval_n: int = 100_000
    saa_scenarios: int = 500
    init_gamma_gen: float = 20.0
    psg: PsgConfig = field(default_factory=PsgConfig)
    include_affine_metrics: bool = False
    violation_limit: str = "full"

    def __post_init__(self):
        grids = (self.gamma_line_sa, self.gamma_line_cmp, self.gamma_gen, self.eps_gen)
        if any(len(g) == 0 for g in grids) or self.replicates < 1:
            raise ValueError("sweep grids must be nonempty and replicates >= 1")
        bad = set(self.models) - {"SA", "GP", "CAP"}
        if bad:
            raise ValueError(f"unknown models {sorted(bad)}")

    def seed_for(self, replicate: int) -> int:
        return self.base_seed + replicate

    def points(self) -> list[tuple[str, float, float | None, float | None, int]]:
        pts = []
        for rep in range(self.replicates):
            if "SA" in self.models:
                pts += [("SA", gl, None, None, rep) for gl in self.gamma_line_sa]
            if "GP" in self.models:
                pts += [("GP", gl, gg, None, rep) for gl in self.gamma_line_cmp for gg in self.gamma_gen]
            if "CAP" in self.models:
                pts += [("CAP", gl, None, e, rep) for gl in self.gamma_line_cmp for e in self.eps_gen]
        return pts

    def to_dict(self) -> dict:
        d = asdict(self)
        d["models"] = list(self.models)
        for k in ("gamma_line_sa", "gamma_line_cmp", "gamma_gen", "eps_gen"):
            d[k] = list(d[k])
        return d


def solve_point(
    net: Network,
    model: UncertaintyModel,
    costs: CostConfig,
    spec: FeasibleSetSpec,
    study: StudySpec,
    kind: str,
    gamma_line: float,
    gamma_gen: float | None,
    eps_gen: float | None,
    replicate: int,
) -> FirstStage:
    seed = study.seed_for(replicate)
    c = costs.with_(gamma_line=gamma_line)
    if kind == "GP":
        return solve_gp(net, model, c, spec, study.saa_scenarios, gamma_gen=gamma_gen, seed=seed)
    if kind == "CAP":
        return solve_cap(net, model, c, spec, study.saa_scenarios, eps_gen=eps_gen, seed=seed)
    x1 = solve_gp(net, model, c, spec, study.saa_scenarios, gamma_gen=study.init_gamma_gen, seed=seed)
    cfg = PsgConfig(**{**study.psg.to_dict(), "seed": seed})
    return solve_smooth(net, model, c, spec, x1, cfg).x


def pareto_sweep(
    net: Network,
    model: UncertaintyModel,
    costs: CostConfig,
    spec: FeasibleSetSpec,
    study: StudySpec,
    threads: int = 1,
) -> list[SweepRecord]:
    """One record per (model, parameters, replicate); failures are recorded."""

    def run(point) -> SweepRecord:
        kind, gl, gg, eg, rep = point
        rec = SweepRecord(kind, gl, gg, eg, rep, study.seed_for(rep))
        t0 = time.perf_counter()
        try:
            rec.x = solve_point(net, model, costs, spec, study, kind, gl, gg, eg, rep)
            rec.solve_seconds = time.perf_counter() - t0
            rec.report = monte_carlo_evaluate(
                net, model, rec.x, costs.with_(gamma_line=gl), study.eval_n, study.eval_seed,
                study.include_affine_metrics, study.violation_limit,
            )
        except SatOPFError as exc:
            rec.error = f"{type(exc).__name__}: {exc}"
            logger.warning("sweep point %s failed: %s", point, rec.error)
        return rec

    points = study.points()
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(run, points))
    return [run(p) for p in points]


def select_best(records: Iterable[SweepRecord], max_violation: float = 0.005) -> SweepRecord | None:
    """Cheapest record whose joint line violation is at most ``max_violation``."""
    ok = [r for r in records if r.ok and r.report.joint_line_violation_prob <= max_violation]
    if not ok:
        return None
    return min(ok, key=lambda r: r.report.expected_total_cost)


def pareto_front(records: Iterable[SweepRecord]) -> list[SweepRecord]:
    """Non-dominated records sorted by increasing violation (and decreasing cost)."""
    ok = sorted(
        (r for r in records if r.ok),
        key=lambda r: (r.report.joint_line_violation_prob, r.report.expected_total_cost),
    )
    front, best = [], math.inf
    for r in ok:
        if r.report.expected_total_cost < best:
            front.append(r)
            best = r.report.expected_total_cost
    return front


def frontier_cost(records: Iterable[SweepRecord], violation: float) -> float:
    """Lowest cost reachable with violation at most ``violation`` (inf if none)."""
    best = select_best(records, violation)
    return math.inf if best is None else best.report.expected_total_cost


# --------------------------------------------------------------------------
# output

CSV_COLUMNS = (
    "model",
    "gamma_line",
    "gamma_gen",
    "eps_gen",
    "replicate",
    "seed",
    "status",
    "error",
    "expected_total_cost",
    "first_stage_gen_cost",
    "first_stage_reserve_cost",
    "expected_penalty_cost",
    "expected_line_penalty",
    "std_error",
    "joint_line_violation_prob",
    "affine_gen_violation_prob",
    "wind_utilization_pct",
    "sample_size",
    "eval_seed",
    "n_infeasible",
    "sample_digest",
    "x",
)


def _csv_row(r: SweepRecord) -> dict:
    row = {
        "model": r.model,
        "gamma_line": r.gamma_line,
        "gamma_gen": r.gamma_gen,
        "eps_gen": r.eps_gen,
        "replicate": r.replicate,
        "seed": r.seed,
        "status": "ok" if r.ok else "failed",
        "error": r.error,
        "x": None if r.x is None else json.dumps(r.x.to_vector().tolist()),
    }
    if r.report is not None:
        rep = r.report.to_dict()
        for k in CSV_COLUMNS:
            if k in rep and k != "seed":
                row[k] = rep[k]
        row["eval_seed"] = rep["seed"]
    return {k: ("" if row.get(k) is None else row[k]) for k in CSV_COLUMNS}


def write_records_csv(records: Iterable[SweepRecord], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=CSV_COLUMNS)
        w.writeheader()
        for r in records:
            w.writerow(_csv_row(r))


def write_records_json(records: Iterable[SweepRecord], path: str | Path) -> None:
    doc = {"schema_version": 1, "records": [r.to_dict() for r in records]}
    Path(path).write_text(json.dumps(doc, indent=2) + "\n")


def read_records_json(path: str | Path) -> list[SweepRecord]:
    doc = json.loads(Path(path).read_text())
    return [SweepRecord.from_dict(d) for d in doc["records"]]
