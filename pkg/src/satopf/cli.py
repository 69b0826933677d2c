"""Command-line interface.

Subcommands: ``solve-sa``, ``solve-gp``, ``solve-cap``, ``evaluate``,
``sweep`` and ``select``. Each run writes its outputs plus ``config.json``
(the fully resolved configuration) and ``manifest.json`` into ``--out``.
Running ``manifest["rerun"]`` reproduces every emitted number.

Exit codes: 0 success, 2 parse or configuration error, 3 solver failure,
4 infeasibility.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import platform
import sys
from dataclasses import dataclass, field, fields
from importlib import metadata as importlib_metadata
from pathlib import Path

import jsonschema

from . import errors
from .casefile import load_case, load_schema
from .comparison import solve_cap, solve_gp
from .costs import CostConfig
from .evaluation import (
    StudySpec,
    monte_carlo_evaluate,
    pareto_sweep,
    read_records_json,
    select_best,
    write_records_csv,
    write_records_json,
)
from .first_stage import FeasibleSetSpec, FirstStage, validate
from .psg import PsgConfig, solve_smooth

__all__ = ["StudyConfig", "main", "run", "EXIT_OK", "EXIT_PARSE", "EXIT_SOLVER", "EXIT_INFEASIBLE"]

logger = logging.getLogger("satopf")

EXIT_OK, EXIT_PARSE, EXIT_SOLVER, EXIT_INFEASIBLE = 0, 2, 3, 4

_EXIT_FOR = (
    ((errors.ParseError, errors.SchemaVersionMismatch, errors.NetworkError), EXIT_PARSE),
    ((errors.SolverFailure, errors.BisectionStall, errors.DegenerateSensitivity,
      errors.OverlappingSmoothing), EXIT_SOLVER),
    ((errors.InfeasibleFirstStage, errors.EmptyFeasibleSet, errors.ScenarioInfeasible,
      errors.ExcessiveInfeasibility, errors.InfeasibleStart), EXIT_INFEASIBLE),
)


class ConfigError(errors.SatOPFError):
    pass


@dataclass
class StudyConfig:
    """Everything a run needs besides the case file.

    ``seed`` drives the SAA sample and PSG streams, ``eval_seed`` the
    out-of-sample evaluation sample.
    """

    seed: int
    costs: CostConfig = field(default_factory=CostConfig)
    psg: PsgConfig = field(default_factory=PsgConfig)
    saa_scenarios: int = 500
    eval_n: int = 100_000
    eval_seed: int = 12345
    init_gamma_gen: float = 20.0
    include_affine_metrics: bool = False
    violation_limit: str = "full"
    sweep: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.saa_scenarios < 1 or self.eval_n < 1:
            raise ConfigError("saa_scenarios and eval_n must be positive")
        if self.violation_limit not in ("full", "delta"):
            raise ConfigError("violation_limit must be 'full' or 'delta'")

    @classmethod
    def from_dict(cls, d: dict) -> "StudyConfig":
        known = {f.name for f in fields(cls)}
        extra = set(d) - known
        if extra:
            raise ConfigError(f"unknown config keys {sorted(extra)}")
        if "seed" not in d:
            raise ConfigError("config must set 'seed'")
        d = dict(d)
        try:
            d["costs"] = CostConfig(**d.get("costs", {}))
            d["psg"] = PsgConfig(**d.get("psg", {}))
            return cls(**d)
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "costs": self.costs.to_dict(),
            "psg": self.psg.to_dict(),
            "saa_scenarios": self.saa_scenarios,
            "eval_n": self.eval_n,
            "eval_seed": self.eval_seed,
            "init_gamma_gen": self.init_gamma_gen,
            "include_affine_metrics": self.include_affine_metrics,
            "violation_limit": self.violation_limit,
            "sweep": self.sweep,
        }

    def study(self) -> StudySpec:
        sw = dict(self.sweep)
        try:
            return StudySpec(
                base_seed=self.seed,
                eval_seed=self.eval_seed,
                eval_n=self.eval_n,
                saa_scenarios=self.saa_scenarios,
                init_gamma_gen=self.init_gamma_gen,
                psg=self.psg,
                include_affine_metrics=self.include_affine_metrics,
                violation_limit=self.violation_limit,
                **sw,
            )
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad sweep section: {exc}") from exc


def _canonical(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def _sha(text: str | bytes) -> str:
    data = text.encode() if isinstance(text, str) else text
    return hashlib.sha256(data).hexdigest()


def _versions() -> dict:
    out = {"python": platform.python_version()}
    for pkg in ("satopf", "numpy", "scipy", "cvxpy", "clarabel", "jsonschema"):
        try:
            out[pkg] = importlib_metadata.version(pkg)
        except importlib_metadata.PackageNotFoundError:
            out[pkg] = "unknown"
    return out


class Run:
    """Per-invocation state: resolved inputs and the files written so far."""

    def __init__(self, args):
        self.args = args
        self.out = Path(args.out)
        self.out.mkdir(parents=True, exist_ok=True)
        self.outputs: dict[str, str] = {}
        self.timings: dict = {}  # wall-clock data, excluded from the manifest hashes
        cfg = {}
        if args.config:
            try:
                cfg = json.loads(Path(args.config).read_text())
            except json.JSONDecodeError as exc:
                raise errors.ParseError(exc.msg, field="config", line=exc.lineno) from exc
        if args.seed is not None:
            cfg["seed"] = args.seed
        if args.command == "select":
            cfg.setdefault("seed", 0)  # selection draws no random numbers
        self.config = StudyConfig.from_dict(cfg)
        if args.iters is not None:
            self.config.psg = PsgConfig(**{**self.config.psg.to_dict(), "max_iters": args.iters})
        if args.eval_n is not None:
            self.config.eval_n = args.eval_n
        self.case = None
        if getattr(args, "case", None):
            self.net, self.model, self.meta = load_case(args.case, args.variant, self.config.costs)
            self.spec = FeasibleSetSpec.from_network(
                self.net, self.config.costs.epsilon_for(self.net.n_gens)
            )
            self.case = {"path": self.meta.source, "name": self.meta.name,
                         "variant": self.meta.variant, "digest": self.meta.digest}

    def emit_json(self, name: str, doc: dict, schema: str | None = None) -> Path:
        if schema:
            jsonschema.validate(doc, load_schema(schema))
        path = self.out / name
        path.write_text(json.dumps(doc, indent=2) + "\n")
        self.outputs[name] = _sha(path.read_bytes())
        return path

    def register(self, name: str) -> None:
        self.outputs[name] = _sha((self.out / name).read_bytes())

    def finish(self, argv: list[str]) -> None:
        if self.timings:
            (self.out / "timings.json").write_text(json.dumps(self.timings, indent=2) + "\n")
        cfg = self.config.to_dict()
        self.emit_json("config.json", cfg)
        rerun = [self.args.command, "--config", str(self.out / "config.json"),
                 "--out", str(self.out)]
        if self.case:
            rerun += ["--case", self.case["path"], "--variant", self.case["variant"]]
        for opt in ("solution", "records"):
            if getattr(self.args, opt, None):
                rerun += [f"--{opt}", getattr(self.args, opt)]
        if getattr(self.args, "max_violation", None) is not None:
            rerun += ["--max-violation", repr(self.args.max_violation)]
        if getattr(self.args, "no_evaluate", False):
            rerun.append("--no-evaluate")
        manifest = {
            "schema_version": 1,
            "command": self.args.command,
            "argv": list(argv),
            "config": cfg,
            "config_hash": _sha(_canonical(cfg)),
            "seeds": {"seed": self.config.seed, "eval_seed": self.config.eval_seed},
            "versions": _versions(),
            "case": self.case or {},
            "outputs": dict(self.outputs),
            "rerun": rerun,
        }
        self.emit_json("manifest.json", manifest, "manifest")


def _evaluate(run: Run, x: FirstStage) -> dict:
    c = run.config
    rep = monte_carlo_evaluate(
        run.net, run.model, x, c.costs, c.eval_n, c.eval_seed,
        c.include_affine_metrics, c.violation_limit,
    )
    return rep.to_dict()


def _emit_solution(run: Run, model: str, x: FirstStage, params: dict, extra: dict | None = None):
    doc = {"schema_version": 1, "model": model, "case": run.meta.name, "variant": run.meta.variant,
           "parameters": params, "x": x.to_dict(), **(extra or {})}
    run.emit_json("solution.json", doc, "solution")
    if not run.args.no_evaluate:
        report = {"schema_version": 1, "case": run.meta.name, "variant": run.meta.variant,
                  "model": model, "report": _evaluate(run, x)}
        run.emit_json("report.json", report, "report")


def cmd_solve_gp(run: Run) -> None:
    c = run.config
    gg = c.costs.gamma_gen
    x = solve_gp(run.net, run.model, c.costs, run.spec, c.saa_scenarios, gamma_gen=gg, seed=c.seed)
    _emit_solution(run, "GP", x, {"gamma_gen": gg, "gamma_line": c.costs.gamma_line})


def cmd_solve_cap(run: Run) -> None:
    c = run.config
    eg = c.costs.eps_gen
    x = solve_cap(run.net, run.model, c.costs, run.spec, c.saa_scenarios, eps_gen=eg, seed=c.seed)
    _emit_solution(run, "CAP", x, {"eps_gen": eg, "gamma_line": c.costs.gamma_line})


def cmd_solve_sa(run: Run) -> None:
    c = run.config
    x1 = solve_gp(run.net, run.model, c.costs, run.spec, c.saa_scenarios,
                  gamma_gen=c.init_gamma_gen, seed=c.seed)
    cfg = PsgConfig(**{**c.psg.to_dict(), "seed": c.seed})
    res = solve_smooth(run.net, run.model, c.costs, run.spec, x1, cfg)
    trace = run.out / "trace.csv"
    with open(trace, "w") as fh:
        fh.write("iteration,objective,std_error,best_objective\n")
        for r in res.trace:
            fh.write(f"{r.iteration},{r.objective!r},{r.std_error!r},{r.best_objective!r}\n")
    run.register("trace.csv")
    run.timings["trace_wall_time"] = [r.wall_time for r in res.trace]
    _emit_solution(
        run, "SA", res.x,
        {"gamma_line": c.costs.gamma_line, "init_gamma_gen": c.init_gamma_gen},
        {"objective": res.objective, "std_error": res.std_error, "iterations": res.iterations},
    )


def _read_solution(path: str) -> dict:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise errors.ParseError(exc.msg, field="solution", line=exc.lineno) from exc
    try:
        jsonschema.validate(doc, load_schema("solution"))
    except jsonschema.ValidationError as exc:
        raise errors.ParseError(exc.message, field="solution") from exc
    return doc


def cmd_evaluate(run: Run) -> None:
    if not run.args.solution:
        raise ConfigError("evaluate needs --solution")
    doc = _read_solution(run.args.solution)
    x = FirstStage.from_dict(doc["x"])
    if x.n_gens != run.net.n_gens:
        raise errors.ParseError("solution size does not match the case", field="x")
    validate(x, run.spec)
    report = {"schema_version": 1, "case": run.meta.name, "variant": run.meta.variant,
              "model": doc["model"], "report": _evaluate(run, x)}
    run.emit_json("report.json", report, "report")


def cmd_sweep(run: Run) -> None:
    study = run.config.study()
    records = pareto_sweep(run.net, run.model, run.config.costs, run.spec, study, run.args.threads)
    write_records_csv(records, run.out / "records.csv")
    run.register("records.csv")
    doc = {"schema_version": 1, "records": [r.to_dict() for r in records]}
    jsonschema.validate(doc, load_schema("records"))
    write_records_json(records, run.out / "records.json")
    run.register("records.json")
    run.timings["solve_seconds"] = [r.solve_seconds for r in records]


def cmd_select(run: Run) -> None:
    if not run.args.records:
        raise ConfigError("select needs --records")
    records = read_records_json(run.args.records)
    seeds = {r.report.seed for r in records if r.ok}
    if len(seeds) > 1:
        raise ConfigError("records were evaluated on different samples")
    mv = run.args.max_violation
    chosen = {}
    for model in sorted({r.model for r in records}):
        best = select_best([r for r in records if r.model == model], mv)
        chosen[model] = None if best is None else best.to_dict()
    best = select_best(records, mv)
    chosen["overall"] = None if best is None else best.to_dict()
    run.emit_json("selection.json", {"schema_version": 1, "max_violation": mv, "selected": chosen},
                  "selection")


COMMANDS = {
    "solve-sa": cmd_solve_sa,
    "solve-gp": cmd_solve_gp,
    "solve-cap": cmd_solve_cap,
    "evaluate": cmd_evaluate,
    "sweep": cmd_sweep,
    "select": cmd_select,
}
NEEDS_CASE = {"solve-sa", "solve-gp", "solve-cap", "evaluate", "sweep"}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="satopf", description=__doc__.split("\n\n")[0])
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        s = sub.add_parser(name)
        s.add_argument("--case", required=name in NEEDS_CASE,
                       help="case file path or bundled case name")
        s.add_argument("--variant", choices=("case1", "case2", "case3"))
        s.add_argument("--config", help="study config JSON")
        s.add_argument("--out", default="out", help="output directory")
        s.add_argument("--seed", type=int, help="override the config seed")
        s.add_argument("--threads", type=int, default=1)
        s.add_argument("--iters", type=int, help="override psg.max_iters")
        s.add_argument("--eval-n", type=int, dest="eval_n", help="override eval_n")
        s.add_argument("--no-evaluate", action="store_true", dest="no_evaluate")
        s.add_argument("--solution", help="solution JSON (evaluate)")
        s.add_argument("--records", help="sweep records JSON (select)")
        s.add_argument("--max-violation", type=float, default=0.005, dest="max_violation")
        s.add_argument("--log-level", default="WARNING")
    return p


def _exit_code(exc: BaseException) -> int:
    if isinstance(exc, ConfigError):
        return EXIT_PARSE
    for kinds, code in _EXIT_FOR:
        if isinstance(exc, kinds):
            return code
    return EXIT_SOLVER


def run(command: str, args: list[str]) -> int:
    return main([command, *args])


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=args.log_level.upper(), format="%(levelname)s %(name)s: %(message)s")
    try:
        r = Run(args)
        COMMANDS[args.command](r)
        r.finish(argv)
    except (errors.SatOPFError, OSError, jsonschema.ValidationError) as exc:
        code = EXIT_PARSE if isinstance(exc, (OSError, jsonschema.ValidationError)) else _exit_code(exc)
        msg = {"error": type(exc).__name__, "message": str(exc), "exit_code": code}
        for attr in ("field", "line", "constraint"):
            if getattr(exc, attr, None) is not None:
                msg[attr] = getattr(exc, attr)
        print(json.dumps(msg), file=sys.stderr)
        return code
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
