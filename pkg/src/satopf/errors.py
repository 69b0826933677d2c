"""Exception hierarchy shared by all modules."""

from __future__ import annotations


class SatOPFError(Exception):
    """Base class for every error raised by the package."""


# network
class NetworkError(SatOPFError):
    pass


class DisconnectedGraph(NetworkError):
    pass


class DuplicateReference(NetworkError):
    pass


class BadLineData(NetworkError):
    pass


class BadGeneratorData(NetworkError):
    pass


class UnbalancedInjection(NetworkError):
    pass


class SingularSystem(NetworkError):
    pass


# first stage
class InfeasibleFirstStage(SatOPFError):
    """A first-stage point violates one of the constraints of X.

    ``constraint`` names the violated block: ``balance``, ``bounds``,
    ``reserve_bounds``, ``reserve_limits`` or ``participation``.
    """

    def __init__(self, constraint: str, detail: str = ""):
        self.constraint = constraint
        self.detail = detail
        msg = f"infeasible first stage ({constraint})"
        if detail:
            msg += f": {detail}"
        super().__init__(msg)


class EmptyFeasibleSet(SatOPFError):
    pass


# recourse / sensitivity
class ScenarioInfeasible(SatOPFError):
    """Net demand fluctuation falls outside the feasibility interval."""

    def __init__(self, sigma_d: float, interval):
        self.sigma_d = sigma_d
        self.interval = interval
        super().__init__(
            f"net demand fluctuation {sigma_d:.6g} outside feasibility interval "
            f"[{interval.lower:.6g}, {interval.upper:.6g}]"
        )


class BisectionStall(SatOPFError):
    pass


class OverlappingSmoothing(SatOPFError):
    pass


class DegenerateSensitivity(SatOPFError):
    pass


# solvers / evaluation
class InfeasibleStart(SatOPFError):
    pass


class SolverFailure(SatOPFError):
    pass


class ExcessiveInfeasibility(SatOPFError):
    def __init__(self, n_infeasible: int, n_total: int):
        self.n_infeasible = n_infeasible
        self.n_total = n_total
        super().__init__(
            f"{n_infeasible} of {n_total} scenarios fall outside the feasibility interval"
        )


# ingestion
class ParseError(SatOPFError):
    def __init__(self, message: str, field: str | None = None, line: int | None = None):
        self.field = field
        self.line = line
        where = []
        if line is not None:
            where.append(f"line {line}")
        if field:
            where.append(f"field {field!r}")
        prefix = f"[{', '.join(where)}] " if where else ""
        super().__init__(prefix + message)


class SchemaVersionMismatch(SatOPFError):
    pass
