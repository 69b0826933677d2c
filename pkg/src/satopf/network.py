"""Network data model and DC power-flow linear algebra.

The reduced susceptance Laplacian (reference row and column deleted) is
factored once per network and reused by every scenario solve and every
angle-sensitivity solve.

Units are per-unit throughout. Bus ``0`` is the reference bus.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from functools import cached_property
from typing import Sequence

import numpy as np
import scipy.sparse as sp
import scipy.sparse.csgraph as csgraph
import scipy.sparse.linalg as spla

from .errors import (
    BadGeneratorData,
    BadLineData,
    DisconnectedGraph,
    DuplicateReference,
    NetworkError,
    SingularSystem,
    UnbalancedInjection,
)

__all__ = [
    "Bus",
    "Line",
    "Generator",
    "GeneratorKind",
    "Load",
    "Network",
    "validate_network",
    "solve_dc_flow",
    "line_flows",
]


class GeneratorKind(str, enum.Enum):
    REGULAR = "regular"
    WIND = "wind"


@dataclass(frozen=True)
class Bus:
    id: int
    is_reference: bool = False
    name: str = ""


@dataclass(frozen=True)
class Line:
    from_bus: int
    to_bus: int
    susceptance: float
    flow_limit: float
    name: str = ""


@dataclass(frozen=True)
class Generator:
    """A dispatchable unit.

    For wind units ``p_max`` is the mean available capacity and ``p_min`` the
    (deterministic) floor of the random lower limit. ``alpha_fixed`` pins the
    participation factor; ``spill_free`` zeroes the down-reserve exceedance
    penalty (used for wind that may spill at no cost).
    """

    bus: int
    kind: GeneratorKind
    p_min: float
    p_max: float
    p0_lower: float
    p0_upper: float
    r_plus_max: float
    r_minus_max: float
    unit_cost: float
    in_reserve_set: bool = True
    alpha_fixed: float | None = None
    spill_free: bool = False
    name: str = ""

    @property
    def is_wind(self) -> bool:
        return self.kind is GeneratorKind.WIND


@dataclass(frozen=True)
class Load:
    bus: int
    mean: float
    name: str = ""


def _frozen(a) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    a.setflags(write=False)
    return a


def validate_network(net: "Network") -> None:
    """Check structural invariants; raise on the first violation."""
    buses = net.buses
    if not buses:
        raise DisconnectedGraph("network has no buses")
    ids = [b.id for b in buses]
    if ids != list(range(len(buses))):
        raise NetworkError(f"bus ids must be contiguous 0..{len(buses) - 1}, got {ids}")
    refs = [b.id for b in buses if b.is_reference]
    if refs != [0]:
        raise DuplicateReference(
            f"exactly one reference bus required and it must be bus 0; got {refs}"
        )

    n = len(buses)
    for k, ln in enumerate(net.lines):
        if not (0 <= ln.from_bus < n and 0 <= ln.to_bus < n):
            raise BadLineData(f"line {k} references unknown bus ({ln.from_bus}, {ln.to_bus})")
        if ln.from_bus == ln.to_bus:
            raise BadLineData(f"line {k} is a self loop at bus {ln.from_bus}")
        if not (np.isfinite(ln.susceptance) and ln.susceptance > 0):
            raise BadLineData(f"line {k} susceptance must be > 0, got {ln.susceptance}")
        if not (np.isfinite(ln.flow_limit) and ln.flow_limit > 0):
            raise BadLineData(f"line {k} flow limit must be > 0, got {ln.flow_limit}")

    for k, g in enumerate(net.generators):
        if not 0 <= g.bus < n:
            raise BadGeneratorData(f"generator {k} references unknown bus {g.bus}")
        if g.p_min > g.p_max:
            raise BadGeneratorData(f"generator {k}: p_min > p_max")
        if g.p0_lower > g.p0_upper:
            raise BadGeneratorData(f"generator {k}: p0_lower > p0_upper")
        if g.r_plus_max < 0 or g.r_minus_max < 0:
            raise BadGeneratorData(f"generator {k}: negative reserve bound")
    for k, ld in enumerate(net.loads):
        if not 0 <= ld.bus < n:
            raise NetworkError(f"load {k} references unknown bus {ld.bus}")
        if not np.isfinite(ld.mean):
            raise NetworkError(f"load {k} mean is not finite")

    if n > 1:
        rows = [ln.from_bus for ln in net.lines]
        cols = [ln.to_bus for ln in net.lines]
        adj = sp.coo_matrix((np.ones(len(rows)), (rows, cols)), shape=(n, n))
        n_comp, _ = csgraph.connected_components(adj, directed=False)
        if n_comp != 1:
            raise DisconnectedGraph(f"network graph has {n_comp} connected components")


class Network:
    """Immutable network with a cached reduced-Laplacian factorization."""

    def __init__(
        self,
        buses: Sequence[Bus] | int,
        lines: Sequence[Line],
        generators: Sequence[Generator],
        loads: Sequence[Load],
        name: str = "",
        base_mva: float = 100.0,
    ):
        if isinstance(buses, int):
            buses = [Bus(i, is_reference=(i == 0)) for i in range(buses)]
        self.buses: tuple[Bus, ...] = tuple(buses)
        self.lines: tuple[Line, ...] = tuple(lines)
        self.generators: tuple[Generator, ...] = tuple(generators)
        self.loads: tuple[Load, ...] = tuple(loads)
        self.name = name
        self.base_mva = base_mva
        validate_network(self)

        self.line_from = np.array([ln.from_bus for ln in self.lines], dtype=int)
        self.line_to = np.array([ln.to_bus for ln in self.lines], dtype=int)
        self.susceptance = _frozen([ln.susceptance for ln in self.lines])
        self.flow_limit = _frozen([ln.flow_limit for ln in self.lines])

        g = self.generators
        self.gen_bus = np.array([x.bus for x in g], dtype=int)
        self.is_wind = np.array([x.is_wind for x in g], dtype=bool)
        self.p_min = _frozen([x.p_min for x in g])
        self.p_max = _frozen([x.p_max for x in g])
        self.unit_cost = _frozen([x.unit_cost for x in g])
        self.load_bus = np.array([x.bus for x in self.loads], dtype=int)
        self.load_mean = _frozen([x.mean for x in self.loads])
        for a in (self.line_from, self.line_to, self.gen_bus, self.is_wind, self.load_bus):
            a.setflags(write=False)

        self._factor = spla.splu(self.reduced_laplacian().tocsc()) if self.n_buses > 1 else None

    # sizes -------------------------------------------------------------
    @property
    def n_buses(self) -> int:
        return len(self.buses)

    @property
    def n_lines(self) -> int:
        return len(self.lines)

    @property
    def n_gens(self) -> int:
        return len(self.generators)

    @property
    def wind_index(self) -> np.ndarray:
        return np.flatnonzero(self.is_wind)

    @property
    def regular_index(self) -> np.ndarray:
        return np.flatnonzero(~self.is_wind)

    @property
    def total_demand(self) -> float:
        return float(self.load_mean.sum())

    @property
    def tol_bal(self) -> float:
        return 1e-8 * (float(np.abs(self.load_mean).sum()) + 1.0)

    # matrices ----------------------------------------------------------
    @cached_property
    def incidence(self) -> sp.csr_matrix:
        """Line-by-bus incidence matrix (+1 at ``from``, -1 at ``to``)."""
        m = self.n_lines
        rows = np.r_[np.arange(m), np.arange(m)]
        cols = np.r_[self.line_from, self.line_to]
        vals = np.r_[np.ones(m), -np.ones(m)]
        return sp.csr_matrix((vals, (rows, cols)), shape=(m, self.n_buses))

    def laplacian(self) -> sp.csr_matrix:
        a = self.incidence
        return (a.T @ sp.diags(self.susceptance) @ a).tocsr()

    def reduced_laplacian(self) -> sp.csr_matrix:
        return self.laplacian()[1:, 1:]

    @cached_property
    def gen_incidence(self) -> np.ndarray:
        """Bus-by-generator 0/1 matrix."""
        c = np.zeros((self.n_buses, self.n_gens))
        c[self.gen_bus, np.arange(self.n_gens)] = 1.0
        c.setflags(write=False)
        return c

    @cached_property
    def load_incidence(self) -> np.ndarray:
        c = np.zeros((self.n_buses, len(self.loads)))
        c[self.load_bus, np.arange(len(self.loads))] = 1.0
        c.setflags(write=False)
        return c

    @cached_property
    def ptdf(self) -> np.ndarray:
        """Dense line-by-bus injection shift factors (reference column zero)."""
        n = self.n_buses
        out = np.zeros((self.n_lines, n))
        if n > 1:
            inv = self._solve_reduced(np.eye(n - 1))
            theta = np.zeros((n, n - 1))
            theta[1:] = inv
            flows = self.susceptance[:, None] * (theta[self.line_from] - theta[self.line_to])
            out[:, 1:] = flows
        out.setflags(write=False)
        return out

    @cached_property
    def gen_ptdf(self) -> np.ndarray:
        """Line flow sensitivity to each generator's output."""
        out = np.ascontiguousarray(self.ptdf[:, self.gen_bus])
        out.setflags(write=False)
        return out

    def _solve_reduced(self, rhs: np.ndarray) -> np.ndarray:
        x = self._factor.solve(np.asarray(rhs, dtype=float))
        if not np.all(np.isfinite(x)):
            raise SingularSystem("reduced Laplacian solve produced non-finite angles")
        return x

    def injection(self, p: np.ndarray, load_fluct: np.ndarray | None = None) -> np.ndarray:
        """Net bus injection ``p_i - d_i - d~_i`` for generator outputs ``p``.

        ``p`` may be ``(G,)`` or ``(N, G)``; ``load_fluct`` matches with the
        load dimension.
        """
        p = np.asarray(p, dtype=float)
        inj = p @ self.gen_incidence.T - self.load_mean @ self.load_incidence.T
        if load_fluct is not None:
            inj = inj - np.asarray(load_fluct, dtype=float) @ self.load_incidence.T
        return inj

    def __repr__(self) -> str:
        return (
            f"Network({self.name!r}, buses={self.n_buses}, lines={self.n_lines}, "
            f"generators={self.n_gens}, loads={len(self.loads)})"
        )


def solve_dc_flow(net: Network, injection: np.ndarray, tol_bal: float | None = None) -> np.ndarray:
    """Solve the nodal DC balance for bus angles with the reference angle at 0.

    ``injection`` is ``(V,)`` or ``(N, V)``; the result has the same shape.
    """
    inj = np.asarray(injection, dtype=float)
    if inj.shape[-1] != net.n_buses:
        raise ValueError(f"injection has {inj.shape[-1]} entries, network has {net.n_buses} buses")
    tol = net.tol_bal if tol_bal is None else tol_bal
    imbalance = np.abs(inj.sum(axis=-1))
    if np.any(imbalance > tol):
        raise UnbalancedInjection(
            f"injection sums to {float(np.max(imbalance)):.3g}, tolerance {tol:.3g}"
        )
    theta = np.zeros_like(inj)
    if net.n_buses > 1:
        red = inj[..., 1:]
        sol = net._solve_reduced(red.T if red.ndim == 2 else red)
        theta[..., 1:] = sol.T if red.ndim == 2 else sol
    return theta


def line_flows(net: Network, theta: np.ndarray) -> np.ndarray:
    theta = np.asarray(theta, dtype=float)
    return net.susceptance * (theta[..., net.line_from] - theta[..., net.line_to])
