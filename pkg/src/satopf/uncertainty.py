"""Load and wind-capacity uncertainty, and reproducible scenario sampling.

Draws come from counter-based Philox streams keyed by ``(seed, stream,
block)``. Scenario ``k`` always lives in block ``k // BLOCK_SIZE`` at row
``k % BLOCK_SIZE``, so it is identical no matter how many scenarios are
requested or in which order blocks are generated. Columns are laid out as
loads first, then wind generators.
"""

from __future__ import annotations

import enum
import hashlib
import math
from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np
from scipy.special import ndtr, ndtri

from .network import Network

__all__ = [
    "BLOCK_SIZE",
    "Distribution",
    "UncertaintyModel",
    "Scenario",
    "ScenarioSet",
    "sample",
    "sigma_d_stats",
]

BLOCK_SIZE = 1024


class Distribution(str, enum.Enum):
    NORMAL = "normal"
    TRUNCATED_NORMAL = "truncated_normal"


def _arr(x) -> np.ndarray:
    a = np.array(x, dtype=float).reshape(-1)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class UncertaintyModel:
    """Independent Normal load fluctuations and wind capacities.

    Parameters
    ----------
    load_sigma : per-load standard deviation of the zero-mean fluctuation.
    wind_mean, wind_sigma : per-wind-generator capacity mean and deviation,
        ordered like ``Network.wind_index``.
    distribution : ``NORMAL`` (default) or ``TRUNCATED_NORMAL``, the latter
        truncating every standardized component at ``+-truncation``.
    """

    load_sigma: np.ndarray
    wind_mean: np.ndarray
    wind_sigma: np.ndarray
    distribution: Distribution = Distribution.NORMAL
    truncation: float = 3.0

    def __post_init__(self):
        for name in ("load_sigma", "wind_mean", "wind_sigma"):
            object.__setattr__(self, name, _arr(getattr(self, name)))
        if self.wind_mean.shape != self.wind_sigma.shape:
            raise ValueError("wind_mean and wind_sigma must have equal length")
        if np.any(self.load_sigma < 0) or np.any(self.wind_sigma < 0):
            raise ValueError("standard deviations must be nonnegative")
        object.__setattr__(self, "distribution", Distribution(self.distribution))
        if self.distribution is Distribution.TRUNCATED_NORMAL and not self.truncation > 0:
            raise ValueError("truncation must be positive")

    @classmethod
    def from_network(
        cls,
        net: Network,
        load_sigma: Sequence[float] | float,
        wind_sigma: Sequence[float] | float,
        **kwargs,
    ) -> "UncertaintyModel":
        n_wind = len(net.wind_index)
        ls = np.broadcast_to(np.asarray(load_sigma, dtype=float), (len(net.loads),))
        ws = np.broadcast_to(np.asarray(wind_sigma, dtype=float), (n_wind,))
        return cls(ls, net.p_max[net.wind_index], ws, **kwargs)

    @property
    def n_loads(self) -> int:
        return self.load_sigma.size

    @property
    def n_wind(self) -> int:
        return self.wind_mean.size

    def component_std_factor(self) -> float:
        """Standard deviation of one standardized component (1 for Normal)."""
        if self.distribution is Distribution.NORMAL:
            return 1.0
        k = self.truncation
        pdf = math.exp(-0.5 * k * k) / math.sqrt(2 * math.pi)
        mass = 2 * float(ndtr(k)) - 1
        return math.sqrt(1 - 2 * k * pdf / mass)

    def scaled(self, factor: float) -> "UncertaintyModel":
        return UncertaintyModel(
            self.load_sigma * factor,
            self.wind_mean,
            self.wind_sigma * factor,
            self.distribution,
            self.truncation,
        )


@dataclass(frozen=True, eq=False)
class Scenario:
    load_fluct: np.ndarray
    wind_cap: np.ndarray

    @property
    def sigma_d(self) -> float:
        return float(np.sum(self.load_fluct))


@dataclass(frozen=True, eq=False)
class ScenarioSet:
    """A batch of scenarios stored as arrays.

    ``load_fluct`` is ``(N, n_loads)``, ``wind_cap`` is ``(N, n_wind)``.
    ``n_clamped`` counts wind draws that were raised to zero.
    """

    load_fluct: np.ndarray
    wind_cap: np.ndarray
    n_clamped: int = 0
    sigma_d: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        lf = np.asarray(self.load_fluct, dtype=float)
        wc = np.asarray(self.wind_cap, dtype=float)
        if lf.ndim != 2 or wc.ndim != 2 or lf.shape[0] != wc.shape[0]:
            raise ValueError("load_fluct and wind_cap must be 2-D with equal row counts")
        object.__setattr__(self, "load_fluct", lf)
        object.__setattr__(self, "wind_cap", wc)
        object.__setattr__(self, "sigma_d", lf.sum(axis=1))

    @classmethod
    def from_scenarios(cls, scenarios: Sequence[Scenario]) -> "ScenarioSet":
        return cls(
            np.array([s.load_fluct for s in scenarios], dtype=float),
            np.array([s.wind_cap for s in scenarios], dtype=float),
        )

    def __len__(self) -> int:
        return self.load_fluct.shape[0]

    def __getitem__(self, idx):
        if isinstance(idx, (int, np.integer)):
            return Scenario(self.load_fluct[idx].copy(), self.wind_cap[idx].copy())
        return ScenarioSet(self.load_fluct[idx], self.wind_cap[idx])

    def __iter__(self) -> Iterator[Scenario]:
        for k in range(len(self)):
            yield self[k]

    def concat(self, other: "ScenarioSet") -> "ScenarioSet":
        return ScenarioSet(
            np.vstack([self.load_fluct, other.load_fluct]),
            np.vstack([self.wind_cap, other.wind_cap]),
            self.n_clamped + other.n_clamped,
        )

    def digest(self) -> str:
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.load_fluct).tobytes())
        h.update(np.ascontiguousarray(self.wind_cap).tobytes())
        return h.hexdigest()[:16]


def _block(model: UncertaintyModel, seed: int, stream: int, block: int) -> np.ndarray:
    ss = np.random.SeedSequence(int(seed), spawn_key=(int(stream), int(block)))
    rng = np.random.Generator(np.random.Philox(ss))
    width = model.n_loads + model.n_wind
    if model.distribution is Distribution.NORMAL:
        return rng.standard_normal((BLOCK_SIZE, width))
    k = model.truncation
    lo = ndtr(-k)
    u = rng.random((BLOCK_SIZE, width))
    return ndtri(lo + u * (1.0 - 2.0 * lo))


def sample(
    model: UncertaintyModel,
    seed: int,
    count: int,
    start: int = 0,
    stream: int = 0,
) -> ScenarioSet:
    """Draw scenarios ``start, ..., start + count - 1`` of stream ``stream``."""
    if count < 0:
        raise ValueError("count must be nonnegative")
    nl, nw = model.n_loads, model.n_wind
    if count == 0:
        return ScenarioSet(np.zeros((0, nl)), np.zeros((0, nw)))
    stop = start + count
    first, last = start // BLOCK_SIZE, (stop - 1) // BLOCK_SIZE
    z = np.vstack([_block(model, seed, stream, b) for b in range(first, last + 1)])
    z = z[start - first * BLOCK_SIZE : stop - first * BLOCK_SIZE]
    load = z[:, :nl] * model.load_sigma
    wind = model.wind_mean + z[:, nl:] * model.wind_sigma
    neg = wind < 0
    n_clamped = int(neg.sum())
    if n_clamped:
        wind = np.where(neg, 0.0, wind)
    return ScenarioSet(load, wind, n_clamped)


def sigma_d_stats(model: UncertaintyModel) -> tuple[float, float]:
    """Mean and standard deviation of the net demand fluctuation."""
    std = math.sqrt(float(np.sum(model.load_sigma**2))) * model.component_std_factor()
    return 0.0, std
