"""Cost and penalty coefficients.

First stage: ``sum c_i p0_i + cbar_i (r+_i + r-_i)`` with ``cbar_i = c_res c_i``
for regular units and ``cbar_i = c_wind c_res min_k c_k`` (over regular units)
for wind, whose energy is free. Second stage: reserve-exceedance penalties
weighted by ``gamma_res cbar_i`` and a squared line-flow hinge beyond
``delta f_max`` weighted by ``gamma_line``.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, replace

import numpy as np

from .network import Network

__all__ = ["CostConfig", "CostCoefficients"]


@dataclass(frozen=True)
class CostConfig:
    c_res: float = 1.5
    c_wind: float = 0.1
    gamma_res: float = 10.0
    gamma_line: float = 100.0
    gamma_gen: float = 20.0
    delta: float = 0.95
    tau_sat: float = 1e-4  # relative to each unit's (p_max - p_min)
    tau_pos: float = 1e-4
    epsilon: float | None = None  # None -> min(0.001, 0.01 / |G|)
    eps_gen: float = 1e-2

    def __post_init__(self):
        for name in ("c_res", "c_wind", "gamma_res", "delta", "tau_sat", "tau_pos"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.gamma_line < 0 or self.gamma_gen < 0:
            raise ValueError("penalty coefficients must be nonnegative")
        if not 0 < self.eps_gen < 1:
            raise ValueError("eps_gen must lie in (0, 1)")

    def epsilon_for(self, n_gens: int) -> float:
        if self.epsilon is not None:
            return self.epsilon
        return min(0.001, 0.01 / max(n_gens, 1))

    def with_(self, **changes) -> "CostConfig":
        return replace(self, **changes)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True, eq=False)
class CostCoefficients:
    """Per-generator and per-line coefficient arrays derived for one network."""

    energy: np.ndarray  # c_i (0 for wind)
    reserve: np.ndarray  # cbar_i
    pen_up: np.ndarray  # gamma_res cbar_i on (p - p0 - r+)_+
    pen_down: np.ndarray  # gamma_res cbar_i on (p0 - p - r-)_+, 0 when spill-free
    line_threshold: np.ndarray  # delta f_max
    gamma_line: float
    gamma_gen: float
    tau_pos: float
    tau_sat: float

    @classmethod
    def build(cls, net: Network, costs: CostConfig) -> "CostCoefficients":
        wind = net.is_wind
        energy = np.where(wind, 0.0, net.unit_cost)
        regular_costs = net.unit_cost[~wind]
        cmin = float(regular_costs.min()) if regular_costs.size else 0.0
        reserve = np.where(wind, costs.c_wind * costs.c_res * cmin, costs.c_res * net.unit_cost)
        pen_up = costs.gamma_res * reserve
        spill_free = np.array([g.spill_free for g in net.generators], dtype=bool)
        pen_down = np.where(spill_free, 0.0, costs.gamma_res * reserve)
        return cls(
            energy=energy,
            reserve=reserve,
            pen_up=pen_up,
            pen_down=pen_down,
            line_threshold=costs.delta * np.asarray(net.flow_limit),
            gamma_line=costs.gamma_line,
            gamma_gen=costs.gamma_gen,
            tau_pos=costs.tau_pos,
            tau_sat=costs.tau_sat,
        )

    def first_stage(self, p0, r_plus, r_minus) -> tuple[float, float]:
        """Return (generation cost, reserve cost)."""
        gen = float(np.dot(self.energy, p0))
        res = float(np.dot(self.reserve, np.asarray(r_plus) + np.asarray(r_minus)))
        return gen, res
