"""Follower-aware yielding cost, threshold waiting time and the priority order."""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Sequence


@dataclass(frozen=True)
class CostParams:
    s_comm: float = 1.0
    t_comm: float = 20.0
    s_perception: float = 1.0
    t_perception: float = 20.0
    a: float = 0.1
    R_scale: float = 1.0

    def __post_init__(self):
        for name, value in vars(self).items():
            if not value > 0:
                raise ValueError(f"{name} must be strictly positive, got {value}")


class CostInputs(NamedTuple):
    d_space: float
    n_followers: int = 0
    follower_present: bool = False


def _check(inputs: CostInputs):
    if inputs.d_space < 0 or inputs.n_followers < 0:
        raise ValueError(f"invalid cost inputs {inputs}")


def yielding_cost_comm(params: CostParams, inputs: CostInputs) -> float:
    _check(inputs)
    return params.s_comm * inputs.d_space + params.t_comm * inputs.n_followers


def yielding_cost_perception(params: CostParams, inputs: CostInputs) -> float:
    _check(inputs)
    return params.s_perception * inputs.d_space + params.t_perception * int(bool(inputs.follower_present))


def threshold_wait(params: CostParams, chi: float, R: float) -> float:
    """Seconds a vehicle waits in a stand-off before it starts backing."""
    if chi < 0 or not 0.0 <= R < 1.0:
        raise ValueError(f"need chi >= 0 and R in [0,1), got chi={chi}, R={R}")
    return params.a * chi + params.R_scale * R


class Contender(NamedTuple):
    id: int
    rho: bool
    chi: float
    R: float


def priority_key(c: Contender) -> tuple:
    # cost only ranks among vehicles that believe they are inside; outside
    # vehicles fall straight through to the random draw
    return (-int(c.rho), -c.chi if c.rho else 0.0, -c.R, c.id)


def priority_order(contenders: Sequence[Contender]) -> list[Contender]:
    """Highest priority first."""
    return sorted(contenders, key=priority_key)
