"""Deployment cost engine: the four weighted objectives, the violation
punishment, and the total round cost minimized by every selector.

All functions are pure; identical inputs give bit-identical outputs.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np

from .core import AreaId, Device, EnvState, ModelSpec, Placement, count_violations

# Guards the priority normalizer against an all-zero-priority roster.
PRIORITY_EPS = 1e-12

WEIGHT_SUM_TOL = 1e-9


@dataclass(frozen=True)
class ObjectiveWeights:
    """Relative preference over the four objectives; must sum to 1."""

    w1: float
    w2: float
    w3: float
    w4: float

    def __post_init__(self) -> None:
        for name in ("w1", "w2", "w3", "w4"):
            w = getattr(self, name)
            if not 0.0 <= w <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {w!r}")
        total = self.w1 + self.w2 + self.w3 + self.w4
        if abs(total - 1.0) > WEIGHT_SUM_TOL:
            raise ValueError(f"weights must sum to 1, got {total!r}")

    @classmethod
    def equal(cls) -> "ObjectiveWeights":
        return cls(0.25, 0.25, 0.25, 0.25)

    @classmethod
    def normalized(cls, w1: float, w2: float, w3: float, w4: float) -> "ObjectiveWeights":
        """Scale an arbitrary non-negative weight vector to sum to 1."""
        total = w1 + w2 + w3 + w4
        if total <= 0:
            raise ValueError("at least one weight must be positive")
        return cls(w1 / total, w2 / total, w3 / total, w4 / total)

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.w1, self.w2, self.w3, self.w4)


@dataclass(frozen=True)
class CostBreakdown:
    """Per-objective costs plus the punished total of one candidate action."""

    c1: float
    c2: float
    c3: float
    c4: float
    pun: int
    raw: float
    total: float

    def __post_init__(self) -> None:
        if self.pun < 1:
            raise ValueError("pun must be >= 1")

    @property
    def components(self) -> tuple[float, float, float, float, float, float]:
        """(c1, c2, c3, c4, pun, total) as stored in round reports."""
        return (self.c1, self.c2, self.c3, self.c4, float(self.pun), self.total)


def objective_active_hosts(placement: Sequence[int], w1: float) -> float:
    """c1: weighted fraction of the roster that hosts the model."""
    n = len(placement)
    if n == 0:
        raise ValueError("placement must cover at least one device")
    return w1 * sum(1 for b in placement if b) / n


def variation_rate(selected: Iterable[Device], num_areas: int) -> float:
    """ER: low when the selected clients span many areas and move a lot.

    An empty selection is the degenerate worst case (1.0) so that selecting
    nobody is never rewarded for diversity.
    """
    if num_areas < 1:
        raise ValueError("num_areas must be >= 1")
    devices = list(selected)
    m = len(devices)
    if m == 0:
        return 1.0
    distinct_areas = len({d.area for d in devices})
    high_mobility = sum(1 for d in devices if d.high_mobility)
    spread = distinct_areas / min(m, num_areas)
    movement = high_mobility / m
    return 1.0 - (spread + movement) / 2.0


def objective_diversity(selected: Iterable[Device], num_areas: int, w2: float) -> float:
    """c2: weighted variation rate of the selection."""
    return w2 * variation_rate(selected, num_areas)


def objective_priority(placement: Sequence[int], priorities: Sequence[float], w3: float) -> float:
    """c3: weighted share of total client priority captured by the selection.

    Subtracted from the total, so capturing more priority lowers cost.
    """
    if len(placement) != len(priorities):
        raise ValueError("placement and priorities must have equal length")
    captured = sum(k * p for k, p in zip(placement, priorities))
    return w3 * captured / max(PRIORITY_EPS, sum(priorities))


def request_fulfillment_rate(selected: Iterable[Device], da: Iterable[AreaId]) -> float:
    """RT: fraction of selected clients residing in requested areas.

    No pending requests means vacuous fulfillment (1.0); an empty selection
    against pending requests fulfills nothing (0.0).
    """
    requested = set(da)
    if not requested:
        return 1.0
    devices = list(selected)
    if not devices:
        return 0.0
    return sum(1 for d in devices if d.area in requested) / len(devices)


def objective_requests(selected: Iterable[Device], da: Iterable[AreaId], w4: float) -> float:
    """c4: weighted request-fulfillment rate; subtracted from the total."""
    return w4 * request_fulfillment_rate(selected, da)


def client_priorities(devices: Sequence[Device], global_accuracy: float) -> np.ndarray:
    """Per-device priorities: clients whose last local accuracy tracks the
    global accuracy rank highest; never-trained clients get a neutral 0.5."""
    out = np.empty(len(devices))
    for i, d in enumerate(devices):
        if d.last_local_accuracy is None:
            out[i] = 0.5
        else:
            out[i] = 1.0 - abs(d.last_local_accuracy - global_accuracy)
    return out


def total_cost(
    state: EnvState,
    action: Sequence[int],
    devices: Sequence[Device],
    spec: ModelSpec,
    priorities: Sequence[float],
    weights: ObjectiveWeights,
    t_min: int,
    num_areas: int,
) -> CostBreakdown:
    """Full cost of taking ``action`` in ``state``.

    raw = c1 + c2 - c3 - c4 lies in [-1, 1]; the total is (raw + 1) * pun so
    that the punishment multiplies a non-negative quantity and violations can
    never reduce cost.
    """
    n = len(devices)
    if len(action) != n or len(priorities) != n:
        raise ValueError("action, devices and priorities must agree in length")
    selected = [d for k_i, d in zip(action, devices) if k_i]
    c1 = objective_active_hosts(action, weights.w1)
    c2 = objective_diversity(selected, num_areas, weights.w2)
    c3 = objective_priority(action, priorities, weights.w3)
    c4 = objective_requests(selected, state.da, weights.w4)
    pun = 1 + count_violations(action, devices, spec, t_min)
    raw = c1 + c2 - c3 - c4
    return CostBreakdown(c1=c1, c2=c2, c3=c3, c4=c4, pun=pun, raw=raw, total=(raw + 1.0) * pun)


def brute_force_minimum(
    n: int, cost_fn: Callable[[Placement], float]
) -> tuple[Placement, float]:
    """Enumerate all 2**n placements and return the global cost minimizer.

    Ties break toward the lexicographically smallest placement. Intended as
    the oracle any optimizer in this package can be checked against.
    """
    if n > 20:
        raise ValueError("exhaustive enumeration is limited to n <= 20")
    best_k: Placement | None = None
    best_cost = float("inf")
    for bits in itertools.product((0, 1), repeat=n):
        cost = cost_fn(bits)
        if cost < best_cost:
            best_cost = cost
            best_k = bits
    assert best_k is not None
    return best_k, best_cost
