import numpy as np
import pytest

from odfl.core import Device, ModelSpec
from odfl.cost import ObjectiveWeights
from odfl.data import DatasetConfig
from odfl.env import EnvConfig, MobilityModel, OnDemandEnv


@pytest.fixture
def unit_spec() -> ModelSpec:
    return ModelSpec(cpu=1.0, memory=1.0, diskspace=1.0, battery=1.0, priority=0.5)


def make_device(
    id=0, cpu=4.0, memory=4.0, diskspace=4.0, battery=4.0, area=0,
    availability=5, high_mobility=False, last_local_accuracy=None,
) -> Device:
    return Device(
        id=id, cpu=cpu, memory=memory, diskspace=diskspace, battery=battery,
        area=area, availability=availability, high_mobility=high_mobility,
        last_local_accuracy=last_local_accuracy,
    )


def small_env(
    n=8,
    num_areas=3,
    rounds=12,
    seed=0,
    dwell_mean=4.0,
    on_demand=True,
    transition=None,
    mobile_fraction=0.0,
    mobile_dwell_mean=None,
    static_fraction=0.25,
    records_per_round_static=2,
    infeasible_fraction=0.2,
    weights=None,
) -> OnDemandEnv:
    """Fast, deterministic environment for unit tests."""
    config = EnvConfig(
        n=n,
        num_areas=num_areas,
        rounds=rounds,
        t_min=2,
        seed=seed,
        static_fraction=static_fraction,
        on_demand=on_demand,
        infeasible_fraction=infeasible_fraction,
        local_epochs=1,
        task_hidden=(8,),
    )
    if transition is not None:
        mobility = MobilityModel(
            transition,
            dwell_mean,
            mobile_fraction=mobile_fraction,
            mobile_dwell_mean=mobile_dwell_mean,
        )
    else:
        mobility = MobilityModel.uniform(
            num_areas,
            dwell_mean,
            mobile_fraction=mobile_fraction,
            mobile_dwell_mean=mobile_dwell_mean,
        )
    dataset = DatasetConfig(
        num_classes=3,
        feature_dim=4,
        records_per_round_static=records_per_round_static,
        records_per_move=4,
        test_set_size=60,
    )
    return OnDemandEnv(
        config, mobility, dataset, ModelSpec(1, 1, 1, 1),
        weights or ObjectiveWeights.equal(),
    )


def random_roster(rng: np.random.Generator, n: int, num_areas: int = 4,
                  spec: ModelSpec | None = None) -> list[Device]:
    """Roster with a mix of feasible/infeasible and available/expiring devices."""
    spec = spec or ModelSpec(1.0, 1.0, 1.0, 1.0)
    demands = np.array([spec.cpu, spec.memory, spec.diskspace, spec.battery])
    devices = []
    for i in range(n):
        caps = demands * rng.uniform(1.5, 3.0, size=4)
        if rng.random() < 0.3:
            caps[rng.integers(0, 4)] = demands[rng.integers(0, 4)] * rng.uniform(0.1, 0.9)
        devices.append(
            Device(
                id=i,
                cpu=float(caps[0]), memory=float(caps[1]),
                diskspace=float(caps[2]), battery=float(caps[3]),
                area=int(rng.integers(0, num_areas)),
                availability=int(rng.integers(0, 8)),
                high_mobility=bool(rng.random() < 0.4),
                last_local_accuracy=float(rng.random()) if rng.random() < 0.6 else None,
            )
        )
    return devices
