import numpy as np
import pytest

from odfl.baselines import (
    GaConfig,
    TabularAgent,
    TabularConfig,
    TabularState,
    device_bucket,
    discretize_state,
    ga_select,
    random_select,
    tabular_select,
    tabular_update,
)
from odfl.core import EnvState, ModelSpec
from odfl.cost import ObjectiveWeights, brute_force_minimum, total_cost

from conftest import make_device, random_roster


class TestRandomSelect:
    def test_exact_count(self):
        k = random_select(4, 0.5, np.random.default_rng(0))
        assert sum(k) == 2 and len(k) == 4

    def test_full_fraction(self):
        assert random_select(4, 1.0, np.random.default_rng(0)) == (1, 1, 1, 1)

    def test_uniform_marginals(self):
        rng = np.random.default_rng(42)
        counts = np.zeros(10)
        draws = 10_000
        for _ in range(draws):
            counts += random_select(10, 0.3, rng)
        frequency = counts / draws
        assert np.abs(frequency - 0.3).max() < 0.02

    def test_fraction_bounds(self):
        with pytest.raises(ValueError):
            random_select(4, 0.0, np.random.default_rng(0))


class TestDiscretization:
    def test_bins_in_range(self):
        for ac in (-1.0, -0.3, 0.0, 0.7, 1.0):
            for r in (0, 3, 9):
                s = EnvState(k=(0,), ac=ac, r=r, da=frozenset({0, 1, 2, 3}))
                ts = discretize_state(s, horizon=10)
                assert 0 <= ts.ac_bin <= 9
                assert 0 <= ts.r_bin <= 4
                assert ts.da_count_bin == 2

    def test_invalid_bins_rejected(self):
        with pytest.raises(ValueError):
            TabularState(ac_bin=10, r_bin=0, da_count_bin=0)

    def test_table_size_bounded_by_buckets(self):
        # 10 ac bins x 5 round bins x 3 request bins x (areas x 2 flags).
        num_areas = 4
        states = 10 * 5 * 3
        assert states * num_areas * 2 == 1200  # independent of roster size


class TestTabular:
    def test_empty_table_full_exploration_is_uniform(self):
        devices = [make_device(id=i, area=i % 3) for i in range(10)]
        state = EnvState(k=(0,) * 10, ac=0.0, r=0, da=frozenset())
        rng = np.random.default_rng(1)
        counts = np.zeros(10)
        draws = 4000
        for _ in range(draws):
            counts += tabular_select({}, state, devices, 1.0, rng, horizon=10)
        assert np.abs(counts / draws - 0.5).max() < 0.05

    def test_single_cell_fixed_point(self):
        # gamma=0 and constant cost: the blend converges to Q = c.
        table = {}
        device = make_device(id=0, area=0)
        state = EnvState(k=(0,), ac=0.0, r=0, da=frozenset())
        for _ in range(300):
            tabular_update(table, state, [device], (1,), 2.5, state, [device],
                           alpha=0.1, gamma=0.0, horizon=10)
        key = (discretize_state(state, 10), device_bucket(device))
        assert table[key] == pytest.approx(2.5, abs=1e-6)

    def test_greedy_prefers_cheap_area(self):
        devices = [make_device(id=i, area=i % 2) for i in range(6)]
        state = EnvState(k=(0,) * 6, ac=0.0, r=0, da=frozenset())
        ts = discretize_state(state, 10)
        table = {
            (ts, (0, False)): -1.0,
            (ts, (1, False)): 1.0,
        }
        k = tabular_select(table, state, devices, epsilon=0.0,
                           rng=np.random.default_rng(0), horizon=10)
        assert k == (1, 0, 1, 0, 1, 0)

    def test_agent_observe_updates_selected_cells_only(self):
        devices = [make_device(id=0, area=0), make_device(id=1, area=1)]
        state = EnvState(k=(0, 0), ac=0.0, r=0, da=frozenset())
        agent = TabularAgent(horizon=10, config=TabularConfig(alpha=0.5, gamma=0.0))
        agent.observe(state, devices, (1, 0), 4.0, state, devices)
        ts = discretize_state(state, 10)
        assert agent.q_table[(ts, (0, False))] == pytest.approx(2.0)
        assert (ts, (1, False)) not in agent.q_table


def snapshot_cost_fn(rng, n=8, num_areas=4):
    """Random environment view closed into a placement -> cost function."""
    devices = random_roster(rng, n, num_areas=num_areas)
    priorities = rng.uniform(0, 1, size=n)
    da = frozenset(
        int(a) for a in rng.choice(num_areas, size=int(rng.integers(0, 3)),
                                   replace=False)
    )
    state = EnvState(k=(0,) * n, ac=0.0, r=0, da=da)
    spec = ModelSpec(1, 1, 1, 1)
    weights = ObjectiveWeights.equal()

    def cost_fn(action):
        return total_cost(state, action, devices, spec, priorities, weights,
                          t_min=2, num_areas=num_areas).total

    return state, devices, cost_fn


class TestGa:
    def test_no_variation_returns_seed_chromosome(self):
        state, devices, cost_fn = snapshot_cost_fn(np.random.default_rng(0))
        config = GaConfig(population=6, generations=3, crossover_rate=0.0,
                          mutation_rate=0.0)

        seen = []

        def capture_cost(action):
            seen.append(action)
            return cost_fn(action)

        # All-identical start: monkeypatch by running with rng that yields a
        # fixed population is awkward, so check invariance directly: with no
        # crossover or mutation the champion never changes across generations.
        rng = np.random.default_rng(3)
        best = ga_select(state, devices, capture_cost, config, rng)
        assert best in seen

    def test_deterministic_under_seed(self):
        state, devices, cost_fn = snapshot_cost_fn(np.random.default_rng(1))
        config = GaConfig(population=10, generations=5)
        a = ga_select(state, devices, cost_fn, config, np.random.default_rng(9))
        b = ga_select(state, devices, cost_fn, config, np.random.default_rng(9))
        assert a == b

    def test_matches_brute_force_on_most_instances(self):
        rng = np.random.default_rng(7)
        config = GaConfig()
        hits = 0
        trials = 15
        for _ in range(trials):
            state, devices, cost_fn = snapshot_cost_fn(rng)
            _, best_cost = brute_force_minimum(len(devices), cost_fn)
            ga_best = ga_select(state, devices, cost_fn, config,
                                np.random.default_rng(int(rng.integers(1e9))))
            hits += cost_fn(ga_best) <= best_cost + 1e-12
        assert hits >= 0.8 * trials

    def test_population_must_be_even(self):
        with pytest.raises(ValueError):
            GaConfig(population=7)

    def test_best_cost_non_increasing_with_more_generations(self):
        state, devices, cost_fn = snapshot_cost_fn(np.random.default_rng(4))
        costs = []
        for gens in (1, 5, 15):
            config = GaConfig(population=10, generations=gens)
            best = ga_select(state, devices, cost_fn, config,
                             np.random.default_rng(11))
            costs.append(cost_fn(best))
        assert costs[0] >= costs[1] >= costs[2]
