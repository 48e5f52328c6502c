import csv
import json
import os

import numpy as np
import pytest

from odfl import dqn, harness, nn
from odfl.cost import ObjectiveWeights


def tiny_config_dict(output_dir, selector="random", seeds=(0, 1), episodes=2):
    return {
        "selector": selector,
        "episodes": episodes,
        "seeds": list(seeds),
        "target_accuracy": 0.5,
        "output_dir": output_dir,
        "env": {
            "n": 6, "num_areas": 3, "rounds": 5, "t_min": 2, "seed": 0,
            "static_fraction": 0.34, "task_hidden": [8], "local_epochs": 1,
        },
        "mobility": {"dwell_mean": 3.0},
        "dataset": {
            "num_classes": 3, "feature_dim": 4, "test_set_size": 50,
            "records_per_round_static": 2, "records_per_move": 3,
        },
        "agent": {"batch_size": 4, "replay_capacity": 200},
        "hidden": [8],
        "ga": {"population": 6, "generations": 2},
    }


def tiny_config(tmp_path, **kwargs):
    return harness.config_from_dict(tiny_config_dict(str(tmp_path / "out"), **kwargs))


class TestConfigParsing:
    def test_partial_config_fills_defaults(self):
        config = harness.config_from_dict({"selector": "ga"})
        assert config.selector == "ga"
        assert config.env.n == harness.default_config().env.n

    def test_unknown_section_rejected(self):
        with pytest.raises(ValueError, match="unknown config sections"):
            harness.config_from_dict({"selectors": "dqn"})

    def test_unknown_env_key_rejected(self):
        with pytest.raises(ValueError, match="unknown config keys"):
            harness.config_from_dict({"env": {"device_count": 4}})

    def test_weights_are_renormalized(self):
        config = harness.config_from_dict(
            {"weights": {"w1": 1.0, "w3": 1.0, "w4": 1.0}}
        )
        assert config.weights.as_tuple() == pytest.approx((1 / 3, 0, 1 / 3, 1 / 3))

    def test_explicit_transition_matrix(self):
        config = harness.config_from_dict(
            {
                "env": {"num_areas": 2, "n": 4},
                "mobility": {"transition": [[1.0, 0.0], [0.0, 1.0]],
                             "dwell_mean": 2.0},
            }
        )
        assert np.array_equal(config.mobility.transition, np.eye(2))

    def test_bad_selector_rejected(self):
        with pytest.raises(ValueError):
            harness.config_from_dict({"selector": "greedy"})

    def test_json_file_round_trip(self, tmp_path):
        path = tmp_path / "config.json"
        path.write_text(json.dumps(tiny_config_dict(str(tmp_path / "o"))))
        config = harness.load_config(str(path))
        assert config.env.n == 6


def read_metrics(path):
    with open(path) as fh:
        header = fh.readline()
        assert header.startswith(f"# {harness.METRICS_SCHEMA}")
        return list(csv.DictReader(fh))


class TestRunExperiment:
    def test_row_count_and_schema(self, tmp_path):
        config = tiny_config(tmp_path)
        result = harness.run_experiment(config)
        rows = read_metrics(result.paths["metrics"])
        assert len(rows) == len(config.seeds) * config.episodes * config.env.rounds
        assert rows[0]["run"] == "random"
        assert {"c1", "c2", "c3", "c4", "pun", "total_cost"} <= set(rows[0])

    def test_rerun_bit_identical(self, tmp_path):
        config_a = tiny_config(tmp_path / "a")
        config_b = tiny_config(tmp_path / "b")
        ra = harness.run_experiment(config_a)
        rb = harness.run_experiment(config_b)
        for key in ("metrics", "transitions"):
            with open(ra.paths[key], "rb") as fa, open(rb.paths[key], "rb") as fb:
                assert fa.read() == fb.read()

    def test_random_selector_writes_no_model(self, tmp_path):
        config = tiny_config(tmp_path)
        result = harness.run_experiment(config)
        assert not any(k.startswith("model") for k in result.paths)
        files = os.listdir(config.output_dir)
        assert not any(f.startswith("model") for f in files)

    def test_dqn_selector_writes_model_per_seed(self, tmp_path):
        config = tiny_config(tmp_path, selector="dqn", seeds=(3,), episodes=1)
        result = harness.run_experiment(config)
        assert "model_seed3" in result.paths
        loaded = dqn.load_agent(result.paths["model_seed3"])
        assert loaded.n == 6

    def test_transitions_log_readable(self, tmp_path):
        config = tiny_config(tmp_path, seeds=(0,), episodes=1)
        result = harness.run_experiment(config)
        transitions = dqn.read_transitions(result.paths["transitions"])
        assert len(transitions) == config.env.rounds

    def test_all_selectors_produce_valid_runs(self, tmp_path):
        for selector in harness.SELECTORS:
            config = tiny_config(tmp_path / selector, selector=selector,
                                 seeds=(0,), episodes=1)
            result = harness.run_experiment(config)
            rows = read_metrics(result.paths["metrics"])
            assert len(rows) == config.env.rounds


class TestAnalysis:
    def test_rounds_to_target_sentinel(self):
        trace = dqn.EpisodeTrace()
        assert harness.rounds_to_target(trace, 0.9, horizon=10) == 11

    def test_compare_summary(self, tmp_path):
        config = tiny_config(tmp_path, seeds=(0,), episodes=1)
        rows = harness.compare_command(config)
        assert [r["selector"] for r in rows] == list(harness.SELECTORS)
        for row in rows:
            assert 0.0 <= row["mean_accepted_fraction"] <= 1.0
            assert 1 <= row["median_rounds_to_target"] <= config.env.rounds + 1
        assert os.path.exists(os.path.join(config.output_dir, "compare.csv"))

    def test_ablation_three_scenarios(self, tmp_path):
        config = tiny_config(tmp_path, seeds=(0,), episodes=1)
        rows = harness.ablation_command(config)
        assert [r["scenario"] for r in rows] == ["main", "run1", "run2"]
        main = rows[0]
        assert (main["w1"], main["w2"], main["w3"], main["w4"]) == (0.25,) * 4
        for name in ("main", "run1", "run2"):
            meta_path = os.path.join(config.output_dir, name, "scenario.json")
            with open(meta_path) as fh:
                meta = json.load(fh)
            assert sum(meta["weights"]) == pytest.approx(1.0)


class TestPretrainCommand:
    def _log(self, tmp_path, config):
        result = harness.run_experiment(config)
        return result.paths["transitions"]

    def test_round_trip_parameters(self, tmp_path):
        config = tiny_config(tmp_path, seeds=(0,), episodes=2)
        log = self._log(tmp_path, config)
        out = str(tmp_path / "model.json")
        harness.pretrain_command(log, config, epochs=2, out_path=out)
        agent = dqn.load_agent(out)
        dqn.save_agent(str(tmp_path / "model2.json"), agent)
        with open(out) as fa, open(tmp_path / "model2.json") as fb:
            assert json.load(fa)["params"] == json.load(fb)["params"]

    def test_zero_epochs_equals_fresh_init(self, tmp_path):
        config = tiny_config(tmp_path, seeds=(0,), episodes=1)
        log = self._log(tmp_path, config)
        out = str(tmp_path / "model.json")
        harness.pretrain_command(log, config, epochs=0, out_path=out)
        loaded = dqn.load_agent(out)
        fresh = dqn.DqnAgent(
            n=config.env.n, num_areas=config.env.num_areas,
            horizon=config.env.rounds, config=config.agent,
            hidden=config.hidden, seed=config.env.seed,
        )
        for a, b in zip(loaded.theta.weights, fresh.theta.weights):
            assert np.array_equal(a, b)

    def test_corrupt_log_names_line(self, tmp_path):
        config = tiny_config(tmp_path, seeds=(0,), episodes=1)
        log = self._log(tmp_path, config)
        with open(log, "a") as fh:
            fh.write("oops\n")
        with pytest.raises(ValueError, match="line 6"):
            harness.pretrain_command(log, config, epochs=1,
                                     out_path=str(tmp_path / "m.json"))

    def test_empty_log_rejected(self, tmp_path):
        config = tiny_config(tmp_path)
        empty = tmp_path / "empty.jsonl"
        empty.write_text("")
        with pytest.raises(ValueError, match="empty"):
            harness.pretrain_command(str(empty), config, epochs=1,
                                     out_path=str(tmp_path / "m.json"))


class TestExportPlots:
    def test_long_format(self, tmp_path):
        config = tiny_config(tmp_path, seeds=(0,), episodes=1)
        result = harness.run_experiment(config)
        out = str(tmp_path / "long.csv")
        count = harness.export_plots(result.paths["metrics"], out)
        with open(out) as fh:
            rows = list(csv.DictReader(fh))
        assert len(rows) == count
        metrics_per_row = 11 + config.env.num_areas
        assert count == config.env.rounds * metrics_per_row
        assert {"metric", "value"} <= set(rows[0])

    def test_missing_schema_header_rejected(self, tmp_path):
        bad = tmp_path / "bad.csv"
        bad.write_text("a,b\n1,2\n")
        with pytest.raises(ValueError):
            harness.export_plots(str(bad), str(tmp_path / "out.csv"))


class TestWeightsForAblation:
    def test_scenarios_match_intent(self):
        main = ObjectiveWeights.normalized(*harness.ABLATION_SCENARIOS["main"])
        run1 = ObjectiveWeights.normalized(*harness.ABLATION_SCENARIOS["run1"])
        run2 = ObjectiveWeights.normalized(*harness.ABLATION_SCENARIOS["run2"])
        assert main.as_tuple() == (0.25, 0.25, 0.25, 0.25)
        assert run1.w2 == 0.0 and run1.w1 == pytest.approx(1 / 3)
        assert run2.w1 == run2.w3 == 0.0 and run2.w2 == 0.5 and run2.w4 == 0.5
