import json

import numpy as np
import pytest

from lowrank_search import harness, io
from lowrank_search.mdp import constant_reward_mdp, induced_transition, spectrum_of

SMALL = harness.ExperimentConfig(num_observations=5, rank=1, d=1, horizon=8, n=4000,
                                 num_policies=4, restarts=4, iterations=100, seed=7,
                                 repetitions=3)


class TestConfig:
    def test_from_ini(self, tmp_path):
        path = tmp_path / "c.ini"
        path.write_text("[run]\nseed = 5\nrepetitions = 2\n[env]\nnum_observations = 6\n"
                        "rank = 2\n[search]\nmode = adaptive\nd = 2\n[lock]\nprogress_probs = 0.3\n")
        cfg = harness.ExperimentConfig.from_ini(path)
        assert (cfg.seed, cfg.repetitions, cfg.rank, cfg.mode) == (5, 2, 2, "adaptive")
        assert cfg.progress_probs == (0.3,)

    @pytest.mark.parametrize("body,needle", [
        ("[run]\nbogus = 1\n", "unknown config key"),
        ("[other]\nseed = 1\n", "unknown section"),
        ("[run]\nseed = x\n", "seed"),
        ("[search]\nmode = greedy\n", "mode"),
        ("seed = 1\n", "section"),
    ])
    def test_bad_ini(self, tmp_path, body, needle):
        path = tmp_path / "c.ini"
        path.write_text(body)
        with pytest.raises(io.FormatError, match=needle):
            harness.ExperimentConfig.from_ini(path)

    def test_validation(self):
        with pytest.raises(ValueError):
            harness.ExperimentConfig(env="file")
        with pytest.raises(ValueError):
            harness.ExperimentConfig(env="lock", num_actions=3)
        with pytest.raises(ValueError):
            harness.ExperimentConfig(mode="rank_adaptive", n=10, horizon=20)
        with pytest.raises(ValueError):
            harness.ExperimentConfig(delta=1.5)

    def test_bool_coercion(self):
        assert harness.ExperimentConfig.from_mapping({"fixed_env": "yes"}).fixed_env
        with pytest.raises(ValueError):
            harness.ExperimentConfig.from_mapping({"fixed_env": "maybe"})


class TestInstances:
    def test_random_rank(self):
        inst = harness.build_instance(SMALL.replace(rank=2, num_observations=8))
        for p in inst.policies:
            assert spectrum_of(induced_transition(inst.mdp, p))[1] <= 2

    def test_fixed_env_shared_across_repetitions(self):
        cfg = SMALL.replace(fixed_env=True)
        a, b = harness.build_instance(cfg, 0), harness.build_instance(cfg, 1)
        np.testing.assert_array_equal(a.mdp.transition, b.mdp.transition)
        c, d = harness.build_instance(SMALL, 0), harness.build_instance(SMALL, 1)
        assert not np.array_equal(c.mdp.transition, d.mdp.transition)

    def test_lock_instance(self):
        cfg = harness.ExperimentConfig(env="lock", d=2, horizon=10, num_policies=4, seed=1)
        inst = harness.build_instance(cfg)
        assert inst.lock_params.d == 2 and inst.pi_star_index is not None
        assert inst.mdp.num_observations == inst.lock_params.N

    def test_file_instance(self, tmp_path):
        inst = harness.build_instance(SMALL)
        io.write_mdp(inst.mdp, tmp_path / "m.mdp")
        io.write_policies(inst.policies, tmp_path / "p.txt")
        cfg = SMALL.replace(env="file", env_file=str(tmp_path / "m.mdp"),
                            policies_file=str(tmp_path / "p.txt"))
        other = harness.build_instance(cfg)
        np.testing.assert_array_equal(other.mdp.transition, inst.mdp.transition)
        assert len(other.policies) == len(inst.policies)


class TestRun:
    def test_records_and_stream(self, tmp_path):
        out = tmp_path / "r.jsonl"
        recs = harness.run(SMALL, output=out)
        assert [r.repetition for r in recs] == [0, 1, 2]
        config, results = harness.read_records(out)
        assert config["seed"] == 7
        assert [r["chosen_index"] for r in results] == [r.chosen_index for r in recs]
        for r in recs:
            assert r.suboptimality >= 0
            assert r.v_chosen <= r.v_max

    def test_thread_independence(self):
        a = harness.run(SMALL, threads=1)
        b = harness.run(SMALL, threads=3)
        assert [r.deterministic_part() for r in a] == [r.deterministic_part() for r in b]

    def test_single_repetition_inner_threads(self):
        cfg = SMALL.replace(repetitions=1, mode="adaptive", d=2)
        a = harness.run(cfg, threads=1)
        b = harness.run(cfg, threads=4)
        assert a[0].deterministic_part() == b[0].deterministic_part()

    def test_zero_rewards_zero_errors(self, tmp_path):
        inst = harness.build_instance(SMALL)
        io.write_mdp(constant_reward_mdp(inst.mdp, 0.0), tmp_path / "z.mdp")
        cfg = SMALL.replace(env="file", env_file=str(tmp_path / "z.mdp"), repetitions=1)
        rec = harness.run(cfg)[0]
        assert rec.v_max == 0.0 and rec.chosen_index == 0
        assert all(e == 0.0 for e in rec.estimation_errors)

    def test_bad_stream(self, tmp_path):
        path = tmp_path / "r.jsonl"
        path.write_text("{not json\n")
        with pytest.raises(io.FormatError):
            harness.read_records(path)

    def test_records_are_json(self):
        rec = harness.run(SMALL.replace(repetitions=1))[0]
        json.dumps(rec.to_dict())
        assert "wall_clock" not in rec.deterministic_part()


def test_describe_text():
    text = harness.describe_config(SMALL).to_text()
    assert "rank" in text and text.count("\n") >= SMALL.num_policies


def test_describe_lock():
    cfg = harness.ExperimentConfig(env="lock", d=2, horizon=10, num_policies=3, seed=2)
    rep = harness.describe_config(cfg)
    assert all(p.lock_check.spectrum_ok for p in rep.policies)
    assert "lock: d = 2" in rep.to_text()
