import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lowrank_search import io, lock
from lowrank_search.mdp import BERNOULLI, random_lowrank_mdp, random_policy_class, \
    sample_uniform_dataset


class TestMdpFormat:
    @settings(max_examples=20, deadline=None)
    @given(st.integers(1, 6), st.integers(1, 3), st.integers(1, 5), st.integers(0, 10_000))
    def test_roundtrip_is_exact(self, nx, nk, horizon, seed):
        mdp = random_lowrank_mdp(nx, nk, 1, horizon, seed=seed)
        back = io.loads_mdp(io.dumps_mdp(mdp))
        np.testing.assert_array_equal(back.transition, mdp.transition)
        np.testing.assert_array_equal(back.reward_mean, mdp.reward_mean)
        np.testing.assert_array_equal(back.initial_dist, mdp.initial_dist)
        assert back.horizon == horizon

    def test_file_roundtrip_keeps_noise(self, tmp_path):
        mdp = random_lowrank_mdp(3, 2, 1, 4, seed=1, reward_noise=BERNOULLI)
        io.write_mdp(mdp, tmp_path / "m.mdp")
        assert io.read_mdp(tmp_path / "m.mdp").reward_noise == BERNOULLI

    @pytest.mark.parametrize("mutate,needle", [
        (lambda t: t.replace("horizon = 4", "horizon = x"), "horizon"),
        (lambda t: t.replace("[transition]", "[transitions]"), "unknown section"),
        (lambda t: t.replace("num_actions = 2\n", ""), "num_actions"),
        (lambda t: t + "0.5 0.5\n", "transition needs"),
        (lambda t: t.replace("[reward_mean]\n", "[reward_mean]\n1 2 3\n"), "reward_mean"),
    ])
    def test_malformed(self, mutate, needle):
        text = io.dumps_mdp(random_lowrank_mdp(3, 2, 1, 4, seed=1))
        with pytest.raises(io.FormatError, match=needle):
            io.loads_mdp(mutate(text))

    def test_invalid_probabilities_reported(self):
        text = io.dumps_mdp(random_lowrank_mdp(2, 1, 1, 4, seed=1))
        lines = text.splitlines()
        lines[-1] = "7"
        with pytest.raises(io.FormatError):
            io.loads_mdp("\n".join(lines))

    def test_missing_file(self, tmp_path):
        with pytest.raises(io.FormatError, match="cannot read"):
            io.read_mdp(tmp_path / "absent.mdp")


class TestDatasetFormat:
    def test_roundtrip(self, tmp_path):
        mdp = random_lowrank_mdp(4, 3, 2, 5, seed=2, reward_noise=BERNOULLI)
        data = sample_uniform_dataset(mdp, 30, seed=8)
        io.write_dataset(data, tmp_path / "d.txt")
        back = io.read_dataset(tmp_path / "d.txt")
        np.testing.assert_array_equal(back.observations, data.observations)
        np.testing.assert_array_equal(back.actions, data.actions)
        np.testing.assert_array_equal(back.rewards, data.rewards)
        assert back.seed == 8 and back.num_actions == 3

    def test_empty_dataset(self, tmp_path):
        path = tmp_path / "empty.txt"
        path.write_text("5 2 0 1\n")
        with pytest.raises(io.FormatError, match="empty"):
            io.read_dataset(path)

    def test_blank_file(self, tmp_path):
        path = tmp_path / "blank.txt"
        path.write_text("")
        with pytest.raises(io.FormatError, match="header"):
            io.read_dataset(path)

    def test_out_of_order(self, tmp_path):
        path = tmp_path / "bad.txt"
        path.write_text("2 2 1 0\n0 2 0 0 0.5\n0 1 0 0 0.5\n")
        with pytest.raises(io.FormatError, match="order"):
            io.read_dataset(path)

    def test_action_range(self, tmp_path):
        path = tmp_path / "bad.txt"
        path.write_text("1 2 1 0\n0 1 0 5 0.5\n")
        with pytest.raises(io.FormatError, match="range"):
            io.read_dataset(path)

    def test_truncated(self, tmp_path):
        path = tmp_path / "bad.txt"
        path.write_text("2 2 1 0\n0 1 0 0 0.5\n")
        with pytest.raises(io.FormatError, match="expected 2"):
            io.read_dataset(path)


class TestPolicyFormat:
    def test_roundtrip(self, tmp_path):
        pols = random_policy_class(6, 3, 4, seed=2)
        io.write_policies(pols, tmp_path / "p.txt")
        back = io.read_policies(tmp_path / "p.txt")
        assert all(np.array_equal(a.table, b.table) for a, b in zip(pols, back))

    def test_ragged(self, tmp_path):
        path = tmp_path / "p.txt"
        path.write_text("0 1 0\n1 1\n")
        with pytest.raises(io.FormatError, match="disagree"):
            io.read_policies(path)

    def test_empty(self, tmp_path):
        path = tmp_path / "p.txt"
        path.write_text("# nothing\n")
        with pytest.raises(io.FormatError, match="empty"):
            io.read_policies(path)


class TestSidecar:
    def test_roundtrip(self, tmp_path):
        params = lock.LockParams(2, 10, 0.2, (0.4,))
        phi = lock.random_latent_map(params, 3)
        io.write_lock_sidecar(tmp_path / "s.json", params, phi, 1)
        p2, phi2, star = io.read_lock_sidecar(tmp_path / "s.json")
        assert p2 == params and star == 1
        np.testing.assert_array_equal(phi2.phi, phi.phi)

    def test_corrupt(self, tmp_path):
        path = tmp_path / "s.json"
        path.write_text("{\"d\": 2}")
        with pytest.raises(io.FormatError):
            io.read_lock_sidecar(path)
