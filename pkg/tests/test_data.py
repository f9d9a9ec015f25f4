import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ssmrl.data import (NormStats, Trajectory, collate, compute_returns_to_go,
                        load_dataset, make_batches, save_dataset)


def make_traj(rng, length=6, ds=2, da=1):
    return Trajectory.build(rng.standard_normal((length, ds)),
                            rng.standard_normal((length, da)),
                            rng.standard_normal(length))


class TestReturnsToGo:
    def test_known_value(self):
        assert np.array_equal(compute_returns_to_go([1.0, 2.0, 3.0]),
                              [6.0, 5.0, 3.0])

    @given(st.lists(st.floats(-100, 100), min_size=1, max_size=50))
    @settings(max_examples=100, deadline=None)
    def test_matches_suffix_sum_oracle(self, rewards):
        rtg = compute_returns_to_go(rewards)
        for i in range(len(rewards)):
            assert rtg[i] == pytest.approx(sum(rewards[i:]), abs=1e-9)

    def test_recurrence_identity(self, rng):
        r = rng.standard_normal(50)
        rtg = compute_returns_to_go(r)
        # R_i = R_{i-1} - r_{i-1} by construction of the suffix sums
        np.testing.assert_allclose(rtg[1:], rtg[:-1] - r[:-1], atol=1e-12)


class TestTrajectory:
    def test_build_and_total(self, rng):
        t = make_traj(rng, length=4)
        assert len(t) == 4
        assert t.total_return == pytest.approx(t.rewards.sum())

    def test_length_mismatch_raises(self, rng):
        with pytest.raises(ValueError):
            Trajectory.build(np.zeros((3, 2)), np.zeros((2, 1)), np.zeros(3))


class TestNormStats:
    def test_standardize(self, rng):
        trajs = [make_traj(rng, 20) for _ in range(5)]
        stats = NormStats.from_trajectories(trajs)
        allstates = np.concatenate([stats.standardize(t.states) for t in trajs])
        np.testing.assert_allclose(allstates.mean(axis=0), 0.0, atol=1e-12)
        np.testing.assert_allclose(allstates.std(axis=0), 1.0, atol=1e-12)

    def test_constant_feature_floor(self):
        t = Trajectory.build(np.ones((4, 1)), np.zeros((4, 1)), np.ones(4))
        stats = NormStats.from_trajectories([t])
        assert np.all(np.isfinite(stats.standardize(t.states)))

    def test_best_maps_to_one(self, rng):
        trajs = [make_traj(rng, 10) for _ in range(6)]
        stats = NormStats.from_trajectories(trajs)
        assert stats.normalize_rtg(stats.return_max) == pytest.approx(1.0)
        assert stats.normalize_rtg(stats.return_min) == pytest.approx(0.0)
        assert stats.target_to_raw(1.0) == pytest.approx(stats.return_max)

    def test_degenerate_returns(self):
        t = Trajectory.build(np.zeros((3, 1)), np.zeros((3, 1)), np.ones(3))
        stats = NormStats.from_trajectories([t, t])
        assert stats.return_scale > 0
        assert stats.normalize_rtg(stats.return_max) == pytest.approx(1.0)


class TestJsonl:
    def test_roundtrip_exact(self, tmp_path, rng):
        trajs = [make_traj(rng, n) for n in (3, 7, 5)]
        path = tmp_path / "d.jsonl"
        save_dataset(trajs, path)
        loaded, _ = load_dataset(path)
        for a, b in zip(trajs, loaded):
            assert np.array_equal(a.states, b.states)
            assert np.array_equal(a.actions, b.actions)
            assert np.array_equal(a.rewards, b.rewards)

    def test_malformed_line_reports_position(self, tmp_path):
        path = tmp_path / "bad.jsonl"
        path.write_text('{"states": [[0]], "actions": [[0]], "rewards": [0]}\n'
                        "not json\n")
        with pytest.raises(ValueError, match="bad.jsonl:2"):
            load_dataset(path)

    def test_missing_key_raises(self, tmp_path):
        path = tmp_path / "bad.jsonl"
        path.write_text(json.dumps({"states": [[0]], "actions": [[0]]}) + "\n")
        with pytest.raises(ValueError, match=":1"):
            load_dataset(path)

    def test_empty_raises(self, tmp_path):
        path = tmp_path / "empty.jsonl"
        path.write_text("")
        with pytest.raises(ValueError, match="empty"):
            load_dataset(path)


class TestCollate:
    def test_padding_and_mask(self, rng):
        trajs = [make_traj(rng, 3), make_traj(rng, 5)]
        b = collate(trajs)
        assert b.states.shape == (2, 5, 2)
        assert np.array_equal(b.mask, [[1, 1, 1, 0, 0], [1, 1, 1, 1, 1]])
        assert np.all(b.states[0, 3:] == 0)
        assert np.all(b.actions[0, 3:] == 0)

    def test_shifted_inputs(self, rng):
        t = make_traj(rng, 4)
        b = collate([t])
        assert np.all(b.prev_actions[0, 0] == 0)
        np.testing.assert_array_equal(b.prev_actions[0, 1:4], t.actions[:3])
        # position 0 is conditioned on the episode's own total return
        assert b.prev_rtgs[0, 0] == t.returns_to_go[0]
        np.testing.assert_array_equal(b.prev_rtgs[0, 1:4], t.returns_to_go[:3])

    def test_collate_normalizes_with_stats(self, rng):
        trajs = [make_traj(rng, 4) for _ in range(3)]
        stats = NormStats.from_trajectories(trajs)
        b = collate(trajs, stats)
        np.testing.assert_allclose(b.states[0, 0],
                                   stats.standardize(trajs[0].states[0]))

    def test_make_batches_deterministic(self, rng):
        trajs = [make_traj(rng, 4) for _ in range(10)]
        g1 = make_batches(trajs, 3, np.random.default_rng(7))
        g2 = make_batches(trajs, 3, np.random.default_rng(7))
        for _ in range(5):
            assert np.array_equal(next(g1).states, next(g2).states)

    def test_bad_batch_size(self, rng):
        with pytest.raises(ValueError):
            next(make_batches([make_traj(rng)], 0, rng))
