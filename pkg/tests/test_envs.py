import numpy as np
import pytest

from ssmrl.data import NormStats
from ssmrl.envs import (DelayedCueEnv, DelayedCuePolicy, PointMassController,
                        PointMassEnv, ScriptedActor, evaluate_policy,
                        expert_policy, generate_dataset, make_env,
                        rollout_policy)


class TestPointMass:
    def test_dynamics_step(self):
        env = PointMassEnv()
        env.reset(0)
        env._p, env._v = 0.0, 0.1
        obs, r, done = env.step([0.5])
        # v' = 0.95*0.1 + 0.1*0.5 = 0.145, p' = 0.145
        assert obs[1] == pytest.approx(0.145)
        assert obs[0] == pytest.approx(0.145)
        assert r == pytest.approx(1.0 - abs(0.145 - 1.0))
        assert not done

    def test_reward_clipped_at_zero(self):
        env = PointMassEnv()
        env.reset(0)
        env._p, env._v = -5.0, 0.0
        _, r, _ = env.step([0.0])
        assert r == 0.0

    def test_action_clipped(self):
        env = PointMassEnv()
        env.reset(0)
        env._p, env._v = 0.0, 0.0
        obs, _, _ = env.step([100.0])
        assert obs[1] == pytest.approx(0.1)  # as if a = 1

    def test_horizon(self):
        env = PointMassEnv()
        env.reset(1)
        for t in range(env.max_episode_len):
            _, _, done = env.step([0.0])
        assert done and t == 199

    def test_reset_seeded(self):
        env = PointMassEnv()
        a = env.reset((3, 4))
        b = env.reset((3, 4))
        assert np.array_equal(a, b)
        assert -1.0 <= a[0] <= 1.0 and a[1] == 0.0


class TestDelayedCue:
    def test_cue_only_at_start(self):
        env = DelayedCueEnv(horizon=5)
        obs = env.reset((0, 0))
        assert obs[0] in (-1.0, 1.0)
        for _ in range(4):
            obs, r, done = env.step([0.0])
            assert obs[0] == 0.0 and r == 0.0 and not done

    def test_final_reward_sign(self):
        for cue_ep, action, want in ((0, 1.0, 1.0), (0, -1.0, -1.0),
                                     (1, -1.0, 1.0), (1, 1.0, -1.0)):
            env = DelayedCueEnv(horizon=2)
            obs = env.reset((0, cue_ep))  # parity of episode index sets cue
            env.step([0.0])
            _, r, done = env.step([action])
            assert done and r == want

    def test_tuple_seed_cues_balanced(self):
        env = DelayedCueEnv()
        cues = [env.reset((9, ep))[0] for ep in range(10)]
        assert sum(c > 0 for c in cues) == 5

    def test_expert_waits_until_the_end(self):
        env = DelayedCueEnv(horizon=4)
        t = rollout_policy(env, DelayedCuePolicy(env), seed=(0, 0))
        assert np.all(t.actions[:-1] == 0.0)
        assert t.actions[-1, 0] == t.states[0, 0]
        assert t.total_return == 1.0


class TestMakeEnv:
    def test_names(self):
        assert isinstance(make_env("pointmass"), PointMassEnv)
        assert isinstance(make_env("delayedcue"), DelayedCueEnv)

    def test_unknown(self):
        with pytest.raises(ValueError):
            make_env("cartpole")


class TestTiers:
    @pytest.mark.parametrize("env_name", ["pointmass", "delayedcue"])
    def test_ordering(self, env_name):
        env = make_env(env_name)
        means = {}
        for tier in ("expert", "medium"):
            trajs = generate_dataset(env, tier, 20, seed=0)
            means[tier] = np.mean([t.total_return for t in trajs])
        assert means["expert"] > means["medium"]

    def test_replay_spans_quality(self):
        env = make_env("pointmass")
        rets = [t.total_return
                for t in generate_dataset(env, "replay", 20, seed=0)]
        expert = np.mean([t.total_return
                          for t in generate_dataset(env, "expert", 10, seed=0)])
        assert min(rets) < 0.5 * expert  # includes poor behavior
        assert max(rets) > 0.8 * expert  # and near-expert behavior

    def test_deterministic(self):
        env = make_env("pointmass")
        a = generate_dataset(env, "medium", 5, seed=3)
        b = generate_dataset(env, "medium", 5, seed=3)
        for x, y in zip(a, b):
            assert np.array_equal(x.actions, y.actions)

    def test_writes_jsonl(self, tmp_path):
        out = tmp_path / "d.jsonl"
        generate_dataset(make_env("pointmass"), "expert", 3, seed=0,
                         out_path=out)
        assert len(out.read_text().strip().splitlines()) == 3

    def test_bad_args(self):
        env = make_env("pointmass")
        with pytest.raises(ValueError):
            generate_dataset(env, "gold", 3, seed=0)
        with pytest.raises(ValueError):
            generate_dataset(env, "expert", 0, seed=0)


class TestEvaluate:
    def test_scripted_actor_matches_rollout(self):
        env = make_env("pointmass")
        wrapped = ScriptedActor(env, PointMassController(env))
        res = evaluate_policy(env, wrapped, 1.0, 3, seed=(0, 0))
        for ep in range(3):
            t = rollout_policy(env, PointMassController(env), seed=((0, 0), ep))
            assert res.returns[ep] == pytest.approx(t.total_return)

    def test_deterministic_per_seed(self):
        env = make_env("delayedcue")
        wrapped = ScriptedActor(env, DelayedCuePolicy(env))
        a = evaluate_policy(env, wrapped, 1.0, 4, seed=(1, 0))
        b = evaluate_policy(env, wrapped, 1.0, 4, seed=(1, 0))
        assert np.array_equal(a.returns, b.returns)
        assert a.mean_return == 1.0

    def test_dimension_mismatch_raises(self):
        from ssmrl.networks import ActorConfig, ActorNetwork
        actor = ActorNetwork(ActorConfig(state_dim=3, action_dim=1,
                                         n_channels=4, n_state=4, n_blocks=1))
        with pytest.raises(ValueError):
            evaluate_policy(make_env("pointmass"), actor, 1.0, 1, seed=(0, 0))

    def test_rtg_decrements_by_scaled_reward(self):
        env = make_env("pointmass")
        stats = NormStats(state_mean=np.zeros(2), state_std=np.ones(2),
                          return_max=100.0, return_min=0.0)

        seen = []

        class Probe(ScriptedActor):
            def forward_step(self, carry, s, a_prev, rtg_prev):
                seen.append(float(rtg_prev))
                return super().forward_step(carry, s, a_prev, rtg_prev)

        evaluate_policy(env, Probe(env, PointMassController(env)), 1.0, 1,
                        seed=(0, 0), stats=stats)
        t = rollout_policy(env, PointMassController(env), seed=((0, 0), 0))
        want = 1.0 - np.concatenate([[0.0], np.cumsum(t.rewards[:-1])]) / 100.0
        np.testing.assert_allclose(seen, want, atol=1e-12)
