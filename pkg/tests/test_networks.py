import numpy as np
import pytest

from conftest import fd_gradcheck
from ssmrl import autodiff as ad
from ssmrl.networks import ActorCarry, ActorConfig, ActorNetwork, CriticNetwork
from ssmrl.ssm import DivergenceError


def small_actor(step_mode="naive", seed=0, blocks=2):
    cfg = ActorConfig(state_dim=2, action_dim=1, n_channels=6, n_state=8,
                      n_blocks=blocks, dropout=0.0, step_mode=step_mode)
    actor = ActorNetwork(cfg, rng_seed=seed)
    # the head starts at zero; randomize it so outputs are informative
    rng = np.random.default_rng(seed + 100)
    actor.params["head/W"].data = 0.3 * rng.standard_normal((6, 1))
    actor.params["head/b"].data = 0.1 * rng.standard_normal(1)
    return actor


def run_step_mode(actor, states, prev_actions, prev_rtgs):
    b, length = states.shape[:2]
    carry = actor.init_carry((b,))
    out = np.empty((b, length, actor.config.action_dim))
    for t in range(length):
        a, carry = actor.forward_step(carry, states[:, t], prev_actions[:, t],
                                      prev_rtgs[:, t])
        out[:, t] = a
    return out


class TestViewsAgree:
    @pytest.mark.parametrize("step_mode", ["naive", "compensated"])
    @pytest.mark.parametrize("length", [1, 17, 200])
    def test_sequence_equals_steps(self, rng, step_mode, length):
        actor = small_actor(step_mode)
        s = rng.standard_normal((3, length, 2))
        a = rng.standard_normal((3, length, 1))
        r = rng.standard_normal((3, length))
        y_seq = actor.forward_sequence(s, a, r).data
        y_step = run_step_mode(actor, s, a, r)
        np.testing.assert_allclose(y_seq, y_step, atol=1e-10)

    def test_train_step_matches_fast_step(self, rng):
        actor = small_actor()
        carry = actor.init_carry((2,))
        # evolve a few steps to get a non-trivial carry
        for _ in range(3):
            _, carry = actor.forward_step(carry, rng.standard_normal((2, 2)),
                                          rng.standard_normal((2, 1)),
                                          rng.standard_normal(2))
        s = rng.standard_normal((2, 2))
        a = rng.standard_normal((2, 1))
        r = rng.standard_normal(2)
        fast, _ = actor.forward_step(carry, s, a, r)
        train = actor.forward_step_train(carry, s, a, r).data
        np.testing.assert_allclose(fast, train, atol=1e-12)

    def test_actions_respect_bounds(self, rng):
        cfg = ActorConfig(state_dim=2, action_dim=1, n_channels=6, n_state=8,
                          n_blocks=1, action_low=-0.3, action_high=0.7)
        actor = ActorNetwork(cfg)
        actor.params["head/W"].data += 50.0  # drive tanh to saturation
        out = actor.forward_sequence(rng.standard_normal((1, 9, 2)),
                                     rng.standard_normal((1, 9, 1)),
                                     rng.standard_normal((1, 9))).data
        assert out.min() >= -0.3 - 1e-12 and out.max() <= 0.7 + 1e-12


class TestCarry:
    def test_array_roundtrip_exact(self, rng):
        actor = small_actor()
        carry = actor.init_carry((4,))
        for _ in range(5):
            _, carry = actor.forward_step(carry, rng.standard_normal((4, 2)),
                                          rng.standard_normal((4, 1)),
                                          rng.standard_normal(4))
        flat = carry.to_array()
        back = ActorCarry.from_array(flat, actor.config)
        for a, b in zip(carry.x_re + carry.x_im + carry.e_re + carry.e_im,
                        back.x_re + back.x_im + back.e_re + back.e_im):
            assert np.array_equal(a, b)
        assert np.array_equal(carry.prev_action, back.prev_action)
        assert np.array_equal(carry.prev_rtg, back.prev_rtg)

    def test_compensation_terms_zero_in_naive_mode(self, rng):
        actor = small_actor("naive")
        carry = actor.init_carry()
        _, carry = actor.forward_step(carry, rng.standard_normal(2),
                                      rng.standard_normal(1),
                                      rng.standard_normal(()))
        assert all(np.all(e == 0) for e in carry.e_re + carry.e_im)

    def test_divergence_detected(self):
        actor = small_actor()
        actor.params["block0/lam_re"].data[:] = 80.0  # unstable pole
        carry = actor.init_carry()
        s, a, r = np.ones(2), np.ones(1), np.ones(())
        with pytest.raises(DivergenceError):
            for _ in range(3000):
                _, carry = actor.forward_step(carry, s, a, r)


class TestParams:
    def test_freeze_kernel(self):
        actor = small_actor()
        actor.freeze_kernel()
        for i in range(actor.config.n_blocks):
            for name in ("lam_re", "lam_im", "log_delta", "c_re", "c_im"):
                assert not actor.params[f"block{i}/{name}"].requires_grad
            assert actor.params[f"block{i}/mix/W"].requires_grad

    def test_copy_is_deep(self):
        actor = small_actor()
        clone = actor.copy()
        clone.params["head/W"].data += 1.0
        assert not np.array_equal(clone.params["head/W"].data,
                                  actor.params["head/W"].data)

    def test_eigenvalues_inside_unit_disk(self):
        actor = small_actor(blocks=3)
        assert np.all(np.abs(actor.eigenvalues()) < 1.0)

    def test_zero_head_gives_centered_actions(self, rng):
        cfg = ActorConfig(state_dim=2, action_dim=1, n_channels=6, n_state=8,
                          n_blocks=1, action_low=-2.0, action_high=4.0)
        actor = ActorNetwork(cfg)
        out = actor.forward_sequence(rng.standard_normal((1, 4, 2)),
                                     rng.standard_normal((1, 4, 1)),
                                     rng.standard_normal((1, 4))).data
        assert np.allclose(out, 1.0)  # tanh(0) scaled to the box center


class TestKernelTaps:
    def test_truncation_blocks_old_inputs(self, rng):
        actor = small_actor(blocks=1)
        length, taps = 30, 5
        s = np.zeros((1, length, 2))
        a = np.zeros((1, length, 1))
        r = np.zeros((1, length))
        base = actor.forward_sequence(s, a, r, kernel_taps=taps).data
        s2 = s.copy()
        s2[0, 0] = 10.0  # old event, outside every truncated window
        bumped = actor.forward_sequence(s2, a, r, kernel_taps=taps).data
        # positions >= taps see the same truncated history
        np.testing.assert_allclose(bumped[0, taps:], base[0, taps:], atol=1e-12)
        assert not np.allclose(bumped[0, 0], base[0, 0])

    def test_full_taps_is_identity(self, rng):
        actor = small_actor()
        s = rng.standard_normal((1, 12, 2))
        a = rng.standard_normal((1, 12, 1))
        r = rng.standard_normal((1, 12))
        np.testing.assert_array_equal(
            actor.forward_sequence(s, a, r, kernel_taps=12).data,
            actor.forward_sequence(s, a, r).data)


class TestGradients:
    def test_full_actor_gradcheck(self, rng):
        actor = small_actor()
        s = rng.standard_normal((2, 6, 2))
        a = rng.standard_normal((2, 6, 1))
        r = rng.standard_normal((2, 6))
        w = rng.standard_normal((2, 6, 1))
        params = [p for p in actor.params.values() if p.requires_grad]

        def loss():
            return ad.tsum(ad.mul(actor.forward_sequence(s, a, r), w))

        assert fd_gradcheck(loss, params) < 1e-4

    def test_step_train_gradcheck(self, rng):
        actor = small_actor()
        carry = actor.init_carry((2,))
        for _ in range(2):
            _, carry = actor.forward_step(carry, rng.standard_normal((2, 2)),
                                          rng.standard_normal((2, 1)),
                                          rng.standard_normal(2))
        s = rng.standard_normal((2, 2))
        a = rng.standard_normal((2, 1))
        r = rng.standard_normal(2)
        actor.freeze_kernel()
        params = [p for p in actor.params.values() if p.requires_grad]

        def loss():
            return ad.tsum(actor.forward_step_train(carry, s, a, r))

        assert fd_gradcheck(loss, params) < 1e-4


class TestCritic:
    def test_forward_shape_and_dims(self, rng):
        critic = CriticNetwork(3, 2, hidden=8)
        q = critic.forward(rng.standard_normal((5, 3)),
                           rng.standard_normal((5, 2)))
        assert q.data.shape == (5, 1)
        with pytest.raises(ValueError):
            critic.forward(rng.standard_normal((5, 4)),
                           rng.standard_normal((5, 2)))

    def test_gradcheck(self, rng):
        critic = CriticNetwork(2, 1, hidden=6)
        s = rng.standard_normal((4, 2))
        a = rng.standard_normal((4, 1))
        params = list(critic.params.values())
        assert fd_gradcheck(
            lambda: ad.tsum(critic.forward(s, a)), params) < 1e-4

    def test_copy_independent(self, rng):
        critic = CriticNetwork(2, 1)
        clone = critic.copy()
        clone.params["fc1/W"].data += 1.0
        assert not np.array_equal(clone.params["fc1/W"].data,
                                  critic.params["fc1/W"].data)
