"""Deterministic desk-scale environments and tiered dataset generators."""

from dataclasses import dataclass

import numpy as np

from ssmrl.data import Trajectory, save_dataset


class PointMassEnv:
    """1-D point mass pushed toward a fixed goal by a bounded force.

    v' = 0.95 v + 0.1 a,  p' = p + v',  reward = 1 - min(1, |p' - goal|).
    The dense positive reward keeps offline learning feasible with tiny
    datasets, and makes the return-to-go input decrease toward zero during
    an episode (so evaluation stays inside the training range).
    """

    name = "pointmass"
    state_dim = 2
    action_dim = 1
    action_low = -1.0
    action_high = 1.0
    max_episode_len = 200
    goal = 1.0

    def __init__(self):
        self._p = 0.0
        self._v = 0.0
        self._t = 0

    def reset(self, seed):
        rng = np.random.default_rng(seed)
        self._p = float(rng.uniform(-1.0, 1.0))
        self._v = 0.0
        self._t = 0
        return np.array([self._p, self._v])

    def step(self, action):
        a = float(np.clip(np.asarray(action).reshape(-1)[0],
                          self.action_low, self.action_high))
        self._v = 0.95 * self._v + 0.1 * a
        self._p = self._p + self._v
        self._t += 1
        reward = 1.0 - min(1.0, abs(self._p - self.goal))
        done = self._t >= self.max_episode_len
        return np.array([self._p, self._v]), reward, done


class DelayedCueEnv:
    """Memory probe: a cue shown only at t=0 must dictate the final action.

    Observation is the cue at t=0 and zero afterwards.  The only reward
    arrives at the last step: +1 if sign(a_T) matches the cue, else -1.
    """

    name = "delayedcue"
    state_dim = 1
    action_dim = 1
    action_low = -1.0
    action_high = 1.0

    def __init__(self, horizon=100):
        self.max_episode_len = horizon
        self._cue = 1.0
        self._t = 0

    def reset(self, seed):
        # tuple seeds (run, episode) get alternating cues so any batch of
        # consecutive episodes is exactly balanced; scalar seeds draw randomly
        if isinstance(seed, tuple):
            self._cue = 1.0 if seed[-1] % 2 == 0 else -1.0
        else:
            rng = np.random.default_rng(seed)
            self._cue = 1.0 if rng.random() < 0.5 else -1.0
        self._t = 0
        return np.array([self._cue])

    def step(self, action):
        a = float(np.asarray(action).reshape(-1)[0])
        self._t += 1
        done = self._t >= self.max_episode_len
        reward = 0.0
        if done:
            reward = 1.0 if np.sign(a) == self._cue else -1.0
        return np.array([0.0]), reward, done


def make_env(name, **kwargs):
    if name == "pointmass":
        return PointMassEnv()
    if name == "delayedcue":
        return DelayedCueEnv(**kwargs)
    raise ValueError(f"unknown environment {name!r}")


# ---------------------------------------------------------------------------
# scripted policies

class PointMassController:
    """PD feedback toward the goal; the expert and the BC regression target."""

    kp = 0.8
    kd = 6.0

    def __init__(self, env):
        self.goal = env.goal

    def reset(self, obs):
        pass

    def act(self, obs, t):
        p, v = obs
        return np.array([np.clip(self.kp * (self.goal - p) - self.kd * v,
                                 -1.0, 1.0)])


class DelayedCuePolicy:
    """Remembers the cue and plays it on the final step, zero before."""

    def __init__(self, env):
        self.horizon = env.max_episode_len
        self._cue = 0.0

    def reset(self, obs):
        self._cue = float(obs[0])

    def act(self, obs, t):
        return np.array([self._cue if t == self.horizon - 1 else 0.0])


def expert_policy(env):
    if isinstance(env, PointMassEnv):
        return PointMassController(env)
    if isinstance(env, DelayedCueEnv):
        return DelayedCuePolicy(env)
    raise ValueError(f"no scripted expert for {env!r}")


class RandomPolicy:
    def __init__(self, env, rng):
        self.env = env
        self.rng = rng

    def reset(self, obs):
        pass

    def act(self, obs, t):
        return self.rng.uniform(self.env.action_low, self.env.action_high,
                                size=self.env.action_dim)


class LinearPolicy:
    """Affine state feedback, fit by ridge regression on rollouts."""

    def __init__(self, env, weights):
        self.env = env
        self.weights = weights  # (ds + 1, da)

    def reset(self, obs):
        pass

    def act(self, obs, t):
        a = np.append(obs, 1.0) @ self.weights
        return np.clip(a, self.env.action_low, self.env.action_high)


def rollout_policy(env, policy, seed, noise_std=0.0, random_frac=0.0, rng=None):
    """Roll one episode; optional Gaussian action noise and a fraction of
    uniformly random actions.  Returns a Trajectory."""
    obs = env.reset(seed)
    policy.reset(obs)
    states, actions, rewards = [], [], []
    done = False
    t = 0
    while not done:
        a = np.asarray(policy.act(obs, t), dtype=np.float64)
        if rng is not None and random_frac > 0 and rng.random() < random_frac:
            a = rng.uniform(env.action_low, env.action_high, size=env.action_dim)
        elif rng is not None and noise_std > 0:
            a = a + noise_std * rng.standard_normal(env.action_dim)
        a = np.clip(a, env.action_low, env.action_high)
        states.append(obs.copy())
        actions.append(a)
        obs, r, done = env.step(a)
        rewards.append(r)
        t += 1
    return Trajectory.build(np.array(states), np.array(actions), np.array(rewards))


def _fit_linear_bc(env, n_episodes, seed, ridge=1e-3):
    """Closed-form behavior cloning of the scripted expert."""
    expert = expert_policy(env)
    xs, ys = [], []
    for i in range(n_episodes):
        t = rollout_policy(env, expert, seed=(seed, i))
        xs.append(np.hstack([t.states, np.ones((len(t), 1))]))
        ys.append(t.actions)
    x = np.concatenate(xs)
    y = np.concatenate(ys)
    w = np.linalg.solve(x.T @ x + ridge * np.eye(x.shape[1]), x.T @ y)
    return LinearPolicy(env, w)


def generate_dataset(env, tier, n_episodes, seed, out_path=None):
    """Tiered episode generator.

    expert: scripted controller with light action noise (sigma 0.05) so the
    data covers the states a slightly imperfect imitator visits.  medium:
    the controller with heavy noise (sigma 0.4) and 50% uniformly random
    steps.  replay: a mixture of behavior-cloned policies of increasing
    quality plus random episodes.
    """
    if n_episodes < 1:
        raise ValueError("n_episodes must be >= 1")
    rng = np.random.default_rng(seed)
    trajectories = []
    if tier == "expert":
        policy = expert_policy(env)
        for i in range(n_episodes):
            trajectories.append(rollout_policy(
                env, policy, seed=(seed, i), noise_std=0.05, rng=rng))
    elif tier == "medium":
        policy = expert_policy(env)
        for i in range(n_episodes):
            trajectories.append(rollout_policy(
                env, policy, seed=(seed, i), noise_std=0.4, random_frac=0.5,
                rng=rng))
    elif tier == "replay":
        # BC checkpoints trained on 1, 4, 16 and 64 expert episodes stand in
        # for snapshots of a learner of increasing quality
        policies = [RandomPolicy(env, rng)]
        policies += [_fit_linear_bc(env, n, seed + 101 + n) for n in (1, 4, 16, 64)]
        for i in range(n_episodes):
            policy = policies[i % len(policies)]
            trajectories.append(rollout_policy(
                env, policy, seed=(seed, i), noise_std=0.1, rng=rng))
    else:
        raise ValueError(f"unknown tier {tier!r}")
    if out_path is not None:
        save_dataset(trajectories, out_path)
    return trajectories


@dataclass
class EvalResult:
    mean_return: float
    std_return: float
    returns: np.ndarray


def evaluate_policy(env, actor, rtg_target, n_episodes, seed, stats=None,
                    feed_prev_action=True):
    """Run the step-mode actor; the return-to-go input is decremented by
    each observed (scaled) reward.  Deterministic per seed.

    feed_prev_action=False zeroes the previous-action input, isolating the
    sequence model's own memory from feedback relayed through the actions.
    """
    if getattr(actor, "config", None) is not None:
        if (actor.config.state_dim != env.state_dim
                or actor.config.action_dim != env.action_dim):
            raise ValueError("actor/environment dimension mismatch")
    scale = stats.return_scale if stats else 1.0
    returns = []
    for ep in range(n_episodes):
        obs = env.reset((seed, ep))
        carry = actor.init_carry()
        a_prev = np.zeros(env.action_dim)
        nu = float(rtg_target)
        total = 0.0
        done = False
        while not done:
            s = stats.standardize(obs) if stats else obs
            action, carry = actor.forward_step(carry, s, a_prev, np.asarray(nu))
            obs, r, done = env.step(action)
            total += r
            nu -= r / scale
            if feed_prev_action:
                a_prev = np.asarray(action, dtype=np.float64)
        returns.append(total)
    returns = np.array(returns)
    return EvalResult(float(returns.mean()), float(returns.std()), returns)


class ScriptedActor:
    """Adapts a scripted policy to the step-mode actor interface (for
    evaluation plumbing tests; ignores the return-to-go input)."""

    config = None

    def __init__(self, env, policy):
        self.env = env
        self.policy = policy

    def init_carry(self):
        return {"t": 0}

    def forward_step(self, carry, s, a_prev, rtg_prev):
        if carry["t"] == 0:
            self.policy.reset(np.asarray(s))
        a = self.policy.act(np.asarray(s), carry["t"])
        return np.asarray(a, dtype=np.float64), {"t": carry["t"] + 1}
