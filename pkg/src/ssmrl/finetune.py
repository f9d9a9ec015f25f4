"""Online actor-critic fine-tuning of a pretrained return-conditioned actor.

The actor's SSM core (lambda, step size) stays frozen; the critic is
learned from scratch on replayed transitions.  Replay items store the full
recurrent carry so both networks can be evaluated on single steps without
re-running episodes.
"""

import csv
from dataclasses import dataclass

import numpy as np

from ssmrl import autodiff as ad
from ssmrl.networks import ActorCarry, CriticNetwork
from ssmrl.optim import Adam


@dataclass
class FinetuneConfig:
    episodes: int = 30
    k1: int = 200  # environment steps per update round
    k2: int = 300  # environment steps per target soft update
    tau: float = 0.1
    critic_lr: float = 1e-3
    actor_lr: float = 1e-5
    gamma: float = 0.99
    batch_size: int = 96
    actor_every: int = 3  # critic updates per actor update
    warmstart_episodes: int = 10
    warmstart_steps: int = 35000  # critic-only updates before the main loop
    sigma: float = 0.0  # 0 = default 0.2 * action half-range
    capacity: int = 1_000_000
    seed: int = 0
    critic_hidden: int = 64
    rtg_bonus: float = 0.1  # target = best + bonus * |best|
    probe_episodes: int = 5  # rollouts used to set the initial return target


class ReplayBuffer:
    """Fixed-capacity ring buffer over named float arrays.

    Storage grows geometrically up to the capacity, so a large nominal
    capacity costs nothing until it is actually filled.
    """

    def __init__(self, capacity):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self._arrays = {}
        self._alloc = 0
        self._size = 0
        self._pos = 0

    def _ensure_room(self):
        if self._pos < self._alloc:
            return
        new_alloc = min(self.capacity, max(1024, 2 * self._alloc))
        for k, a in self._arrays.items():
            grown = np.zeros((new_alloc, a.shape[1]))
            grown[:self._size] = a[:self._size]
            self._arrays[k] = grown
        self._alloc = new_alloc

    def add(self, item):
        """item: dict name -> 1-D float array (or scalar)."""
        self._ensure_room()
        for k, v in item.items():
            v = np.atleast_1d(np.asarray(v, dtype=np.float64))
            if k not in self._arrays:
                arr = np.zeros((max(self._alloc, 1), v.shape[0]))
                self._arrays[k] = arr
                self._alloc = arr.shape[0]
            self._arrays[k][self._pos] = v
        self._pos = (self._pos + 1) % self.capacity
        self._size = min(self._size + 1, self.capacity)

    def __len__(self):
        return self._size

    def sample(self, batch_size, rng):
        idx = rng.integers(0, self._size, size=batch_size)
        return {k: a[idx].copy() for k, a in self._arrays.items()}


def rtg_target_from_best(best, bonus):
    return best + bonus * abs(best)


def probe_best_return(env, actor, stats, nu_target, episodes, seed):
    """Best raw episode return of the current policy (no noise)."""
    best = -np.inf
    for ep in range(episodes):
        obs = env.reset((seed, 11, ep))
        carry = actor.init_carry()
        a_prev = np.zeros(env.action_dim)
        nu = nu_target
        total = 0.0
        done = False
        while not done:
            a, carry = actor.forward_step(carry, stats.standardize(obs),
                                          a_prev, np.asarray(nu))
            obs, r, done = env.step(a)
            total += r
            nu -= r / stats.return_scale
            a_prev = a
        best = max(best, total)
    return best


def _soft_update(target, online, tau):
    for k, p in target.params.items():
        p.data = (1.0 - tau) * p.data + tau * online.params[k].data


def _critic_update(critic, critic_target, actor_target, buffer, config, rng,
                   opt):
    batch = buffer.sample(config.batch_size, rng)
    carry_next = ActorCarry.from_array(batch["carry_next"], actor_target.config)
    a_star, _ = actor_target.forward_step(
        carry_next, batch["state_next"], batch["action"], batch["rtg"][:, 0])
    q_next = critic_target.forward(batch["state_next"], a_star).data
    y = (batch["reward"]
         + config.gamma * (1.0 - batch["done"]) * q_next)
    with ad.Tape() as tape:
        q = critic.forward(batch["state"], batch["action"])
        diff = ad.sub(q, ad.Tensor(y))
        loss = ad.tmean(ad.mul(diff, diff))
        tape.backward(loss)
    opt.step()
    opt.zero_grad()
    return float(loss.data)


def _actor_update(actor, critic, buffer, config, rng, opt):
    batch = buffer.sample(config.batch_size, rng)
    carry = ActorCarry.from_array(batch["carry"], actor.config)
    with ad.Tape() as tape:
        a_pred = actor.forward_step_train(
            carry, batch["state"], batch["action_prev"], batch["rtg_prev"][:, 0])
        q = critic.forward(batch["state"], a_pred)
        loss = ad.neg(ad.tmean(q))
        tape.backward(loss)
    opt.step()
    opt.zero_grad()
    for p in critic.params.values():  # critic acted as a fixed scorer here
        p.grad = None
    return -float(loss.data)


@dataclass
class FinetuneResult:
    metrics: list
    critic: CriticNetwork
    buffer: ReplayBuffer


def finetune(actor, stats, env, config: FinetuneConfig, metrics_path=None,
             on_warmstart_done=None):
    """DDPG-style fine-tuning loop -> FinetuneResult.

    on_warmstart_done(actor) runs after the critic-only warm-start phase,
    before any actor update."""
    actor.freeze_kernel()
    sigma0 = config.sigma if config.sigma > 0 else \
        0.2 * (env.action_high - env.action_low) / 2.0
    rng_noise = np.random.default_rng((config.seed, 21))
    rng_sample = np.random.default_rng((config.seed, 22))

    actor_target = actor.copy()
    critic = CriticNetwork(env.state_dim, env.action_dim,
                           hidden=config.critic_hidden, rng_seed=config.seed)
    critic_target = critic.copy()
    actor_opt = Adam(actor.params, lr=config.actor_lr, weight_decay=0.0)
    critic_opt = Adam(critic.params, lr=config.critic_lr, weight_decay=0.0)
    buffer = ReplayBuffer(config.capacity)

    best = probe_best_return(env, actor, stats, 1.0, config.probe_episodes,
                             config.seed)
    nu_target = stats.normalize_rtg(
        rtg_target_from_best(best, config.rtg_bonus))

    scale = stats.return_scale
    metrics = []
    counters = {"steps": 0, "critic_updates": 0}

    def run_episode(ep_seed, sigma, learn):
        nonlocal nu_target, best
        obs = env.reset(ep_seed)
        carry = actor.init_carry()
        a_prev = np.zeros(env.action_dim)
        nu = float(nu_target)
        total = 0.0
        last_closs, last_aobj = "", ""
        done = False
        while not done:
            s = stats.standardize(obs)
            a, new_carry = actor.forward_step(carry, s, a_prev, np.asarray(nu))
            if sigma > 0:
                a = a + sigma * rng_noise.standard_normal(env.action_dim)
            a = np.clip(a, env.action_low, env.action_high)
            obs, r, done = env.step(a)
            nu_next = nu - r / scale
            buffer.add({
                "state": s, "action_prev": a_prev, "rtg_prev": nu,
                "carry": ActorCarry(
                    carry.x_re, carry.x_im, carry.e_re, carry.e_im,
                    a_prev, np.asarray(nu)).to_array(),
                "action": a, "reward": r, "done": float(done),
                "state_next": stats.standardize(obs), "rtg": nu_next,
                "carry_next": new_carry.to_array(),
            })
            # the executed (noisy) action becomes the next step's context
            new_carry.prev_action = a.copy()
            carry = new_carry
            a_prev = a
            nu = nu_next
            total += r
            counters["steps"] += 1
            if learn and len(buffer) >= config.batch_size:
                if counters["steps"] % config.k1 == 0:
                    last_closs = _critic_update(
                        critic, critic_target, actor_target, buffer, config,
                        rng_sample, critic_opt)
                    counters["critic_updates"] += 1
                    if counters["critic_updates"] % config.actor_every == 0:
                        last_aobj = _actor_update(
                            actor, critic, buffer, config, rng_sample,
                            actor_opt)
                if counters["steps"] % config.k2 == 0:
                    _soft_update(critic_target, critic, config.tau)
                    _soft_update(actor_target, actor, config.tau)
        if total > best:
            best = total
            nu_target = stats.normalize_rtg(
                rtg_target_from_best(best, config.rtg_bonus))
        return total, last_closs, last_aobj

    # critic warm-start: the frozen actor fills the buffer, then the critic
    # trains alone before any actor update
    for ep in range(config.warmstart_episodes):
        total, _, _ = run_episode((config.seed, 31, ep), sigma0, learn=False)
        metrics.append({"phase": "warmstart", "episode": ep,
                        "env_return": total, "sigma": sigma0,
                        "critic_loss": "", "actor_obj": ""})
    closs = ""
    for _ in range(config.warmstart_steps):
        if len(buffer) >= config.batch_size:
            closs = _critic_update(critic, critic_target, actor_target,
                                   buffer, config, rng_sample, critic_opt)
            counters["critic_updates"] += 1
            if counters["critic_updates"] % (config.k2 // config.k1 or 1) == 0:
                _soft_update(critic_target, critic, config.tau)
    if metrics:
        metrics[-1]["critic_loss"] = closs
    counters["critic_updates"] = 0
    if on_warmstart_done is not None:
        on_warmstart_done(actor)

    m = config.episodes
    for ep in range(m):
        sigma = (m - ep) / m * sigma0
        total, closs, aobj = run_episode((config.seed, 32, ep), sigma,
                                         learn=True)
        metrics.append({"phase": "online", "episode": ep, "env_return": total,
                        "sigma": sigma, "critic_loss": closs,
                        "actor_obj": aobj})

    if metrics_path is not None:
        with open(metrics_path, "w", newline="") as f:
            w = csv.DictWriter(f, fieldnames=["phase", "episode", "env_return",
                                              "sigma", "critic_loss",
                                              "actor_obj"])
            w.writeheader()
            w.writerows(metrics)
    return FinetuneResult(metrics, critic, buffer)
