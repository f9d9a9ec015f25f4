"""Offline behavior-cloning trainer and the context-truncation study."""

import csv
import math
from dataclasses import dataclass, replace

import numpy as np

from ssmrl import autodiff as ad
from ssmrl import checkpoint
from ssmrl.data import make_batches
from ssmrl.envs import evaluate_policy
from ssmrl.networks import ActorConfig, ActorNetwork
from ssmrl.optim import Adam


@dataclass
class OfflineConfig:
    steps: int = 20000
    batch_size: int = 32
    lr: float = 1e-5
    warmup: int = 10000
    weight_decay: float = 1e-4
    seed: int = 0
    n_channels: int = 64
    n_state: int = 64
    n_blocks: int = 3
    dropout: float = 0.1
    kernel_taps: int = 0  # 0 = full-length kernels
    eval_every: int = 0  # 0 disables evaluation during training
    eval_episodes: int = 10
    rtg_target: float = 1.0  # normalized; 1.0 = dataset-best return
    log_every: int = 100


def build_actor(env, config: OfflineConfig, step_mode="naive"):
    return ActorNetwork(ActorConfig(
        state_dim=env.state_dim, action_dim=env.action_dim,
        n_channels=config.n_channels, n_state=config.n_state,
        n_blocks=config.n_blocks, dropout=config.dropout,
        action_low=env.action_low, action_high=env.action_high,
        step_mode=step_mode), rng_seed=config.seed)


def masked_l2_loss(pred, target, mask):
    """Mean squared error over real (unpadded) positions only.

    An all-padding batch yields a zero loss and hence zero gradients.
    """
    diff = ad.sub(pred, ad.Tensor(target))
    sq = ad.mul(diff, diff)
    masked = ad.mul(sq, ad.Tensor(mask[..., None]))
    count = float(mask.sum()) * target.shape[-1]
    return ad.div(ad.tsum(masked), max(count, 1.0))


def save_train_state(prefix, actor, opt, step, rngs):
    rec = dict(actor.params)
    rec["_train/step"] = np.array(float(step))
    checkpoint.save_params(prefix + ".params", rec)
    opt_rec = {"_t": np.array(float(opt.t))}
    for k, v in opt.m.items():
        opt_rec["m/" + k] = v
    for k, v in opt.v.items():
        opt_rec["v/" + k] = v
    checkpoint.save_params(prefix + ".opt", opt_rec)
    checkpoint.save_rng_state(
        prefix + ".rng", {k: r.bit_generator.state for k, r in rngs.items()})


def load_train_state(prefix, actor, opt, rngs):
    rec = checkpoint.load_params(prefix + ".params")
    step = int(rec.pop("_train/step"))
    for k, p in actor.params.items():
        p.data = rec[k].copy()
    opt_rec = checkpoint.load_params(prefix + ".opt")
    opt.t = int(opt_rec.pop("_t"))
    for k in opt.m:
        opt.m[k] = opt_rec["m/" + k].copy()
        opt.v[k] = opt_rec["v/" + k].copy()
    for k, state in checkpoint.load_rng_state(prefix + ".rng").items():
        rngs[k].bit_generator.state = state
    return step


def train_offline(actor, trajectories, stats, config: OfflineConfig,
                  env=None, metrics_path=None, checkpoint_path=None,
                  resume_prefix=None, checkpoint_state_prefix=None,
                  env_name=""):
    """Supervised action regression on padded batches (masked L2).

    Returns (metrics, losses): metrics is a list of dict rows
    (step, loss, eval_return); losses has one float per step.
    """
    opt = Adam(actor.params, lr=config.lr, weight_decay=config.weight_decay,
               warmup=config.warmup)
    rngs = {
        "batch": np.random.default_rng((config.seed, 1)),
        "dropout": np.random.default_rng((config.seed, 2)),
    }
    start = 0
    if resume_prefix is not None:
        start = load_train_state(resume_prefix, actor, opt, rngs)
    batches = make_batches(trajectories, config.batch_size, rngs["batch"], stats)
    taps = config.kernel_taps if config.kernel_taps > 0 else None

    metrics, losses = [], []
    best_eval = -math.inf
    best_params = None
    for step in range(start, config.steps):
        batch = next(batches)
        with ad.Tape() as tape:
            pred = actor.forward_sequence(
                batch.states, batch.prev_actions, batch.prev_rtgs,
                train=True, rng=rngs["dropout"], kernel_taps=taps)
            loss = masked_l2_loss(pred, batch.actions, batch.mask)
            lval = float(loss.data)
            if not np.isfinite(lval):
                raise FloatingPointError(
                    f"non-finite loss {lval} at step {step} "
                    f"(lr {opt.current_lr():.3e}); aborting")
            tape.backward(loss)
        opt.step()
        opt.zero_grad()
        losses.append(lval)

        row = {"step": step, "loss": lval, "eval_return": ""}
        if (env is not None and config.eval_every > 0
                and (step + 1) % config.eval_every == 0):
            res = evaluate_policy(env, actor, config.rtg_target,
                                  config.eval_episodes, seed=(config.seed, 3),
                                  stats=stats)
            row["eval_return"] = res.mean_return
            if res.mean_return > best_eval:
                best_eval = res.mean_return
                best_params = {k: p.data.copy() for k, p in actor.params.items()}
        if step % config.log_every == 0 or row["eval_return"] != "":
            metrics.append(row)

    if checkpoint_state_prefix is not None:
        save_train_state(checkpoint_state_prefix, actor, opt, config.steps,
                         rngs)
    if best_params is not None:
        for k, p in actor.params.items():
            p.data = best_params[k]
    if checkpoint_path is not None:
        checkpoint.save_actor(checkpoint_path, actor, stats, env_name)
    if metrics_path is not None:
        with open(metrics_path, "w", newline="") as f:
            w = csv.DictWriter(f, fieldnames=["step", "loss", "eval_return"])
            w.writeheader()
            w.writerows(metrics)
    return metrics, losses


class TruncatedContextActor:
    """Step-interface wrapper that replays the truncated-kernel sequence
    model over the episode history, so evaluation sees exactly the operator
    that was trained."""

    config = None

    def __init__(self, actor, kernel_taps):
        self.actor = actor
        self.kernel_taps = kernel_taps

    def init_carry(self):
        return {"states": [], "prev_actions": [], "prev_rtgs": []}

    def forward_step(self, carry, s, a_prev, rtg_prev):
        carry["states"].append(np.asarray(s, dtype=np.float64))
        carry["prev_actions"].append(np.asarray(a_prev, dtype=np.float64))
        carry["prev_rtgs"].append(float(rtg_prev))
        out = self.actor.forward_sequence(
            np.array(carry["states"])[None],
            np.array(carry["prev_actions"])[None],
            np.array(carry["prev_rtgs"])[None],
            kernel_taps=self.kernel_taps)
        return out.data[0, -1], carry


def context_ablation(trajectories, stats, env, fractions, config: OfflineConfig,
                     metrics_path=None, feed_prev_action=False):
    """Train one model per context fraction f (kernel truncated to
    ceil(f * Lmax) taps) and report evaluation returns.

    Evaluation zeroes the previous-action input by default: truncation
    should measure the sequence operator's memory, and action feedback
    through the environment would let information outlive the kernel
    window."""
    lmax = max(len(t) for t in trajectories)
    rows = []
    for frac in fractions:
        taps = int(math.ceil(frac * lmax))
        run_cfg = replace(config, kernel_taps=taps if taps < lmax else 0,
                          eval_every=0)
        actor = build_actor(env, run_cfg)
        train_offline(actor, trajectories, stats, run_cfg)
        if taps < lmax:
            policy = TruncatedContextActor(actor, taps)
        else:
            policy = actor
        res = evaluate_policy(env, policy, config.rtg_target,
                              config.eval_episodes, seed=(config.seed, 4),
                              stats=stats, feed_prev_action=feed_prev_action)
        rows.append({"fraction": frac, "taps": taps,
                     "mean_return": res.mean_return,
                     "std_return": res.std_return})
    if metrics_path is not None:
        with open(metrics_path, "w", newline="") as f:
            w = csv.DictWriter(
                f, fieldnames=["fraction", "taps", "mean_return", "std_return"])
            w.writeheader()
            w.writerows(rows)
    return rows
