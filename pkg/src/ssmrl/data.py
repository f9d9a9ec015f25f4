"""Trajectories, returns-to-go, JSONL ingestion, padding and batching."""

import json
from dataclasses import dataclass

import numpy as np


def compute_returns_to_go(rewards):
    """Suffix sums: R[i] = sum_{t>=i} r[t], single right-to-left pass."""
    rewards = np.asarray(rewards, dtype=np.float64)
    return np.cumsum(rewards[::-1])[::-1].copy()


@dataclass
class Trajectory:
    states: np.ndarray  # (L, ds)
    actions: np.ndarray  # (L, da)
    rewards: np.ndarray  # (L,)
    returns_to_go: np.ndarray  # (L,)

    @classmethod
    def build(cls, states, actions, rewards):
        states = np.atleast_2d(np.asarray(states, dtype=np.float64))
        actions = np.atleast_2d(np.asarray(actions, dtype=np.float64))
        rewards = np.asarray(rewards, dtype=np.float64)
        if not (len(states) == len(actions) == len(rewards)):
            raise ValueError("states/actions/rewards lengths differ")
        return cls(states, actions, rewards, compute_returns_to_go(rewards))

    def __len__(self):
        return len(self.rewards)

    @property
    def total_return(self):
        return float(self.returns_to_go[0]) if len(self) else 0.0


@dataclass
class NormStats:
    state_mean: np.ndarray
    state_std: np.ndarray  # floored at 1e-6
    return_max: float  # dataset best; normalized target 1.0 maps here
    return_min: float

    @property
    def return_scale(self):
        scale = self.return_max - self.return_min
        if scale <= 0:
            scale = max(abs(self.return_max), 1e-6)
        return scale

    def standardize(self, states):
        return (np.asarray(states, dtype=np.float64) - self.state_mean) / self.state_std

    def normalize_rtg(self, rtg):
        """Affine return encoding; the dataset-best episode starts at 1.0.

        Anchored at the maximum so the convention survives a degenerate
        dataset where every episode has the same return.
        """
        return 1.0 + (np.asarray(rtg, dtype=np.float64) - self.return_max) / self.return_scale

    def target_to_raw(self, target):
        return self.return_max + (target - 1.0) * self.return_scale

    @classmethod
    def from_trajectories(cls, trajectories):
        states = np.concatenate([t.states for t in trajectories])
        rets = [t.total_return for t in trajectories]
        return cls(
            state_mean=states.mean(axis=0),
            state_std=np.maximum(states.std(axis=0), 1e-6),
            return_max=float(max(rets)),
            return_min=float(min(rets)),
        )


def save_dataset(trajectories, path):
    with open(path, "w") as f:
        for t in trajectories:
            f.write(json.dumps({
                "states": t.states.tolist(),
                "actions": t.actions.tolist(),
                "rewards": t.rewards.tolist(),
            }) + "\n")


def load_dataset(path):
    """Read a JSONL episode file -> (trajectories, NormStats)."""
    trajectories = []
    with open(path) as f:
        for lineno, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                trajectories.append(
                    Trajectory.build(rec["states"], rec["actions"], rec["rewards"]))
            except (json.JSONDecodeError, KeyError, ValueError, TypeError) as e:
                raise ValueError(f"{path}:{lineno}: malformed episode ({e})") from e
    if not trajectories:
        raise ValueError(f"{path}: empty dataset")
    return trajectories, NormStats.from_trajectories(trajectories)


@dataclass
class Batch:
    """Tail-padded batch; mask marks real positions."""

    states: np.ndarray  # (B, Lmax, ds), standardized if stats given
    actions: np.ndarray  # (B, Lmax, da), the regression targets
    prev_actions: np.ndarray  # (B, Lmax, da), shifted right, a_{-1} = 0
    prev_rtgs: np.ndarray  # (B, Lmax), R_{i-1} with R_{-1} = episode total
    mask: np.ndarray  # (B, Lmax) float, 1 on real positions


def collate(trajectories, stats=None):
    """Pad a list of trajectories into one Batch."""
    bsz = len(trajectories)
    lmax = max(len(t) for t in trajectories)
    ds = trajectories[0].states.shape[1]
    da = trajectories[0].actions.shape[1]
    states = np.zeros((bsz, lmax, ds))
    actions = np.zeros((bsz, lmax, da))
    prev_actions = np.zeros((bsz, lmax, da))
    prev_rtgs = np.zeros((bsz, lmax))
    mask = np.zeros((bsz, lmax))
    for j, t in enumerate(trajectories):
        n = len(t)
        states[j, :n] = stats.standardize(t.states) if stats else t.states
        actions[j, :n] = t.actions
        prev_actions[j, 1:n] = t.actions[:-1]
        rtg = stats.normalize_rtg(t.returns_to_go) if stats else t.returns_to_go
        prev_rtgs[j, 0] = rtg[0]
        prev_rtgs[j, 1:n] = rtg[:-1]
        mask[j, :n] = 1.0
    return Batch(states, actions, prev_actions, prev_rtgs, mask)


def make_batches(trajectories, batch_size, rng, stats=None):
    """Endless iterator of uniformly resampled padded batches."""
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    n = len(trajectories)
    while True:
        idx = rng.integers(0, n, size=batch_size)
        yield collate([trajectories[i] for i in idx], stats)
