"""Binary parameter container.

Layout: magic "DS4C", version u32, param count u32, then per-parameter
records: name length u32, utf-8 name, rank u32, dims u32 each, raw
little-endian f64 data.  Everything little-endian.
"""

import json
import struct

import numpy as np

MAGIC = b"DS4C"
VERSION = 1


def save_params(path, params):
    """params: dict name -> ndarray (or Tensor-like with .data)."""
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<II", VERSION, len(params)))
        for name, value in params.items():
            arr = np.asarray(getattr(value, "data", value), dtype="<f8")
            nb = name.encode("utf-8")
            f.write(struct.pack("<I", len(nb)))
            f.write(nb)
            f.write(struct.pack("<I", arr.ndim))
            f.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            f.write(np.ascontiguousarray(arr).tobytes())


def load_params(path):
    with open(path, "rb") as f:
        if f.read(4) != MAGIC:
            raise ValueError(f"{path}: bad magic, not a checkpoint")
        version, count = struct.unpack("<II", f.read(8))
        if version != VERSION:
            raise ValueError(f"{path}: unsupported version {version}")
        out = {}
        for _ in range(count):
            (nlen,) = struct.unpack("<I", f.read(4))
            name = f.read(nlen).decode("utf-8")
            (rank,) = struct.unpack("<I", f.read(4))
            shape = struct.unpack(f"<{rank}I", f.read(4 * rank)) if rank else ()
            n = int(np.prod(shape)) if shape else 1
            data = np.frombuffer(f.read(8 * n), dtype="<f8").reshape(shape)
            out[name] = data.astype(np.float64)
        return out


# ---------------------------------------------------------------------------
# actor checkpoints: network parameters plus the metadata needed to rebuild
# the policy (architecture, normalization stats, environment tag)

def save_actor(path, actor, stats, env_name=""):
    from ssmrl.networks import ActorConfig  # noqa: F401  (doc pointer)

    cfg = actor.config
    rec = dict(actor.params)
    rec["_meta/arch"] = np.array([
        cfg.state_dim, cfg.action_dim, cfg.n_channels, cfg.n_state,
        cfg.n_blocks, cfg.dropout, cfg.action_low, cfg.action_high,
        1.0 if cfg.step_mode == "compensated" else 0.0,
    ])
    rec["_meta/state_mean"] = stats.state_mean
    rec["_meta/state_std"] = stats.state_std
    rec["_meta/returns"] = np.array([stats.return_max, stats.return_min])
    rec["_meta/env_name"] = np.frombuffer(env_name.encode("utf-8"),
                                          dtype=np.uint8).astype(np.float64)
    save_params(path, rec)


def load_actor(path):
    """-> (ActorNetwork, NormStats, env_name)."""
    from ssmrl.data import NormStats
    from ssmrl.networks import ActorConfig, ActorNetwork

    rec = load_params(path)
    a = rec.pop("_meta/arch")
    cfg = ActorConfig(
        state_dim=int(a[0]), action_dim=int(a[1]), n_channels=int(a[2]),
        n_state=int(a[3]), n_blocks=int(a[4]), dropout=float(a[5]),
        action_low=float(a[6]), action_high=float(a[7]),
        step_mode="compensated" if a[8] else "naive",
    )
    stats = NormStats(
        state_mean=rec.pop("_meta/state_mean"),
        state_std=rec.pop("_meta/state_std"),
        return_max=float(rec["_meta/returns"][0]),
        return_min=float(rec.pop("_meta/returns")[1]),
    )
    env_name = bytes(rec.pop("_meta/env_name").astype(np.uint8)).decode("utf-8")
    actor = ActorNetwork(cfg)
    for k, p in actor.params.items():
        p.data = rec[k].copy()
    return actor, stats, env_name


def save_rng_state(path, states):
    """Sidecar JSON for bit-exact training resume (RNG bit-generator states)."""
    with open(path, "w") as f:
        json.dump(states, f, default=int)


def load_rng_state(path):
    with open(path) as f:
        return json.load(f)
