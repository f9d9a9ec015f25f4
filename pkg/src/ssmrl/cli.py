"""Command-line entry points.

Exit codes: 0 success, 1 failed check or runtime error, 2 usage error.
Every subcommand takes --seed; --config points at a plain "key = value"
file whose entries become defaults that explicit flags override.
"""

import argparse
import csv
import sys

import numpy as np

from ssmrl import checkpoint
from ssmrl.data import NormStats, load_dataset
from ssmrl.envs import evaluate_policy, generate_dataset, make_env
from ssmrl.finetune import FinetuneConfig, finetune
from ssmrl.offline import (OfflineConfig, build_actor, context_ablation,
                           train_offline)


def read_config_file(path):
    """Parse "key = value" lines; '#' starts a comment."""
    out = {}
    with open(path) as f:
        for lineno, line in enumerate(f, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected 'key = value'")
            key, value = (part.strip() for part in line.split("=", 1))
            out[key.replace("-", "_")] = value
    return out


def _apply_config(parser, args):
    if getattr(args, "config", None):
        defaults = read_config_file(args.config)
        sub = next(a for a in parser._actions
                   if isinstance(a, argparse._SubParsersAction))
        subparser = sub.choices[args.command]
        known = {a.dest for a in subparser._actions}
        unknown = set(defaults) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        subparser.set_defaults(**defaults)
        args = parser.parse_args(args._argv)
    return args


def _offline_config(args):
    return OfflineConfig(
        steps=int(args.steps), batch_size=int(args.batch_size),
        lr=float(args.lr), warmup=int(args.warmup),
        weight_decay=float(args.weight_decay), seed=int(args.seed),
        n_channels=int(args.channels), n_state=int(args.n_state),
        n_blocks=int(args.blocks), dropout=float(args.dropout),
        eval_every=int(args.eval_every), eval_episodes=int(args.eval_episodes),
        rtg_target=float(args.target))


def cmd_gen_data(args):
    env = make_env(args.env)
    trajs = generate_dataset(env, args.tier, int(args.episodes),
                             int(args.seed), out_path=args.out)
    rets = [t.total_return for t in trajs]
    print(f"wrote {len(trajs)} episodes to {args.out} "
          f"(return mean {np.mean(rets):.2f}, min {min(rets):.2f}, "
          f"max {max(rets):.2f})")
    return 0


def cmd_train_offline(args):
    env = make_env(args.env)
    trajs, stats = load_dataset(args.data)
    cfg = _offline_config(args)
    actor = build_actor(env, cfg)
    metrics, losses = train_offline(
        actor, trajs, stats, cfg, env=env, metrics_path=args.metrics,
        checkpoint_path=args.out, env_name=args.env,
        resume_prefix=args.resume)
    print(f"trained {cfg.steps} steps, final loss {losses[-1]:.6g}")
    if args.out:
        print(f"checkpoint: {args.out}")
    return 0


def cmd_context_ablation(args):
    env = make_env(args.env)
    trajs, stats = load_dataset(args.data)
    cfg = _offline_config(args)
    fractions = [float(x) for x in args.fractions.split(",")]
    rows = context_ablation(trajs, stats, env, fractions, cfg,
                            metrics_path=args.metrics)
    for r in rows:
        print(f"fraction {r['fraction']:<5} taps {r['taps']:<4} "
              f"return {r['mean_return']:.3f} +/- {r['std_return']:.3f}")
    return 0


def cmd_finetune(args):
    actor, stats, env_name = checkpoint.load_actor(args.checkpoint)
    env = make_env(args.env or env_name)
    cfg = FinetuneConfig(
        episodes=int(args.episodes), k1=int(args.k1), k2=int(args.k2),
        tau=float(args.tau), critic_lr=float(args.critic_lr),
        actor_lr=float(args.actor_lr), gamma=float(args.gamma),
        batch_size=int(args.batch_size), actor_every=int(args.actor_every),
        warmstart_episodes=int(args.warmstart_episodes),
        warmstart_steps=int(args.warmstart_steps), sigma=float(args.sigma),
        seed=int(args.seed))
    result = finetune(actor, stats, env, cfg, metrics_path=args.metrics)
    online = [m["env_return"] for m in result.metrics if m["phase"] == "online"]
    print(f"fine-tuned {len(online)} episodes, "
          f"last return {online[-1]:.2f}" if online else "no online episodes")
    if args.out:
        checkpoint.save_actor(args.out, actor, stats, env.name)
        print(f"checkpoint: {args.out}")
    return 0


def cmd_eval(args):
    actor, stats, env_name = checkpoint.load_actor(args.checkpoint)
    env = make_env(args.env or env_name)
    res = evaluate_policy(env, actor, float(args.target),
                          int(args.episodes), seed=(int(args.seed), 0),
                          stats=stats)
    print(f"return {res.mean_return:.3f} +/- {res.std_return:.3f} "
          f"over {args.episodes} episodes")
    return 0


def cmd_stability(args):
    from ssmrl.stability import (compensation_gain, measure_forward_error,
                                 verify_theorem_bound, write_error_csv)

    ok = True
    traces = []
    for lam in (float(x) for x in args.lam.split(",")):
        r = verify_theorem_bound(lam, int(args.length), int(args.n_seeds),
                                 mode=args.mode, seed=int(args.seed))
        traces.append(r["trace"])
        print(f"lam {lam}: bound {'held' if r['ok'] else 'VIOLATED'} "
              f"(max err/bound {r['max_ratio']:.4f} "
              f"at step {r['worst_step']})")
        ok = ok and r["ok"]
    gain = compensation_gain(1.0, int(args.length), int(args.n_seeds),
                             seed=int(args.seed))
    print(f"compensation gain at lam=1: {gain:.3g}x")
    if args.csv:
        traces.append(measure_forward_error(
            1.0, int(args.length), int(args.n_seeds), "compensated-f32",
            seed=int(args.seed)))
        write_error_csv(args.csv, traces)
        print(f"error curves: {args.csv}")
    return 0 if ok else 1


def cmd_kernel_dump(args):
    actor, _, _ = checkpoint.load_actor(args.checkpoint)
    ks = actor.kernels(int(args.length))  # (blocks, H, L)
    with open(args.out, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["block", "channel", "lag", "value"])
        for b in range(ks.shape[0]):
            for h in range(ks.shape[1]):
                for i in range(ks.shape[2]):
                    w.writerow([b, h, i, repr(float(ks[b, h, i]))])
    print(f"wrote {ks.size} kernel taps to {args.out}")
    return 0


def cmd_eigen_dump(args):
    actor, _, _ = checkpoint.load_actor(args.checkpoint)
    eig = actor.eigenvalues()  # (blocks, H, M)
    with open(args.out, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["block", "channel", "n", "re", "im", "magnitude"])
        for b in range(eig.shape[0]):
            for h in range(eig.shape[1]):
                for n in range(eig.shape[2]):
                    z = eig[b, h, n]
                    w.writerow([b, h, n, repr(float(z.real)),
                                repr(float(z.imag)), repr(float(abs(z)))])
    print(f"wrote {eig.size} eigenvalues to {args.out}")
    return 0


def cmd_verify(args):
    """Fast self-checks: view equivalence, discretization stability,
    reference-oracle agreement, forward-error bound."""
    from ssmrl.ssm import (conv_forward, discretize_bilinear, init_s4d,
                          compute_kernel, recurrent_forward)
    from ssmrl.stability import dd_self_check, verify_theorem_bound

    failures = []
    rng = np.random.default_rng(int(args.seed))
    for trial in range(5):
        ssm = init_s4d(8, rng_seed=int(args.seed) + trial)
        disc = discretize_bilinear(ssm)
        u = rng.standard_normal(128)
        y_conv = conv_forward(compute_kernel(disc, 128), u, d=ssm.d)
        y_rec = recurrent_forward(disc, u, d=ssm.d)
        gap = np.abs(y_conv - y_rec).max()
        if gap > 1e-8:
            failures.append(f"view equivalence gap {gap:.3g} (trial {trial})")
    lam = -np.exp(rng.uniform(-3, 3, 2000)) + 1j * rng.uniform(-50, 50, 2000)
    delta = np.exp(rng.uniform(np.log(1e-4), np.log(1.0), 2000))
    lam_bar = (1 + delta / 2 * lam) / (1 - delta / 2 * lam)
    if not (np.abs(lam_bar) < 1).all():
        failures.append("bilinear map produced |lam_bar| >= 1")
    dd_gap = dd_self_check()
    if dd_gap > 1e-25:
        failures.append(f"double-double self check gap {dd_gap:.3g}")
    r = verify_theorem_bound(1.0, 2000, 10)
    if not r["ok"]:
        failures.append(f"forward-error bound violated, "
                        f"ratio {r['max_ratio']:.3f}")
    for msg in failures:
        print("FAIL:", msg)
    print("all checks passed" if not failures
          else f"{len(failures)} check(s) failed")
    return 1 if failures else 0


def build_parser():
    p = argparse.ArgumentParser(
        prog="ssmrl",
        description="Diagonal-SSM sequence policies: data, training, "
                    "fine-tuning and floating-point stability tools.")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--seed", default=0)
        sp.add_argument("--config", default=None,
                        help="key = value defaults file")

    sp = sub.add_parser("gen-data", help="generate a tiered episode dataset")
    common(sp)
    sp.add_argument("--env", required=True, choices=["pointmass", "delayedcue"])
    sp.add_argument("--tier", required=True,
                    choices=["expert", "medium", "replay"])
    sp.add_argument("--episodes", default=100)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_gen_data)

    def train_opts(sp):
        sp.add_argument("--steps", default=20000)
        sp.add_argument("--batch-size", default=32)
        sp.add_argument("--lr", default=1e-5)
        sp.add_argument("--warmup", default=10000)
        sp.add_argument("--weight-decay", default=1e-4)
        sp.add_argument("--channels", default=64)
        sp.add_argument("--n-state", default=64)
        sp.add_argument("--blocks", default=3)
        sp.add_argument("--dropout", default=0.1)
        sp.add_argument("--eval-every", default=0)
        sp.add_argument("--eval-episodes", default=10)
        sp.add_argument("--target", default=1.0)

    sp = sub.add_parser("train-offline", help="behavior-clone on a dataset")
    common(sp)
    sp.add_argument("--env", required=True)
    sp.add_argument("--data", required=True)
    train_opts(sp)
    sp.add_argument("--out", default=None, help="checkpoint path")
    sp.add_argument("--metrics", default=None, help="metrics CSV path")
    sp.add_argument("--resume", default=None, help="training-state prefix")
    sp.set_defaults(func=cmd_train_offline)

    sp = sub.add_parser("context-ablation",
                        help="train and evaluate kernel-truncated variants")
    common(sp)
    sp.add_argument("--env", required=True)
    sp.add_argument("--data", required=True)
    train_opts(sp)
    sp.add_argument("--fractions", default="1.0,0.5,0.25,0.1")
    sp.add_argument("--metrics", default=None)
    sp.set_defaults(func=cmd_context_ablation)

    sp = sub.add_parser("finetune", help="online actor-critic fine-tuning")
    common(sp)
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--env", default=None)
    sp.add_argument("--episodes", default=30)
    sp.add_argument("--k1", default=200)
    sp.add_argument("--k2", default=300)
    sp.add_argument("--tau", default=0.1)
    sp.add_argument("--critic-lr", default=1e-3)
    sp.add_argument("--actor-lr", default=1e-5)
    sp.add_argument("--gamma", default=0.99)
    sp.add_argument("--batch-size", default=96)
    sp.add_argument("--actor-every", default=3)
    sp.add_argument("--warmstart-episodes", default=10)
    sp.add_argument("--warmstart-steps", default=35000)
    sp.add_argument("--sigma", default=0.0)
    sp.add_argument("--out", default=None)
    sp.add_argument("--metrics", default=None)
    sp.set_defaults(func=cmd_finetune)

    sp = sub.add_parser("eval", help="evaluate a checkpoint")
    common(sp)
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--env", default=None)
    sp.add_argument("--episodes", default=10)
    sp.add_argument("--target", default=1.0)
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("stability", help="forward-error bound experiment")
    common(sp)
    sp.add_argument("--lam", default="0.5,0.8,1.0")
    sp.add_argument("--length", default=100000)
    sp.add_argument("--n-seeds", default=100)
    sp.add_argument("--mode", default="naive-f32")
    sp.add_argument("--csv", default=None)
    sp.set_defaults(func=cmd_stability)

    sp = sub.add_parser("kernel-dump", help="dump convolution kernels to CSV")
    common(sp)
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--length", default=64)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_kernel_dump)

    sp = sub.add_parser("eigen-dump", help="dump discrete eigenvalues to CSV")
    common(sp)
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_eigen_dump)

    sp = sub.add_parser("verify", help="fast numerical self-checks")
    common(sp)
    sp.set_defaults(func=cmd_verify)
    return p


def main(argv=None):
    argv = sys.argv[1:] if argv is None else argv
    parser = build_parser()
    args = parser.parse_args(argv)
    args._argv = argv
    try:
        args = _apply_config(parser, args)
        return args.func(args)
    except (ValueError, OSError, FloatingPointError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
