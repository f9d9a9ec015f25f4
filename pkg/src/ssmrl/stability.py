"""Floating-point forward-error lab for the linear recurrence.

Measures the forward error of x_t = lam * x_{t-1} + u_t in three variants
(naive f32, naive f64, Kahan-compensated f32) against a double-double
reference, and checks the a-priori bound

    |x_t(computed) - x_t(exact)| <= t * eps * S_t,
    S_t = sum_i |lam|^{t-i} |u_i|

with a factor-2 slack.  Inputs (and lam) are pre-rounded to f32 for the
f32 modes so the reference recurrence consumes the exact same values the
floating-point scan does.
"""

import csv
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from ssmrl.backend import F32_EPS, F64_EPS, dd_recurrence, real_error_scan

MODES = {"naive-f32": 0, "naive-f64": 1, "compensated-f32": 2}


@dataclass
class ErrorTrace:
    mode: str
    lam: float
    n_seeds: int
    err: np.ndarray  # (L, S) per-step absolute error vs the reference
    bound: np.ndarray  # (L, S) t * eps * S_t
    final_val: np.ndarray  # (S,)
    final_oracle: np.ndarray  # (S,)

    @property
    def mean_err(self):
        return self.err.mean(axis=1)

    @property
    def mean_bound(self):
        return self.bound.mean(axis=1)

    def max_ratio(self):
        """max over steps/seeds of err / bound (bound-zero entries skipped)."""
        mask = self.bound > 0
        if not mask.any():
            return 0.0
        return float((self.err[mask] / self.bound[mask]).max())


def _draw_inputs(length, n_seeds, seed, f32):
    rng = np.random.default_rng(seed)
    u = rng.uniform(-1.0, 1.0, size=(length, n_seeds))
    if f32:
        u = u.astype(np.float32).astype(np.float64)
    return u


def measure_forward_error(lam, length, n_seeds, mode, seed=0):
    """Run the scan for one lam / mode combination -> ErrorTrace."""
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}; pick from {sorted(MODES)}")
    f32 = mode != "naive-f64"
    lam_eff = float(np.float32(lam)) if f32 else float(lam)
    u = _draw_inputs(length, n_seeds, seed, f32)
    err, bound, fval, foracle = real_error_scan(lam_eff, u, MODES[mode])
    return ErrorTrace(mode, lam_eff, n_seeds, err, bound,
                      np.atleast_1d(fval), np.atleast_1d(foracle))


def verify_theorem_bound(lam, length, n_seeds, mode="naive-f32", seed=0,
                         slack=2.0):
    """Check err <= slack * bound at every step and seed.

    Returns a dict with ok, max_ratio and (step, seed) of the worst ratio.
    """
    trace = measure_forward_error(lam, length, n_seeds, mode, seed)
    mask = trace.bound > 0
    ratio = np.zeros_like(trace.err)
    ratio[mask] = trace.err[mask] / trace.bound[mask]
    worst = np.unravel_index(np.argmax(ratio), ratio.shape)
    ok = bool(np.all(trace.err[mask] <= slack * trace.bound[mask])
              and np.all(trace.err[~mask] == 0.0))
    return {
        "ok": ok,
        "max_ratio": float(ratio.max()),
        "worst_step": int(worst[0]),
        "worst_seed": int(worst[1]),
        "trace": trace,
    }


def compensation_gain(lam, length, n_seeds, seed=0):
    """Mean final-step error ratio naive-f32 / compensated-f32."""
    naive = measure_forward_error(lam, length, n_seeds, "naive-f32", seed)
    comp = measure_forward_error(lam, length, n_seeds, "compensated-f32", seed)
    ne = np.abs(naive.final_val - naive.final_oracle)
    ce = np.abs(comp.final_val - comp.final_oracle)
    return float(ne.mean() / max(ce.mean(), np.finfo(float).tiny))


def write_error_csv(path, traces):
    """Per-step mean error/bound rows: t, measured, bound, mode, lambda."""
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["t", "measured", "bound", "mode", "lambda"])
        for tr in traces:
            me, mb = tr.mean_err, tr.mean_bound
            for t in range(len(me)):
                w.writerow([t, repr(float(me[t])), repr(float(mb[t])),
                            tr.mode, tr.lam])


def dd_self_check(lam=0.9375, length=10, seed=0):
    """Double-double reference vs exact rational arithmetic.

    lam and the inputs are dyadic rationals, so Fraction reproduces the
    recurrence exactly; the double-double trace must agree to ~2^-100.
    Returns the max relative deviation.
    """
    rng = np.random.default_rng(seed)
    u = (rng.integers(-2**20, 2**20, size=length) / 2.0**20)
    hi, lo = dd_recurrence(lam, u)
    x = Fraction(0)
    flam = Fraction(lam)
    worst = 0.0
    for t in range(length):
        x = flam * x + Fraction(u[t])
        got = Fraction(float(hi[t])) + Fraction(float(lo[t]))
        denom = max(abs(float(x)), 1.0)
        worst = max(worst, abs(float(got - x)) / denom)
    return worst


def dump_dependency_curves(path, delta_values=(0.001, 0.01, 0.1), length=200,
                           lam=-0.5 + np.pi * 1j):
    """CSV of |lam_bar^i| decay per step size (the memory-horizon picture)."""
    from ssmrl.ssm import ContinuousSsm, discretize_bilinear

    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["delta", "lag", "magnitude"])
        for delta in delta_values:
            ssm = ContinuousSsm(
                lam=np.array([lam]), b=np.ones(1, dtype=complex),
                c=np.ones(1, dtype=complex), d=0.0,
                log_delta=np.log(delta), conj_pairs=False)
            disc = discretize_bilinear(ssm)
            mag = np.abs(disc.lam_bar[0])
            for i in range(length):
                w.writerow([delta, i, repr(float(mag**i))])
