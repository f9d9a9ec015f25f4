"""Compare the compiled scan extension against the pure-NumPy fallback.

Run:  python3 benchmarks/bench_scan.py
"""

import importlib
import os
import subprocess
import sys
import time

import numpy as np


def bench(label, fn, repeats=3):
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    print(f"{label:<44} {best * 1e3:10.1f} ms", flush=True)
    return best


def run(module_name):
    mod = importlib.import_module(module_name)
    rng = np.random.default_rng(0)

    u = rng.uniform(-1, 1, size=(100_000, 100)).astype(np.float32).astype(np.float64)
    bench(f"[{module_name}] error scan naive-f32 1e5x100",
          lambda: mod.real_error_scan(0.999, u, 0))
    bench(f"[{module_name}] error scan compensated 1e5x100",
          lambda: mod.real_error_scan(0.999, u, 2))
    bench(f"[{module_name}] double-double oracle 1e5x100",
          lambda: mod.dd_recurrence(0.999, u))

    m = 32
    lam = 0.99 * np.exp(1j * rng.uniform(0, np.pi, m))
    b = rng.standard_normal(m) + 1j * rng.standard_normal(m)
    c = rng.standard_normal(m) + 1j * rng.standard_normal(m)
    seq = rng.standard_normal(100_000)
    bench(f"[{module_name}] diag SSM scan M=32 L=1e5",
          lambda: mod.diag_ssm_scan(
              lam.real.copy(), lam.imag.copy(), b.real.copy(), b.imag.copy(),
              c.real.copy(), c.imag.copy(), 0.0, seq, True))


def main():
    if os.environ.get("SSMRL_FORCE_PY") == "1":
        from ssmrl import backend
        print(f"backend: {backend.BACKEND}")
        run("ssmrl._scan_py")
        return
    from ssmrl import backend
    print(f"backend: {backend.BACKEND}", flush=True)
    if backend.BACKEND == "compiled":
        run("ssmrl._scan")
    # re-run this script with the fallback forced, for the comparison
    env = dict(os.environ, SSMRL_FORCE_PY="1")
    subprocess.run([sys.executable, __file__], env=env, check=True)


if __name__ == "__main__":
    main()
