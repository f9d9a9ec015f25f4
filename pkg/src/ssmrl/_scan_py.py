"""Pure-NumPy fallback for the sequential scan kernels.

Semantics must match the compiled extension operation-for-operation: the
float32 scans round after every multiply and every add (no fused ops), so
both backends produce bit-identical traces.
"""

import numpy as np

F32_EPS = 2.0**-24
F64_EPS = 2.0**-53

_SPLITTER = 134217729.0  # 2**27 + 1


def _two_sum(a, b):
    """Error-free sum: s + err == a + b exactly (same dtype as inputs)."""
    s = a + b
    bb = s - a
    err = (a - (s - bb)) + (b - bb)
    return s, err


def _quick_two_sum(a, b):
    s = a + b
    err = b - (s - a)
    return s, err


def _two_prod(a, b):
    """Error-free product via Dekker splitting: p + err == a * b exactly."""
    p = a * b
    c = _SPLITTER * a
    ahi = c - (c - a)
    alo = a - ahi
    c = _SPLITTER * b
    bhi = c - (c - b)
    blo = b - bhi
    err = ((ahi * bhi - p) + ahi * blo + alo * bhi) + alo * blo
    return p, err


def _dd_step(hi, lo, lam, u):
    """One double-double step of x <- lam * x + u (lam, u are doubles)."""
    p, pe = _two_prod(lam, hi)
    pe = pe + lam * lo
    s, e = _quick_two_sum(p, pe)
    s2, e2 = _two_sum(s, u)
    e2 = e2 + e
    return _quick_two_sum(s2, e2)


def dd_recurrence(lam, u):
    """Full double-double trace of x_t = lam * x_{t-1} + u_t.

    Returns (hi, lo) arrays of shape u.shape; supports a trailing seed axis.
    """
    u = np.asarray(u, dtype=np.float64)
    hi = np.zeros(u.shape, dtype=np.float64)
    lo = np.zeros(u.shape, dtype=np.float64)
    h = np.zeros(u.shape[1:], dtype=np.float64) if u.ndim > 1 else 0.0
    l = np.zeros(u.shape[1:], dtype=np.float64) if u.ndim > 1 else 0.0
    for t in range(u.shape[0]):
        h, l = _dd_step(h, l, lam, u[t])
        hi[t] = h
        lo[t] = l
    return hi, lo


def real_error_scan(lam, u, mode):
    """Forward-error trace of the scalar recurrence x_t = lam*x_{t-1} + u_t.

    lam : float, the recurrence coefficient (rounded to f32 by the caller
          for the f32 modes).
    u   : (L, S) float64; for f32 modes already rounded through float32.
    mode: 0 = naive f32, 1 = naive f64, 2 = compensated f32.

    Returns (err, bound, final_val, final_oracle):
      err    (L, S) |computed - oracle| per step
      bound  (L, S) t * eps * sum_i |lam^(t-i) u_i|
      final_val, final_oracle (S,) values at the last step
    """
    u = np.asarray(u, dtype=np.float64)
    L, S = u.shape
    eps = F64_EPS if mode == 1 else F32_EPS

    err = np.empty((L, S), dtype=np.float64)
    bound = np.empty((L, S), dtype=np.float64)

    ohi = np.zeros(S, dtype=np.float64)
    olo = np.zeros(S, dtype=np.float64)
    absacc = np.zeros(S, dtype=np.float64)
    abslam = abs(lam)

    if mode == 1:
        x = np.zeros(S, dtype=np.float64)
        for t in range(L):
            ut = u[t]
            tmp = lam * x
            x = tmp + ut
            ohi, olo = _dd_step(ohi, olo, lam, ut)
            absacc = abslam * absacc + np.abs(ut)
            err[t] = np.abs(x - ohi)
            bound[t] = t * eps * absacc
        val = x
    else:
        lam32 = np.float32(lam)
        u32 = u.astype(np.float32)
        x = np.zeros(S, dtype=np.float32)
        e = np.zeros(S, dtype=np.float32)
        for t in range(L):
            ut32 = u32[t]
            ut = u[t]
            tmp = lam32 * x
            if mode == 0:
                x = tmp + ut32
                val = x.astype(np.float64)
            else:
                s, r = _two_sum(tmp, ut32)
                e = lam32 * e + r
                x = s
                val = x.astype(np.float64) + e.astype(np.float64)
            ohi, olo = _dd_step(ohi, olo, lam, ut)
            absacc = abslam * absacc + np.abs(ut)
            err[t] = np.abs(val - ohi)
            bound[t] = t * eps * absacc

    return err, bound, val.copy() if hasattr(val, "copy") else val, ohi.copy()


def diag_ssm_scan(lam_re, lam_im, b_re, b_im, c_re, c_im, d, u, compensated):
    """Single-channel diagonal SSM recurrence over a full sequence (f64).

    x'_n = lam_n x_n + b_n u_t,  y_t = sum_n Re(c_n x'_n) + d u_t

    The caller folds the conjugate-pair realization factor into c.
    Returns (y, x_re, x_im) with the final (compensation-folded) state.
    """
    u = np.asarray(u, dtype=np.float64)
    L = u.shape[0]
    M = lam_re.shape[0]
    xr = np.zeros(M)
    xi = np.zeros(M)
    y = np.empty(L)
    if not compensated:
        for t in range(L):
            ut = u[t]
            xr, xi = (lam_re * xr - lam_im * xi + b_re * ut,
                      lam_im * xr + lam_re * xi + b_im * ut)
            # cumsum forces the same left-to-right accumulation order as
            # the compiled scan, keeping the two backends bit-identical
            y[t] = np.cumsum(c_re * xr - c_im * xi)[-1] + d * ut
    else:
        er = np.zeros(M)
        ei = np.zeros(M)
        for t in range(L):
            ut = u[t]
            tr = lam_re * xr - lam_im * xi
            ti = lam_im * xr + lam_re * xi
            sr, rr = _two_sum(tr, b_re * ut)
            si, ri = _two_sum(ti, b_im * ut)
            er, ei = (lam_re * er - lam_im * ei + rr,
                      lam_im * er + lam_re * ei + ri)
            xr, xi = sr, si
            y[t] = np.cumsum(c_re * (xr + er) - c_im * (xi + ei))[-1] + d * ut
        xr = xr + er
        xi = xi + ei
    return y, xr, xi
