# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled scan kernels: the sequential hot loops of the library.

Mirrors ssmrl._scan_py operation-for-operation.  The float32 paths keep
every intermediate in a float variable and the build disables FP
contraction, so each multiply and add rounds exactly once.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport fabs

cnp.import_array()

cdef double F32_EPS = 2.0**-24
cdef double F64_EPS = 2.0**-53
cdef double SPLITTER = 134217729.0


cdef inline void two_sum_d(double a, double b, double *s, double *err) nogil:
    cdef double t, bb
    t = a + b
    bb = t - a
    err[0] = (a - (t - bb)) + (b - bb)
    s[0] = t


cdef inline void quick_two_sum_d(double a, double b, double *s, double *err) nogil:
    cdef double t
    t = a + b
    err[0] = b - (t - a)
    s[0] = t


cdef inline void two_prod_d(double a, double b, double *p, double *err) nogil:
    cdef double c, ahi, alo, bhi, blo, t
    t = a * b
    c = SPLITTER * a
    ahi = c - (c - a)
    alo = a - ahi
    c = SPLITTER * b
    bhi = c - (c - b)
    blo = b - bhi
    err[0] = ((ahi * bhi - t) + ahi * blo + alo * bhi) + alo * blo
    p[0] = t


cdef inline void dd_step(double *hi, double *lo, double lam, double u) nogil:
    cdef double p, pe, s, e, s2, e2
    two_prod_d(lam, hi[0], &p, &pe)
    pe = pe + lam * lo[0]
    quick_two_sum_d(p, pe, &s, &e)
    two_sum_d(s, u, &s2, &e2)
    e2 = e2 + e
    quick_two_sum_d(s2, e2, hi, lo)


cdef inline void two_sum_f(float a, float b, float *s, float *err) nogil:
    cdef float t, bb
    t = a + b
    bb = t - a
    err[0] = (a - (t - bb)) + (b - bb)
    s[0] = t


def dd_recurrence(double lam, u):
    """Double-double trace of x_t = lam * x_{t-1} + u_t (trailing seed axis ok)."""
    u2 = np.atleast_2d(np.asarray(u, dtype=np.float64))
    squeeze = np.asarray(u).ndim == 1
    if squeeze:
        u2 = u2.T
    cdef double[:, ::1] uv = np.ascontiguousarray(u2)
    cdef Py_ssize_t L = uv.shape[0], S = uv.shape[1], t, s
    hi_arr = np.zeros((L, S), dtype=np.float64)
    lo_arr = np.zeros((L, S), dtype=np.float64)
    cdef double[:, ::1] hi = hi_arr, lo = lo_arr
    cdef double h, l
    for s in range(S):
        h = 0.0
        l = 0.0
        for t in range(L):
            dd_step(&h, &l, lam, uv[t, s])
            hi[t, s] = h
            lo[t, s] = l
    if squeeze:
        return hi_arr[:, 0], lo_arr[:, 0]
    return hi_arr, lo_arr


def real_error_scan(double lam, u, int mode):
    """See ssmrl._scan_py.real_error_scan."""
    cdef double[:, ::1] uv = np.ascontiguousarray(u, dtype=np.float64)
    cdef Py_ssize_t L = uv.shape[0], S = uv.shape[1], t, s
    cdef double eps = F64_EPS if mode == 1 else F32_EPS

    err_arr = np.empty((L, S), dtype=np.float64)
    bound_arr = np.empty((L, S), dtype=np.float64)
    val_arr = np.empty(S, dtype=np.float64)
    ora_arr = np.empty(S, dtype=np.float64)
    cdef double[:, ::1] err = err_arr, bound = bound_arr
    cdef double[::1] valv = val_arr, orav = ora_arr

    cdef double ohi, olo, absacc, abslam = fabs(lam), ut, xd, tmpd, val
    cdef float lam32 = <float>lam, x32, e32, ut32, tmp32, s32, r32

    for s in range(S):
        ohi = 0.0
        olo = 0.0
        absacc = 0.0
        xd = 0.0
        x32 = 0.0
        e32 = 0.0
        val = 0.0
        for t in range(L):
            ut = uv[t, s]
            if mode == 1:
                tmpd = lam * xd
                xd = tmpd + ut
                val = xd
            else:
                ut32 = <float>ut
                tmp32 = lam32 * x32
                if mode == 0:
                    x32 = tmp32 + ut32
                    val = <double>x32
                else:
                    two_sum_f(tmp32, ut32, &s32, &r32)
                    e32 = lam32 * e32 + r32
                    x32 = s32
                    val = <double>x32 + <double>e32
            dd_step(&ohi, &olo, lam, ut)
            absacc = abslam * absacc + fabs(ut)
            err[t, s] = fabs(val - ohi)
            bound[t, s] = t * eps * absacc
        valv[s] = val
        orav[s] = ohi
    return err_arr, bound_arr, val_arr, ora_arr


def diag_ssm_scan(lam_re, lam_im, b_re, b_im, c_re, c_im, double d, u,
                  bint compensated):
    """See ssmrl._scan_py.diag_ssm_scan."""
    cdef double[::1] lr = np.ascontiguousarray(lam_re, dtype=np.float64)
    cdef double[::1] li = np.ascontiguousarray(lam_im, dtype=np.float64)
    cdef double[::1] br = np.ascontiguousarray(b_re, dtype=np.float64)
    cdef double[::1] bi = np.ascontiguousarray(b_im, dtype=np.float64)
    cdef double[::1] cr = np.ascontiguousarray(c_re, dtype=np.float64)
    cdef double[::1] ci = np.ascontiguousarray(c_im, dtype=np.float64)
    cdef double[::1] uv = np.ascontiguousarray(u, dtype=np.float64)
    cdef Py_ssize_t L = uv.shape[0], M = lr.shape[0], t, n

    y_arr = np.empty(L, dtype=np.float64)
    xr_arr = np.zeros(M, dtype=np.float64)
    xi_arr = np.zeros(M, dtype=np.float64)
    er_arr = np.zeros(M, dtype=np.float64)
    ei_arr = np.zeros(M, dtype=np.float64)
    cdef double[::1] y = y_arr, xr = xr_arr, xi = xi_arr, er = er_arr, ei = ei_arr
    cdef double ut, tr, ti, sr, si, rr, ri, acc, ner, nei

    for t in range(L):
        ut = uv[t]
        acc = 0.0
        if not compensated:
            for n in range(M):
                tr = lr[n] * xr[n] - li[n] * xi[n] + br[n] * ut
                ti = li[n] * xr[n] + lr[n] * xi[n] + bi[n] * ut
                xr[n] = tr
                xi[n] = ti
                acc += cr[n] * tr - ci[n] * ti
        else:
            for n in range(M):
                tr = lr[n] * xr[n] - li[n] * xi[n]
                ti = li[n] * xr[n] + lr[n] * xi[n]
                two_sum_d(tr, br[n] * ut, &sr, &rr)
                two_sum_d(ti, bi[n] * ut, &si, &ri)
                ner = lr[n] * er[n] - li[n] * ei[n] + rr
                nei = li[n] * er[n] + lr[n] * ei[n] + ri
                er[n] = ner
                ei[n] = nei
                xr[n] = sr
                xi[n] = si
                acc += cr[n] * (sr + ner) - ci[n] * (si + nei)
        y[t] = acc + d * ut

    if compensated:
        xr_arr += er_arr
        xi_arr += ei_arr
    return y_arr, xr_arr, xi_arr
