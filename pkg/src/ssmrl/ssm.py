"""Diagonal state-space layer math.

A channel is parameterized continuously by (lambda, b, c, d, log_delta)
and discretized with the bilinear transform.  Complex parameters are
stored as the first half of a conjugate-symmetric spectrum; realized
outputs are twice the real part of the half-spectrum sum, which keeps
every output exactly real.  Set ``conj_pairs=False`` to work with a plain
(non-paired) diagonal, e.g. in scalar reference calculations.
"""

import csv
from dataclasses import dataclass, field

import numpy as np

from ssmrl import backend


class DivergenceError(RuntimeError):
    """Recurrent state left the finite range."""


@dataclass
class ContinuousSsm:
    lam: np.ndarray  # (M,) complex, diagonal of A (half spectrum)
    b: np.ndarray  # (M,) complex input vector
    c: np.ndarray  # (M,) complex output vector
    d: float  # skip coefficient
    log_delta: float  # log step size
    conj_pairs: bool = True

    @property
    def delta(self):
        return float(np.exp(self.log_delta))

    @property
    def n_state(self):
        return (2 if self.conj_pairs else 1) * len(self.lam)


@dataclass
class DiscreteSsm:
    lam_bar: np.ndarray  # (M,) complex
    b_bar: np.ndarray  # (M,) complex
    c_bar: np.ndarray  # (M,) complex
    conj_pairs: bool = True

    @property
    def pair_factor(self):
        return 2.0 if self.conj_pairs else 1.0


@dataclass
class SsmKernel:
    k: np.ndarray  # (L,) real
    length: int


@dataclass
class SsmState:
    x: np.ndarray  # (M,) complex

    @classmethod
    def zeros(cls, m):
        return cls(np.zeros(m, dtype=np.complex128))


def discretize_bilinear(ssm: ContinuousSsm) -> DiscreteSsm:
    """Bilinear (Tustin) map of the continuous parameters.

    lam_bar = (1 + D/2 lam) / (1 - D/2 lam),  b_bar = D b / (1 - D/2 lam),
    c_bar = c, with D = exp(log_delta).
    """
    delta = np.exp(ssm.log_delta)
    if not delta > 0:
        raise ValueError(f"step size must be positive, got {delta}")
    den = 1.0 - (delta / 2.0) * ssm.lam
    if np.any(np.abs(den) == 0.0):
        raise ValueError("bilinear pole: lambda = 2/delta")
    return DiscreteSsm(
        lam_bar=(1.0 + (delta / 2.0) * ssm.lam) / den,
        b_bar=delta * ssm.b / den,
        c_bar=np.asarray(ssm.c, dtype=np.complex128).copy(),
        conj_pairs=ssm.conj_pairs,
    )


def init_s4d(n_state: int, rng_seed: int) -> ContinuousSsm:
    """Diagonal long-memory initialization.

    lam_n = -1/2 + i pi n over the stored half spectrum, all-ones b,
    standard complex normal c, log-uniform step size in [0.001, 0.1].
    """
    if n_state % 2 != 0:
        raise ValueError(f"state size must be even, got {n_state}")
    m = n_state // 2
    rng = np.random.default_rng(rng_seed)
    lam = -0.5 + 1j * np.pi * np.arange(m)
    c = np.sqrt(0.5) * (rng.standard_normal(m) + 1j * rng.standard_normal(m))
    log_delta = float(rng.uniform(np.log(0.001), np.log(0.1)))
    return ContinuousSsm(
        lam=lam,
        b=np.ones(m, dtype=np.complex128),
        c=c,
        d=0.0,
        log_delta=log_delta,
    )


def geometric_powers(lam_bar: np.ndarray, length: int) -> np.ndarray:
    """Stack [lam^0, lam^1, ..., lam^(L-1)] along a new leading axis.

    Computed by cumulative products so the kernel agrees with the
    step-by-step recurrence to rounding error.
    """
    lam_bar = np.asarray(lam_bar)
    out = np.empty((length,) + lam_bar.shape, dtype=lam_bar.dtype)
    out[0] = 1.0
    if length > 1:
        np.cumprod(np.broadcast_to(lam_bar, out[1:].shape), axis=0, out=out[1:])
    return out


def compute_kernel(dssm: DiscreteSsm, length: int) -> SsmKernel:
    """Convolution kernel k[i] = realized(c_bar lam_bar^i b_bar)."""
    if length < 1:
        raise ValueError(f"kernel length must be >= 1, got {length}")
    powers = geometric_powers(dssm.lam_bar, length)  # (L, M)
    k = dssm.pair_factor * (powers @ (dssm.c_bar * dssm.b_bar)).real
    return SsmKernel(k=k, length=length)


def _next_pow2(n: int) -> int:
    return 1 << (n - 1).bit_length()


def causal_conv(k: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Non-circular causal convolution of equal-length signals via FFT.

    Supports broadcasting over leading axes; the last axis is time.
    Zero-pads to the next power of two >= 2L-1.
    """
    length = u.shape[-1]
    nfft = _next_pow2(2 * length - 1) if length > 1 else 1
    yf = np.fft.rfft(k, n=nfft) * np.fft.rfft(u, n=nfft)
    return np.fft.irfft(yf, n=nfft)[..., :length]


def conv_forward(kernel: SsmKernel, u: np.ndarray, d: float = 0.0) -> np.ndarray:
    """Convolutional view: y[t] = sum_i k[i] u[t-i] + d u[t]."""
    u = np.asarray(u, dtype=np.float64)
    if u.shape[-1] != kernel.length:
        raise ValueError(
            f"input length {u.shape[-1]} != kernel length {kernel.length}"
        )
    return causal_conv(kernel.k, u) + d * u


def recurrent_step(dssm: DiscreteSsm, state: SsmState, u: float, d: float = 0.0):
    """One step of the recurrent view: x' = lam_bar x + b_bar u."""
    x = dssm.lam_bar * state.x + dssm.b_bar * u
    if not np.all(np.isfinite(x.view(np.float64))):
        raise DivergenceError("recurrent state diverged (non-finite entries)")
    y = dssm.pair_factor * np.dot(dssm.c_bar, x).real + d * u
    return SsmState(x), float(y)


def recurrent_forward(
    dssm: DiscreteSsm, u: np.ndarray, mode: str = "naive", d: float = 0.0
) -> np.ndarray:
    """Full-sequence recurrence; compensated mode carries Kahan/2Sum
    correction terms per coordinate."""
    if mode not in ("naive", "compensated"):
        raise ValueError(f"unknown mode {mode!r}")
    u = np.asarray(u, dtype=np.float64)
    ceff = dssm.pair_factor * dssm.c_bar
    y, xr, xi = backend.diag_ssm_scan(
        dssm.lam_bar.real.copy(),
        dssm.lam_bar.imag.copy(),
        dssm.b_bar.real.copy(),
        dssm.b_bar.imag.copy(),
        ceff.real.copy(),
        ceff.imag.copy(),
        float(d),
        u,
        mode == "compensated",
    )
    if not (np.all(np.isfinite(y)) and np.all(np.isfinite(xr)) and np.all(np.isfinite(xi))):
        raise DivergenceError("recurrent state diverged (non-finite entries)")
    return y


def write_kernel_csv(path, kernels: np.ndarray) -> None:
    """Dump per-channel kernels as rows (channel, lag, value)."""
    kernels = np.atleast_2d(kernels)
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["channel", "lag", "value"])
        for h in range(kernels.shape[0]):
            for i in range(kernels.shape[1]):
                w.writerow([h, i, repr(float(kernels[h, i]))])


def write_eigen_csv(path, lam_bar: np.ndarray) -> None:
    """Dump discrete eigenvalues as rows (channel, n, re, im, magnitude)."""
    lam_bar = np.atleast_2d(lam_bar)
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["channel", "n", "re", "im", "magnitude"])
        for h in range(lam_bar.shape[0]):
            for n in range(lam_bar.shape[1]):
                z = lam_bar[h, n]
                w.writerow([h, n, repr(float(z.real)), repr(float(z.imag)),
                            repr(float(abs(z)))])
