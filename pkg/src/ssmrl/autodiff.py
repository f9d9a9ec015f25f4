"""Minimal reverse-mode differentiation over dense real NumPy arrays.

Ops record backward closures on the active Tape; Tape.backward replays
them in exact reverse creation order.  Only first-order gradients are
supported.
"""

import numpy as np
from scipy.special import erf

from ssmrl.ssm import _next_pow2


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "tracked")

    def __init__(self, data, requires_grad=False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self.tracked = requires_grad

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


class Tape:
    """Ordered record of differentiable ops; single use, single thread."""

    _active = None

    def __init__(self):
        self.nodes = []  # (backward closure) in creation order
        self.finished = False

    def __enter__(self):
        if Tape._active is not None:
            raise RuntimeError("a Tape is already active")
        Tape._active = self
        return self

    def __exit__(self, *exc):
        Tape._active = None
        return False

    def backward(self, loss):
        """Accumulate d(loss)/d(leaf) into .grad of every tracked leaf.

        Returns the set of requires_grad leaves that received a gradient.
        """
        if self.finished:
            raise RuntimeError("backward already ran on this tape")
        if np.ndim(loss.data) != 0 and loss.data.size != 1:
            raise ValueError("backward requires a scalar loss")
        self.finished = True
        loss.grad = np.ones_like(loss.data)
        touched = set()
        for node in reversed(self.nodes):
            node(touched)
        return {t for t in touched if t.requires_grad}


def _lift(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _accum(t, g, touched):
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g
    touched.add(t)


def _unbroadcast(g, shape):
    """Reduce a gradient back to the shape it was broadcast from."""
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _make(data, inputs, backward_fn):
    """Create the op output and register its adjoint on the active tape.

    backward_fn(g, touched) receives the output adjoint.
    """
    tape = Tape._active
    out = Tensor(data)
    if tape is not None and any(i.tracked for i in inputs):
        out.tracked = True

        def node(touched, out=out, fn=backward_fn):
            if out.grad is not None:
                fn(out.grad, touched)

        tape.nodes.append(node)
    return out


# ---------------------------------------------------------------------------
# elementwise arithmetic

def add(a, b):
    a, b = _lift(a), _lift(b)

    def bw(g, touched):
        if a.tracked:
            _accum(a, _unbroadcast(g, a.shape), touched)
        if b.tracked:
            _accum(b, _unbroadcast(g, b.shape), touched)

    return _make(a.data + b.data, (a, b), bw)


def sub(a, b):
    a, b = _lift(a), _lift(b)

    def bw(g, touched):
        if a.tracked:
            _accum(a, _unbroadcast(g, a.shape), touched)
        if b.tracked:
            _accum(b, _unbroadcast(-g, b.shape), touched)

    return _make(a.data - b.data, (a, b), bw)


def mul(a, b):
    a, b = _lift(a), _lift(b)

    def bw(g, touched):
        if a.tracked:
            _accum(a, _unbroadcast(g * b.data, a.shape), touched)
        if b.tracked:
            _accum(b, _unbroadcast(g * a.data, b.shape), touched)

    return _make(a.data * b.data, (a, b), bw)


def div(a, b):
    a, b = _lift(a), _lift(b)

    def bw(g, touched):
        if a.tracked:
            _accum(a, _unbroadcast(g / b.data, a.shape), touched)
        if b.tracked:
            _accum(b, _unbroadcast(-g * a.data / (b.data * b.data), b.shape), touched)

    return _make(a.data / b.data, (a, b), bw)


def neg(a):
    a = _lift(a)

    def bw(g, touched):
        _accum(a, -g, touched)

    return _make(-a.data, (a,), bw)


def exp(a):
    a = _lift(a)
    out_data = np.exp(a.data)

    def bw(g, touched):
        _accum(a, g * out_data, touched)

    return _make(out_data, (a,), bw)


def tanh(a):
    a = _lift(a)
    t = np.tanh(a.data)

    def bw(g, touched):
        _accum(a, g * (1.0 - t * t), touched)

    return _make(t, (a,), bw)


def relu(a):
    a = _lift(a)
    mask = a.data > 0

    def bw(g, touched):
        _accum(a, g * mask, touched)

    return _make(np.where(mask, a.data, 0.0), (a,), bw)


_INV_SQRT2 = 1.0 / np.sqrt(2.0)
_INV_SQRT2PI = 1.0 / np.sqrt(2.0 * np.pi)


def gelu(a):
    """Exact Gaussian-CDF form: x * Phi(x)."""
    a = _lift(a)
    phi_cdf = 0.5 * (1.0 + erf(a.data * _INV_SQRT2))

    def bw(g, touched):
        pdf = _INV_SQRT2PI * np.exp(-0.5 * a.data * a.data)
        _accum(a, g * (phi_cdf + a.data * pdf), touched)

    return _make(a.data * phi_cdf, (a,), bw)


# ---------------------------------------------------------------------------
# linear algebra / reductions / shaping

def matmul(a, w):
    """a (..., k) @ w (k, n) -> (..., n)."""
    a, w = _lift(a), _lift(w)

    def bw(g, touched):
        if a.tracked:
            _accum(a, g @ w.data.T, touched)
        if w.tracked:
            ga = a.data.reshape(-1, a.shape[-1])
            _accum(w, ga.T @ g.reshape(-1, g.shape[-1]), touched)

    return _make(a.data @ w.data, (a, w), bw)


def tsum(a, axis=None):
    a = _lift(a)

    def bw(g, touched):
        if axis is None:
            _accum(a, np.broadcast_to(g, a.shape).copy(), touched)
        else:
            _accum(a, np.broadcast_to(np.expand_dims(g, axis), a.shape).copy(), touched)

    return _make(a.data.sum(axis=axis), (a,), bw)


def tmean(a, axis=None):
    a = _lift(a)
    n = a.data.size if axis is None else a.shape[axis]

    def bw(g, touched):
        if axis is None:
            _accum(a, np.broadcast_to(g / n, a.shape).copy(), touched)
        else:
            _accum(a, np.broadcast_to(np.expand_dims(g / n, axis), a.shape).copy(), touched)

    return _make(a.data.mean(axis=axis), (a,), bw)


def reshape(a, shape):
    a = _lift(a)

    def bw(g, touched):
        _accum(a, g.reshape(a.shape), touched)

    return _make(a.data.reshape(shape), (a,), bw)


def moveaxis(a, src, dst):
    a = _lift(a)

    def bw(g, touched):
        _accum(a, np.moveaxis(g, dst, src), touched)

    return _make(np.moveaxis(a.data, src, dst).copy(), (a,), bw)


def concat(parts, axis=-1):
    parts = [_lift(p) for p in parts]
    sizes = [p.shape[axis] for p in parts]

    def bw(g, touched):
        offs = np.cumsum([0] + sizes)
        for p, lo, hi in zip(parts, offs[:-1], offs[1:]):
            if p.tracked:
                idx = [slice(None)] * g.ndim
                idx[axis] = slice(lo, hi)
                _accum(p, g[tuple(idx)], touched)

    return _make(np.concatenate([p.data for p in parts], axis=axis), parts, bw)


def gather(a, indices, axis=0):
    a = _lift(a)
    indices = np.asarray(indices)

    def bw(g, touched):
        ga = np.zeros_like(a.data)
        np.add.at(np.moveaxis(ga, axis, 0), indices, np.moveaxis(g, axis, 0))
        _accum(a, ga, touched)

    return _make(np.take(a.data, indices, axis=axis), (a,), bw)


def pad_last(a, before, after):
    """Zero-pad the last axis."""
    a = _lift(a)
    widths = [(0, 0)] * (a.data.ndim - 1) + [(before, after)]

    def bw(g, touched):
        sl = [slice(None)] * (g.ndim - 1) + [slice(before, before + a.shape[-1])]
        _accum(a, g[tuple(sl)], touched)

    return _make(np.pad(a.data, widths), (a,), bw)


# ---------------------------------------------------------------------------
# stochastic / normalization

def dropout(a, p, train, rng):
    a = _lift(a)
    if not train or p <= 0.0:
        def bw_id(g, touched):
            _accum(a, g, touched)

        return _make(a.data.copy(), (a,), bw_id)
    keep = (rng.random(a.shape) >= p) / (1.0 - p)

    def bw(g, touched):
        _accum(a, g * keep, touched)

    return _make(a.data * keep, (a,), bw)


def feature_norm(a, gain, bias, eps=1e-5):
    """Normalize over the last (feature) axis with learned scale/shift.

    Statistics are per position, independent of batch composition, so
    sequence-mode training and step-mode inference see identical math.
    """
    a, gain, bias = _lift(a), _lift(gain), _lift(bias)
    mu = a.data.mean(axis=-1, keepdims=True)
    xc = a.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv

    def bw(g, touched):
        if gain.tracked:
            _accum(gain, _unbroadcast(g * xhat, gain.shape), touched)
        if bias.tracked:
            _accum(bias, _unbroadcast(g, bias.shape), touched)
        if a.tracked:
            d = a.shape[-1]
            gx = g * gain.data
            t1 = gx * inv
            t2 = (gx * xhat).sum(axis=-1, keepdims=True) * xhat * inv / d
            t3 = gx.sum(axis=-1, keepdims=True) * inv / d
            _accum(a, t1 - t2 - t3, touched)

    return _make(xhat * gain.data + bias.data, (a, gain, bias), bw)


# ---------------------------------------------------------------------------
# losses

def mse_loss(pred, target):
    pred, target = _lift(pred), _lift(target)
    diff = pred.data - target.data
    if not np.all(np.isfinite(diff)):
        raise FloatingPointError("non-finite values reached the loss")
    n = diff.size

    def bw(g, touched):
        if pred.tracked:
            _accum(pred, g * 2.0 * diff / n, touched)
        if target.tracked:
            _accum(target, -g * 2.0 * diff / n, touched)

    return _make(np.mean(diff * diff), (pred, target), bw)


# ---------------------------------------------------------------------------
# SSM-specific primitives

def _causal_corr(a, g, length):
    """c[j] = sum_i a[i] g[i+j] for j < length, via zero-padded FFT."""
    nfft = _next_pow2(2 * length - 1) if length > 1 else 1
    cf = np.conj(np.fft.rfft(a, n=nfft)) * np.fft.rfft(g, n=nfft)
    return np.fft.irfft(cf, n=nfft)[..., :length]


def fft_conv(kernel, signal):
    """Causal convolution along the last axis; shapes broadcast."""
    kernel, signal = _lift(kernel), _lift(signal)
    length = signal.shape[-1]
    if kernel.shape[-1] != length:
        raise ValueError(
            f"kernel length {kernel.shape[-1]} != signal length {length}"
        )
    nfft = _next_pow2(2 * length - 1) if length > 1 else 1
    out_data = np.fft.irfft(
        np.fft.rfft(kernel.data, n=nfft) * np.fft.rfft(signal.data, n=nfft), n=nfft
    )[..., :length]

    def bw(g, touched):
        if signal.tracked:
            _accum(signal, _unbroadcast(_causal_corr(kernel.data, g, length),
                                        signal.shape), touched)
        if kernel.tracked:
            _accum(kernel, _unbroadcast(_causal_corr(signal.data, g, length),
                                        kernel.shape), touched)

    return _make(out_data, (kernel, signal), bw)


def complex_geom_powers(z_re, z_im, length):
    """Powers z^0 .. z^(L-1) of an elementwise complex tensor.

    Returns (p_re, p_im) with a new leading length axis.  The adjoint of
    the holomorphic map z -> z^i is conj(i z^(i-1)).
    """
    z_re, z_im = _lift(z_re), _lift(z_im)
    z = z_re.data + 1j * z_im.data
    p = np.empty((length,) + z.shape, dtype=np.complex128)
    p[0] = 1.0
    if length > 1:
        np.cumprod(np.broadcast_to(z, p[1:].shape), axis=0, out=p[1:])
    tape = Tape._active
    tracked = z_re.tracked or z_im.tracked
    out_re = Tensor(p.real.copy())
    out_im = Tensor(p.imag.copy())
    if tape is not None and tracked:
        out_re.tracked = True
        out_im.tracked = True

        def node(touched):
            gre = out_re.grad
            gim = out_im.grad
            if gre is None and gim is None:
                return
            gc = (0.0 if gre is None else gre) + 1j * (0.0 if gim is None else gim)
            i = np.arange(1, length).reshape((-1,) + (1,) * z.ndim)
            gz = (np.conj(i * p[:-1]) * gc[1:]).sum(axis=0)
            if z_re.tracked:
                _accum(z_re, gz.real.copy(), touched)
            if z_im.tracked:
                _accum(z_im, gz.imag.copy(), touched)

        tape.nodes.append(node)
    return out_re, out_im
