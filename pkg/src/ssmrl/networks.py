"""Return-conditioned sequence actor and feed-forward critic.

The actor fuses (state, previous action, previous return-to-go) into one
token per timestep, runs three stacked diagonal-SSM blocks, and emits a
tanh-squashed action.  Sequence mode computes the SSM through the FFT
convolution (training); step mode runs the recurrence with constant
per-step cost (control).
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.special import erf

from ssmrl import autodiff as ad
from ssmrl.ssm import DivergenceError
from ssmrl._scan_py import _two_sum


@dataclass
class ActorConfig:
    state_dim: int
    action_dim: int
    n_channels: int = 64  # H
    n_state: int = 64  # N (per channel; M = N/2 stored)
    n_blocks: int = 3
    dropout: float = 0.1
    action_low: float = -1.0
    action_high: float = 1.0
    step_mode: str = "naive"  # or "compensated"

    @property
    def m(self):
        return self.n_state // 2

    @property
    def action_center(self):
        return 0.5 * (self.action_high + self.action_low)

    @property
    def action_scale(self):
        return 0.5 * (self.action_high - self.action_low)


def _linear_init(rng, fan_in, fan_out):
    return rng.standard_normal((fan_in, fan_out)) / np.sqrt(fan_in)


def _gelu_nd(x):
    return x * 0.5 * (1.0 + erf(x / np.sqrt(2.0)))


def _relu_nd(x):
    return np.maximum(x, 0.0)


def _feature_norm_nd(x, gain, bias, eps=1e-5):
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    return xc / np.sqrt(var + eps) * gain + bias


@dataclass
class ActorCarry:
    """Recurrent context: per-block SSM states plus conversational inputs."""

    x_re: list  # per block (..., H, M)
    x_im: list
    e_re: list  # Kahan compensation terms (zero in naive mode)
    e_im: list
    prev_action: np.ndarray
    prev_rtg: np.ndarray

    def to_array(self):
        parts = []
        for arrs in (self.x_re, self.x_im, self.e_re, self.e_im):
            parts.extend(a.reshape(a.shape[:-2] + (-1,)) for a in arrs)
        parts.append(np.asarray(self.prev_action, dtype=np.float64))
        parts.append(np.expand_dims(np.asarray(self.prev_rtg, dtype=np.float64), -1))
        return np.concatenate(parts, axis=-1)

    @classmethod
    def from_array(cls, flat, config):
        h, m, nb, da = (config.n_channels, config.m, config.n_blocks,
                        config.action_dim)
        lead = flat.shape[:-1]
        blk = h * m
        fields = []
        off = 0
        for _ in range(4):
            arrs = []
            for _ in range(nb):
                arrs.append(flat[..., off:off + blk].reshape(lead + (h, m)).copy())
                off += blk
            fields.append(arrs)
        pa = flat[..., off:off + da].copy()
        off += da
        rtg = flat[..., off]
        return cls(*fields, prev_action=pa, prev_rtg=np.asarray(rtg).copy())


class ActorNetwork:
    def __init__(self, config: ActorConfig, rng_seed: int = 0):
        self.config = config
        rng = np.random.default_rng(rng_seed)
        h, m, ds, da = (config.n_channels, config.m, config.state_dim,
                        config.action_dim)
        p = {}
        for name, fan_in in (("enc_state", ds), ("enc_action", da),
                             ("enc_rtg", 1), ("in_proj", h), ("out_proj", h)):
            p[f"{name}/W"] = ad.Tensor(_linear_init(rng, fan_in, h), True)
            p[f"{name}/b"] = ad.Tensor(np.zeros(h), True)
        # zero-initialized head: the untrained policy is the zero action
        p["head/W"] = ad.Tensor(np.zeros((h, da)), True)
        p["head/b"] = ad.Tensor(np.zeros(da), True)
        for i in range(config.n_blocks):
            p[f"block{i}/lam_re"] = ad.Tensor(np.full((h, m), -0.5), True)
            p[f"block{i}/lam_im"] = ad.Tensor(
                np.tile(np.pi * np.arange(m), (h, 1)), True)
            p[f"block{i}/log_delta"] = ad.Tensor(
                rng.uniform(np.log(0.001), np.log(0.1), size=h), True)
            p[f"block{i}/c_re"] = ad.Tensor(
                np.sqrt(0.5) * rng.standard_normal((h, m)), True)
            p[f"block{i}/c_im"] = ad.Tensor(
                np.sqrt(0.5) * rng.standard_normal((h, m)), True)
            p[f"block{i}/d"] = ad.Tensor(np.zeros(h), True)
            p[f"block{i}/mix/W"] = ad.Tensor(_linear_init(rng, h, h), True)
            p[f"block{i}/mix/b"] = ad.Tensor(np.zeros(h), True)
            p[f"block{i}/norm/g"] = ad.Tensor(np.ones(h), True)
            p[f"block{i}/norm/b"] = ad.Tensor(np.zeros(h), True)
        self.params = p

    # -- parameter plumbing -------------------------------------------------

    def n_params(self):
        return sum(p.data.size for p in self.params.values())

    def freeze_kernel(self):
        """Freeze the full SSM kernel (lambda, step size and output vector)
        for fine-tuning, so the convolution kernels stay bit-identical."""
        for i in range(self.config.n_blocks):
            for name in ("lam_re", "lam_im", "log_delta", "c_re", "c_im"):
                self.params[f"block{i}/{name}"].requires_grad = False

    def copy(self):
        clone = ActorNetwork(self.config)
        for k, p in self.params.items():
            clone.params[k].data = p.data.copy()
            clone.params[k].requires_grad = p.requires_grad
        return clone

    # -- discrete parameterization ------------------------------------------

    def _discrete_nd(self, i):
        """Discrete SSM arrays (no tape) for block i: lam_bar, b_bar."""
        lr = self.params[f"block{i}/lam_re"].data
        li = self.params[f"block{i}/lam_im"].data
        delta = np.exp(self.params[f"block{i}/log_delta"].data)[:, None]
        den = 1.0 - (delta / 2.0) * (lr + 1j * li)
        lam_bar = (1.0 + (delta / 2.0) * (lr + 1j * li)) / den
        b_bar = delta / den  # continuous b is all-ones
        return lam_bar, b_bar

    def eigenvalues(self):
        """(n_blocks, H, M) discrete eigenvalues."""
        return np.stack([self._discrete_nd(i)[0] for i in range(self.config.n_blocks)])

    def kernels(self, length):
        """(n_blocks, H, L) convolution kernels at the current parameters."""
        from ssmrl.ssm import geometric_powers

        out = []
        for i in range(self.config.n_blocks):
            lam_bar, b_bar = self._discrete_nd(i)
            c = (self.params[f"block{i}/c_re"].data
                 + 1j * self.params[f"block{i}/c_im"].data)
            powers = geometric_powers(lam_bar, length)  # (L, H, M)
            out.append(2.0 * (powers * (c * b_bar)).sum(axis=-1).real.T)
        return np.stack(out)

    # -- sequence mode ------------------------------------------------------

    def _kernel_tensor(self, i, length, kernel_taps):
        """Differentiable (H, L) kernel for block i."""
        h = self.config.n_channels
        lr = self.params[f"block{i}/lam_re"]
        li = self.params[f"block{i}/lam_im"]
        cr = self.params[f"block{i}/c_re"]
        ci = self.params[f"block{i}/c_im"]
        delta = ad.reshape(ad.exp(self.params[f"block{i}/log_delta"]), (h, 1))
        half = ad.mul(delta, 0.5)
        den_re = ad.sub(1.0, ad.mul(half, lr))
        den_im = ad.neg(ad.mul(half, li))
        den2 = ad.add(ad.mul(den_re, den_re), ad.mul(den_im, den_im))
        num_re = ad.add(1.0, ad.mul(half, lr))
        num_im = ad.mul(half, li)
        lb_re = ad.div(ad.add(ad.mul(num_re, den_re), ad.mul(num_im, den_im)), den2)
        lb_im = ad.div(ad.sub(ad.mul(num_im, den_re), ad.mul(num_re, den_im)), den2)
        bb_re = ad.div(ad.mul(delta, den_re), den2)
        bb_im = ad.neg(ad.div(ad.mul(delta, den_im), den2))
        w_re = ad.sub(ad.mul(cr, bb_re), ad.mul(ci, bb_im))
        w_im = ad.add(ad.mul(cr, bb_im), ad.mul(ci, bb_re))
        p_re, p_im = ad.complex_geom_powers(lb_re, lb_im, length)  # (L, H, M)
        k = ad.mul(2.0, ad.tsum(ad.sub(ad.mul(p_re, w_re), ad.mul(p_im, w_im)),
                                axis=-1))  # (L, H)
        k = ad.moveaxis(k, 0, 1)  # (H, L)
        if kernel_taps is not None and kernel_taps < length:
            mask = np.zeros(length)
            mask[:kernel_taps] = 1.0
            k = ad.mul(k, ad.Tensor(mask))
        return k

    def _encode(self, states, prev_actions, prev_rtgs):
        tok = ad.relu(ad.add(ad.matmul(states, self.params["enc_state/W"]),
                             self.params["enc_state/b"]))
        tok = ad.add(tok, ad.relu(ad.add(
            ad.matmul(prev_actions, self.params["enc_action/W"]),
            self.params["enc_action/b"])))
        tok = ad.add(tok, ad.relu(ad.add(
            ad.matmul(prev_rtgs, self.params["enc_rtg/W"]),
            self.params["enc_rtg/b"])))
        return ad.relu(ad.add(ad.matmul(tok, self.params["in_proj/W"]),
                              self.params["in_proj/b"]))

    def _head(self, x):
        x = ad.relu(ad.add(ad.matmul(x, self.params["out_proj/W"]),
                           self.params["out_proj/b"]))
        a = ad.tanh(ad.add(ad.matmul(x, self.params["head/W"]),
                           self.params["head/b"]))
        return ad.add(ad.mul(a, self.config.action_scale),
                      self.config.action_center)

    def forward_sequence(self, states, prev_actions, prev_rtgs, train=False,
                         rng=None, kernel_taps=None):
        """states (B,L,ds), prev_actions (B,L,da), prev_rtgs (B,L) ->
        predicted actions (B,L,da) as a Tensor."""
        states = ad._lift(states)
        prev_actions = ad._lift(prev_actions)
        prev_rtgs = ad._lift(prev_rtgs)
        b, length = states.shape[0], states.shape[1]
        if prev_actions.shape[:2] != (b, length) or prev_rtgs.shape != (b, length):
            raise ValueError("misaligned sequence inputs")
        rtg3 = ad.reshape(prev_rtgs, (b, length, 1))
        x = self._encode(states, prev_actions, rtg3)
        for i in range(self.config.n_blocks):
            k = self._kernel_tensor(i, length, kernel_taps)
            u = ad.moveaxis(x, 2, 1)  # (B, H, L)
            y = ad.fft_conv(k, u)
            d = ad.reshape(self.params[f"block{i}/d"], (-1, 1))
            y = ad.add(y, ad.mul(d, u))
            y = ad.moveaxis(y, 1, 2)  # (B, L, H)
            y = ad.add(ad.matmul(y, self.params[f"block{i}/mix/W"]),
                       self.params[f"block{i}/mix/b"])
            y = ad.feature_norm(y, self.params[f"block{i}/norm/g"],
                                self.params[f"block{i}/norm/b"])
            y = ad.gelu(y)
            y = ad.dropout(y, self.config.dropout, train, rng)
            x = ad.add(x, y)
        return self._head(x)

    # -- step mode (plain ndarray; constant per-step cost) -------------------

    def init_carry(self, batch_shape=()):
        cfg = self.config
        shape = tuple(batch_shape) + (cfg.n_channels, cfg.m)
        z = lambda: [np.zeros(shape) for _ in range(cfg.n_blocks)]
        return ActorCarry(z(), z(), z(), z(),
                          prev_action=np.zeros(tuple(batch_shape) + (cfg.action_dim,)),
                          prev_rtg=np.zeros(batch_shape))

    def forward_step(self, carry: ActorCarry, state, a_prev, rtg_prev):
        """One recurrent step.  state (..., ds), a_prev (..., da),
        rtg_prev (...,) -> (action (..., da), new ActorCarry)."""
        cfg = self.config
        p = {k: t.data for k, t in self.params.items()}
        state = np.asarray(state, dtype=np.float64)
        a_prev = np.asarray(a_prev, dtype=np.float64)
        rtg_prev = np.asarray(rtg_prev, dtype=np.float64)
        tok = _relu_nd(state @ p["enc_state/W"] + p["enc_state/b"])
        tok = tok + _relu_nd(a_prev @ p["enc_action/W"] + p["enc_action/b"])
        tok = tok + _relu_nd(rtg_prev[..., None] @ p["enc_rtg/W"] + p["enc_rtg/b"])
        x = _relu_nd(tok @ p["in_proj/W"] + p["in_proj/b"])

        new = ActorCarry([], [], [], [], prev_action=a_prev.copy(),
                         prev_rtg=rtg_prev.copy())
        compensated = cfg.step_mode == "compensated"
        for i in range(cfg.n_blocks):
            lam_bar, b_bar = self._discrete_nd(i)
            lr, li = lam_bar.real, lam_bar.imag
            br, bi = b_bar.real, b_bar.imag
            u = x[..., None]  # (..., H, 1)
            xr, xi = carry.x_re[i], carry.x_im[i]
            tr = lr * xr - li * xi
            ti = li * xr + lr * xi
            if compensated:
                er, ei = carry.e_re[i], carry.e_im[i]
                sr, rr = _two_sum(tr, br * u)
                si, ri = _two_sum(ti, bi * u)
                ner = lr * er - li * ei + rr
                nei = li * er + lr * ei + ri
                nxr, nxi = sr, si
                out_r, out_i = nxr + ner, nxi + nei
            else:
                nxr = tr + br * u
                nxi = ti + bi * u
                ner = np.zeros_like(nxr)
                nei = np.zeros_like(nxi)
                out_r, out_i = nxr, nxi
            if not (np.all(np.isfinite(nxr)) and np.all(np.isfinite(nxi))):
                raise DivergenceError("actor carry diverged")
            cr = p[f"block{i}/c_re"]
            ci = p[f"block{i}/c_im"]
            y = 2.0 * (cr * out_r - ci * out_i).sum(axis=-1) + p[f"block{i}/d"] * x
            y = y @ p[f"block{i}/mix/W"] + p[f"block{i}/mix/b"]
            y = _feature_norm_nd(y, p[f"block{i}/norm/g"], p[f"block{i}/norm/b"])
            x = x + _gelu_nd(y)
            new.x_re.append(nxr)
            new.x_im.append(nxi)
            new.e_re.append(ner)
            new.e_im.append(nei)
        x = _relu_nd(x @ p["out_proj/W"] + p["out_proj/b"])
        a = np.tanh(x @ p["head/W"] + p["head/b"])
        action = a * cfg.action_scale + cfg.action_center
        new.prev_action = action.copy()
        return action, new

    def forward_step_train(self, carry: ActorCarry, state, a_prev, rtg_prev):
        """Differentiable step forward for batched fine-tuning updates.

        The SSM core (lambda, delta) is treated as constant here; gradients
        flow to c, d, the mixing/normalization layers, the encoders and the
        head.  Carry arrays are constants from the replay buffer.
        """
        cfg = self.config
        state = ad._lift(state)
        a_prev = ad._lift(a_prev)
        rtg_prev = ad._lift(rtg_prev)
        rtg3 = ad.reshape(rtg_prev, rtg_prev.shape + (1,))
        x = self._encode(state, a_prev, rtg3)
        for i in range(cfg.n_blocks):
            lam_bar, b_bar = self._discrete_nd(i)
            xc = ((carry.x_re[i] + carry.e_re[i])
                  + 1j * (carry.x_im[i] + carry.e_im[i]))
            drive = lam_bar * xc  # constant: decayed replay context
            u = ad.reshape(x, x.shape + (1,))
            nxr = ad.add(drive.real, ad.mul(b_bar.real, u))
            nxi = ad.add(drive.imag, ad.mul(b_bar.imag, u))
            cr = self.params[f"block{i}/c_re"]
            ci = self.params[f"block{i}/c_im"]
            y = ad.mul(2.0, ad.tsum(ad.sub(ad.mul(cr, nxr), ad.mul(ci, nxi)),
                                    axis=-1))
            y = ad.add(y, ad.mul(self.params[f"block{i}/d"], x))
            y = ad.add(ad.matmul(y, self.params[f"block{i}/mix/W"]),
                       self.params[f"block{i}/mix/b"])
            y = ad.feature_norm(y, self.params[f"block{i}/norm/g"],
                                self.params[f"block{i}/norm/b"])
            x = ad.add(x, ad.gelu(y))
        return self._head(x)


class CriticNetwork:
    """Q(s, a): three fully-connected layers with ReLU activations."""

    def __init__(self, state_dim, action_dim, hidden=64, rng_seed=0):
        rng = np.random.default_rng(rng_seed)
        d_in = state_dim + action_dim
        self.params = {
            "fc1/W": ad.Tensor(_linear_init(rng, d_in, hidden), True),
            "fc1/b": ad.Tensor(np.zeros(hidden), True),
            "fc2/W": ad.Tensor(_linear_init(rng, hidden, hidden), True),
            "fc2/b": ad.Tensor(np.zeros(hidden), True),
            "fc3/W": ad.Tensor(_linear_init(rng, hidden, 1), True),
            "fc3/b": ad.Tensor(np.zeros(1), True),
        }
        self.state_dim = state_dim
        self.action_dim = action_dim
        self.hidden = hidden

    def forward(self, state, action):
        """state (..., ds), action (..., da) -> Q (..., 1) Tensor."""
        state, action = ad._lift(state), ad._lift(action)
        if state.shape[-1] != self.state_dim or action.shape[-1] != self.action_dim:
            raise ValueError("critic input dimension mismatch")
        x = ad.concat([state, action], axis=-1)
        p = self.params
        x = ad.relu(ad.add(ad.matmul(x, p["fc1/W"]), p["fc1/b"]))
        x = ad.relu(ad.add(ad.matmul(x, p["fc2/W"]), p["fc2/b"]))
        return ad.add(ad.matmul(x, p["fc3/W"]), p["fc3/b"])

    def copy(self):
        clone = CriticNetwork(self.state_dim, self.action_dim, self.hidden)
        for k, p in self.params.items():
            clone.params[k].data = p.data.copy()
        return clone
