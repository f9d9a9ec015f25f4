"""Adam with decoupled weight decay and linear learning-rate warm-up."""

import numpy as np


class Adam:
    def __init__(self, params, lr, betas=(0.9, 0.999), eps=1e-8,
                 weight_decay=1e-4, warmup=0):
        """params: dict name -> Tensor (frozen entries are skipped)."""
        if lr <= 0:
            raise ValueError(f"learning rate must be positive, got {lr}")
        self.params = params
        self.lr = lr
        self.betas = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.warmup = warmup
        self.t = 0
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}

    def current_lr(self):
        if self.warmup > 0:
            return self.lr * min(1.0, (self.t + 1) / self.warmup)
        return self.lr

    def step(self):
        b1, b2 = self.betas
        lr = self.current_lr()
        self.t += 1
        bc1 = 1.0 - b1**self.t
        bc2 = 1.0 - b2**self.t
        for k, p in self.params.items():
            if not p.requires_grad or p.grad is None:
                continue
            g = p.grad
            m = self.m[k]
            v = self.v[k]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            update = (m / bc1) / (np.sqrt(v / bc2) + self.eps)
            if self.weight_decay:
                update = update + self.weight_decay * p.data
            p.data -= lr * update

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def state_dict(self):
        return {
            "t": self.t,
            "m": {k: v.copy() for k, v in self.m.items()},
            "v": {k: v.copy() for k, v in self.v.items()},
        }

    def load_state_dict(self, state):
        self.t = int(state["t"])
        for k in self.m:
            self.m[k] = state["m"][k].copy()
            self.v[k] = state["v"][k].copy()
