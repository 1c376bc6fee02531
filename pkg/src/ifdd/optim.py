"""AdamW with decoupled weight decay and the warmup + cosine schedule."""

import numpy as np


class AdamW:
    """Decoupled weight decay: parameters shrink by (1 - lr*wd) before the
    bias-corrected moment update; decay never enters the moments."""

    def __init__(self, params, lr=1e-4, weight_decay=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = dict(params)
        self.lr = float(lr)
        self.weight_decay = float(weight_decay)
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.eps = float(eps)
        self.t = 0
        self.m = {k: np.zeros_like(p.data) for k, p in self.params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in self.params.items()}

    def zero_grad(self):
        for p in self.params.values():
            p.zero_grad()

    def step(self, lr=None):
        lr = self.lr if lr is None else float(lr)
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for k, p in self.params.items():
            g = p.grad
            if g is None:
                g = np.zeros_like(p.data)
            if g.shape != p.data.shape:
                raise ValueError(f"gradient shape {g.shape} mismatches parameter {k} {p.data.shape}")
            if self.weight_decay:
                p.data *= 1.0 - lr * self.weight_decay
            m = self.m[k]
            v = self.v[k]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            mhat = m / bc1
            vhat = v / bc2
            p.data -= lr * mhat / (np.sqrt(vhat) + self.eps)


def lr_schedule(epoch, total_epochs, warmup_epochs, base_lr, warmup_lr):
    """Constant warmup rate, then cosine from base_lr to 0."""
    if epoch >= total_epochs:
        raise ValueError(f"epoch {epoch} outside [0, {total_epochs})")
    if epoch < warmup_epochs:
        return float(warmup_lr)
    span = max(1, total_epochs - warmup_epochs)
    progress = (epoch - warmup_epochs) / span
    return float(base_lr) * 0.5 * (1.0 + np.cos(np.pi * progress))
