"""Adam and gradient clipping."""

import numpy as np


class Adam:
    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        if not lr > 0:
            raise ValueError("learning rate must be positive")
        self.params = params
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.step_count = 0
        self.m = {n: np.zeros_like(p.data) for n, p in params.items()}
        self.v = {n: np.zeros_like(p.data) for n, p in params.items()}

    def step(self):
        adam_step(self.params, self.lr, self.beta1, self.beta2, self.eps, state=self)

    def state_arrays(self):
        out = {}
        for n in self.params:
            out["adam.m." + n] = self.m[n]
            out["adam.v." + n] = self.v[n]
        return out

    def load_state_arrays(self, arrays):
        for n in self.params:
            self.m[n][...] = arrays["adam.m." + n]
            self.v[n][...] = arrays["adam.v." + n]


def adam_step(params, lr, beta1=0.9, beta2=0.999, eps=1e-8, state=None):
    """One bias-corrected Adam update of every parameter in ``params``.

    ``state`` holds the moment estimates and step counter; pass an
    :class:`Adam` instance (a fresh one is created and attached to
    ``params`` on first use otherwise).
    """
    if state is None:
        state = getattr(params, "_adam", None)
        if state is None:
            state = Adam(params, lr, beta1, beta2, eps)
            params._adam = state
    for name, p in params.items():
        if p.grad is None:
            raise ValueError("parameter %r has no gradient" % name)
    state.step_count += 1
    t = state.step_count
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    for name, p in params.items():
        g = p.grad
        m, v = state.m[name], state.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        update = lr * (m / c1) / (np.sqrt(v / c2) + eps)
        p.data -= update.astype(p.dtype, copy=False)


def global_grad_norm(params):
    return float(np.sqrt(sum(float(np.sum(np.square(p.grad, dtype=np.float64)))
                             for p in params.values() if p.grad is not None)))


def clip_grad_norm(params, max_norm):
    """Scale all gradients so their global L2 norm is at most ``max_norm``."""
    norm = global_grad_norm(params)
    if norm > max_norm:
        scale = max_norm / (norm + 1e-12)
        for p in params.values():
            if p.grad is not None:
                p.grad = (p.grad * scale).astype(p.dtype, copy=False)
    return norm
