"""Adam optimiser over a dict of named parameter tensors."""

import math

import numpy as np

from .tensor import NonFiniteError


def adam_step(param, grad, m, v, step, lr=5e-5, beta1=0.9, beta2=0.999, eps=1e-8):
    """One bias-corrected Adam update, in place on ``param``, ``m`` and ``v``."""
    m *= beta1
    m += (1.0 - beta1) * grad
    v *= beta2
    v += (1.0 - beta2) * grad * grad
    m_hat = m / (1.0 - beta1 ** step)
    v_hat = v / (1.0 - beta2 ** step)
    param -= lr * m_hat / (np.sqrt(v_hat) + eps)
    return param


class Adam:
    """Adam with moment buffers over one flat parameter vector.

    On construction every trainable tensor's ``data`` is re-pointed at a view
    into a single contiguous buffer, so a step is one vectorised update.

    Parameters
    ----------
    params : dict of str -> Tensor
        Parameters to update. Only tensors with ``requires_grad`` are touched.
    lr : float, default=5e-5
    betas : tuple of float, default=(0.9, 0.999)
    eps : float, default=1e-8
    weight_decay : float, default=0.0
        L2 coefficient applied to the parameters named in ``decay``.
    decay : iterable of str, optional
    """

    def __init__(self, params, lr=5e-5, betas=(0.9, 0.999), eps=1e-8, weight_decay=0.0, decay=()):
        self.params = params
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.step_count = 0
        self.names = [k for k, p in params.items() if p.requires_grad]
        sizes = [params[k].data.size for k in self.names]
        self.offsets = np.concatenate([[0], np.cumsum(sizes)]).astype(int)
        self.flat = np.zeros(self.offsets[-1])
        self.decay_mask = np.zeros_like(self.flat)
        for k, a, b in zip(self.names, self.offsets[:-1], self.offsets[1:]):
            p = params[k]
            self.flat[a:b] = p.data.reshape(-1)
            p.data = self.flat[a:b].reshape(p.data.shape)
            if k in set(decay):
                self.decay_mask[a:b] = weight_decay
        self.m = np.zeros_like(self.flat)
        self.v = np.zeros_like(self.flat)

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def flat_grad(self):
        parts = []
        for k in self.names:
            p = self.params[k]
            parts.append(np.zeros(p.data.size) if p.grad is None else p.grad.reshape(-1))
        return np.concatenate(parts) if parts else np.zeros(0)

    def step(self):
        self.step_count += 1
        g = self.flat_grad()
        if self.decay_mask.any():
            g = g + self.decay_mask * self.flat
        adam_step(self.flat, g, self.m, self.v, self.step_count,
                  self.lr, self.beta1, self.beta2, self.eps)
        if not math.isfinite(self.flat.sum()):
            bad = [k for k in self.names if not np.all(np.isfinite(self.params[k].data))]
            raise NonFiniteError(f"parameters became non-finite after Adam step: {bad}")
