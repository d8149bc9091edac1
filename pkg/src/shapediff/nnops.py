"""Minimal numpy building blocks for the two small networks in this package.

Every op comes as a forward/backward pair; training loops keep whatever
intermediate arrays the backward pass needs.  Convolutions are expressed as
nine channel-space matmuls (one per 3x3 offset), which keeps memory flat and
lets BLAS do the work.
"""

import numpy as np


def linear_fwd(x, W, b):
    return x @ W + b


def linear_bwd(x, W, g):
    """Returns (dx, dW, db) for y = x @ W + b."""
    return g @ W.T, x.T @ g, g.sum(axis=0)


def tanh_fwd(x):
    return np.tanh(x)


def tanh_bwd(y, g):
    return g * (1.0 - y * y)


def relu_fwd(x):
    return np.maximum(x, 0.0)


def relu_bwd(x, g):
    return g * (x > 0)


def sinusoidal_embedding(t, dim):
    """Standard sin/cos positional embedding of integer timesteps, shape (N, dim)."""
    t = np.atleast_1d(np.asarray(t, dtype=np.float64))
    half = dim // 2
    freqs = np.exp(-np.log(10000.0) * np.arange(half) / max(half - 1, 1))
    args = t[:, None] * freqs[None, :]
    return np.concatenate([np.sin(args), np.cos(args)], axis=1)


def conv2d_fwd(x, W, b, stride=1):
    """3x3 convolution with padding 1.  x: (N, C, H, W), W: (Co, C, 3, 3)."""
    N, C, H, Wd = x.shape
    Co = W.shape[0]
    Ho = (H + 2 - 3) // stride + 1
    Wo = (Wd + 2 - 3) // stride + 1
    xp = np.zeros((N, C, H + 2, Wd + 2))
    xp[:, :, 1:-1, 1:-1] = x
    y = np.empty((N, Co, Ho, Wo))
    y[:] = b[None, :, None, None]
    for a in range(3):
        for c in range(3):
            patch = xp[:, :, a : a + stride * Ho : stride, c : c + stride * Wo : stride]
            # (N, C, Ho, Wo) x (Co, C) -> (N, Co, Ho, Wo)
            y += np.einsum("nchw,oc->nohw", patch, W[:, :, a, c], optimize=True)
    return y


def conv2d_bwd(x, W, g, stride=1):
    """Gradients for conv2d_fwd.  Returns (dx, dW, db)."""
    N, C, H, Wd = x.shape
    Co, _, _, _ = W.shape
    _, _, Ho, Wo = g.shape
    xp = np.zeros((N, C, H + 2, Wd + 2))
    xp[:, :, 1:-1, 1:-1] = x
    dxp = np.zeros_like(xp)
    dW = np.zeros_like(W)
    for a in range(3):
        for c in range(3):
            sl = np.s_[:, :, a : a + stride * Ho : stride, c : c + stride * Wo : stride]
            patch = xp[sl]
            dW[:, :, a, c] = np.einsum("nohw,nchw->oc", g, patch, optimize=True)
            dxp[sl] += np.einsum("nohw,oc->nchw", g, W[:, :, a, c], optimize=True)
    db = g.sum(axis=(0, 2, 3))
    return dxp[:, :, 1:-1, 1:-1], dW, db


def upsample2_fwd(x):
    """Nearest-neighbour 2x upsampling."""
    return x.repeat(2, axis=2).repeat(2, axis=3)


def upsample2_bwd(g):
    """Adjoint of nearest upsampling: 2x2 sum pooling."""
    N, C, H, W = g.shape
    return g.reshape(N, C, H // 2, 2, W // 2, 2).sum(axis=(3, 5))


class Adam:
    """Adam with bias-corrected first and second moments."""

    def __init__(self, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = {}
        self.v = {}
        self.t = 0

    def step(self, params, grads):
        self.t += 1
        correction = np.sqrt(1.0 - self.beta2**self.t) / (1.0 - self.beta1**self.t)
        for key, g in grads.items():
            m = self.m.get(key, 0.0)
            v = self.v.get(key, 0.0)
            m = self.beta1 * m + (1.0 - self.beta1) * g
            v = self.beta2 * v + (1.0 - self.beta2) * g * g
            self.m[key] = m
            self.v[key] = v
            params[key] = params[key] - self.lr * correction * m / (np.sqrt(v) + self.eps)


class SgdMomentum:
    """Stochastic gradient descent with classical momentum.

    Gradients are rescaled when their global norm exceeds ``clip``, which
    keeps large learning rates stable on the deeper network.
    """

    def __init__(self, lr, momentum=0.9, clip=1.0):
        self.lr = lr
        self.momentum = momentum
        self.clip = clip
        self.velocity = {}

    def step(self, params, grads):
        scale = 1.0
        if self.clip is not None:
            total = np.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
            if total > self.clip:
                scale = self.clip / total
        for key, g in grads.items():
            vel = self.velocity.get(key)
            if vel is None:
                vel = np.zeros_like(g)
            vel = self.momentum * vel - self.lr * scale * g
            self.velocity[key] = vel
            params[key] = params[key] + vel
