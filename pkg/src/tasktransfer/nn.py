"""Small dense networks in numpy with hand-written backprop and Adam.

Parameters live in a plain ``dict[str, ndarray]`` so they can be copied,
hashed and serialized without any framework.
"""
from __future__ import annotations

import numpy as np


def init_dense(rng: np.random.Generator, sizes: list[int], prefix: str = "") -> dict[str, np.ndarray]:
    """Uniform init in +-1/sqrt(fan_in) for every layer ``W{i}``/``b{i}``."""
    params = {}
    for i, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
        bound = 1.0 / np.sqrt(fan_in)
        params[f"{prefix}W{i}"] = rng.uniform(-bound, bound, size=(fan_in, fan_out))
        params[f"{prefix}b{i}"] = rng.uniform(-bound, bound, size=fan_out)
    return params


def n_layers(params: dict[str, np.ndarray], prefix: str = "") -> int:
    n = 0
    while f"{prefix}W{n}" in params:
        n += 1
    return n


def mlp_forward(params, x, prefix=""):
    """ReLU hidden layers, linear output. Returns (output, cache for backprop)."""
    n = n_layers(params, prefix)
    acts = [x]
    h = x
    for i in range(n):
        z = h @ params[f"{prefix}W{i}"] + params[f"{prefix}b{i}"]
        h = np.maximum(z, 0.0) if i < n - 1 else z
        acts.append(h)
    return h, acts


def mlp_backward(params, acts, grad_out, prefix=""):
    """Backprop ``grad_out`` (dL/doutput) through a cached forward pass.

    Returns parameter gradients and the gradient w.r.t. the input.
    """
    n = n_layers(params, prefix)
    grads = {}
    g = grad_out
    for i in reversed(range(n)):
        if i < n - 1:
            g = g * (acts[i + 1] > 0)
        grads[f"{prefix}W{i}"] = acts[i].T @ g
        grads[f"{prefix}b{i}"] = g.sum(axis=0)
        g = g @ params[f"{prefix}W{i}"].T
    return grads, g


class Adam:
    """Adam with bias correction, updating a parameter dict in place."""

    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params, grads):
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for k, g in grads.items():
            m, v = self.m[k], self.v[k]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            params[k] -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """Max absolute deviation scaled by the larger of the two gradient norms (inf-norm)."""
    scale = max(np.abs(analytic).max(initial=0.0), np.abs(numeric).max(initial=0.0), 1e-12)
    return float(np.abs(analytic - numeric).max(initial=0.0) / scale)


def numeric_grad(loss_fn, params: dict[str, np.ndarray], h: float = 1e-4) -> dict[str, np.ndarray]:
    """Central finite differences of ``loss_fn()`` w.r.t. every entry of ``params``."""
    out = {}
    for k, p in params.items():
        g = np.zeros_like(p)
        flat, gflat = p.reshape(-1), g.reshape(-1)
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + h
            up = loss_fn()
            flat[i] = old - h
            down = loss_fn()
            flat[i] = old
            gflat[i] = (up - down) / (2 * h)
        out[k] = g
    return out


def min_abs_preactivation(params: dict[str, np.ndarray], x: np.ndarray, prefix: str = "") -> float:
    """Distance of the closest hidden pre-activation to the ReLU kink.

    Finite differences are only a valid gradient oracle when every hidden
    unit stays on one side of zero under the perturbation.
    """
    n = n_layers(params, prefix)
    h, closest = x, np.inf
    for i in range(n - 1):
        z = h @ params[f"{prefix}W{i}"] + params[f"{prefix}b{i}"]
        closest = min(closest, float(np.abs(z).min()))
        h = np.maximum(z, 0.0)
    return closest
