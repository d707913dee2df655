"""Masked autoregressive flow with a one-hidden-layer MADE conditioner.

Direction convention: ``forward`` maps data ``x`` to latent ``z`` (the
density direction), ``inverse`` maps latents back to data (sampling).

Each layer first reverses the coordinate order, then applies

    z_i = (y_i - mu_i(y_<i)) * exp(-alpha_i(y_<i)),   logdet = -sum_i alpha_i

Flat parameter layout, per layer, in order::

    W1      (H, D)   input -> hidden weights, masked
    b1      (H,)
    W_mu    (D, H)   hidden -> shift head, masked
    W_alpha (D, H)   hidden -> log-scale head, masked
    b_mu    (D,)
    b_alpha (D,)

Masked-out weights are kept in the vector but never influence the output,
and their gradients are always zero.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .numerics import Rng

ALPHA_CLAMP = 15.0

__all__ = ["MadeNet", "MafLayer", "Flow", "ForwardPass", "made_forward", "ALPHA_CLAMP"]


@dataclass(frozen=True)
class MadeNet:
    """Degrees and masks for a single-hidden-layer MADE (natural ordering)."""

    dim: int
    hidden: int = 4
    in_degrees: np.ndarray = field(init=False, repr=False)
    hidden_degrees: np.ndarray = field(init=False, repr=False)
    mask_in: np.ndarray = field(init=False, repr=False)
    mask_out: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if self.dim < 2 or self.hidden < 1:
            raise ValueError("MADE needs dim >= 2 and hidden >= 1")
        d_in = np.arange(1, self.dim + 1)
        d_hid = (np.arange(self.hidden) % (self.dim - 1)) + 1
        mask_in = (d_hid[:, None] >= d_in[None, :]).astype(float)
        mask_out = (d_in[:, None] > d_hid[None, :]).astype(float)
        for name, val in (
            ("in_degrees", d_in),
            ("hidden_degrees", d_hid),
            ("mask_in", mask_in),
            ("mask_out", mask_out),
        ):
            val.setflags(write=False)
            object.__setattr__(self, name, val)

    @property
    def n_params(self) -> int:
        d, h = self.dim, self.hidden
        return h * d + h + 2 * d * h + 2 * d

    def unpack(self, theta: np.ndarray):
        d, h = self.dim, self.hidden
        i = 0
        w1 = theta[i : i + h * d].reshape(h, d); i += h * d
        b1 = theta[i : i + h]; i += h
        wmu = theta[i : i + d * h].reshape(d, h); i += d * h
        wal = theta[i : i + d * h].reshape(d, h); i += d * h
        bmu = theta[i : i + d]; i += d
        bal = theta[i : i + d]
        return w1, b1, wmu, wal, bmu, bal

    def pack(self, w1, b1, wmu, wal, bmu, bal) -> np.ndarray:
        return np.concatenate([np.ravel(a) for a in (w1, b1, wmu, wal, bmu, bal)])


def made_forward(net: MadeNet, theta: np.ndarray, y: np.ndarray):
    """Shift and (unclamped) log-scale heads for inputs ``y`` of shape ``(n, D)``."""
    w1, b1, wmu, wal, bmu, bal = net.unpack(theta)
    pre = y @ (w1 * net.mask_in).T + b1
    h = np.maximum(pre, 0.0)
    mu = h @ (wmu * net.mask_out).T + bmu
    alpha = h @ (wal * net.mask_out).T + bal
    return mu, alpha


@dataclass(frozen=True)
class MafLayer:
    net: MadeNet
    permutation: np.ndarray

    @property
    def inverse_permutation(self) -> np.ndarray:
        return np.argsort(self.permutation)


@dataclass
class ForwardPass:
    z: np.ndarray
    logdet: np.ndarray
    n_saturated: int
    cache: list


class Flow:
    """Composition of MAF layers acting on points of shape ``(n, D)``."""

    def __init__(self, params: np.ndarray, dim: int = 2, hidden: int = 4, n_layers: int = 3):
        self.dim = dim
        self.hidden = hidden
        self.n_layers = n_layers
        net = MadeNet(dim, hidden)
        perm = np.arange(dim)[::-1].copy()
        perm.setflags(write=False)
        self.layers = [MafLayer(net, perm) for _ in range(n_layers)]
        params = np.array(params, dtype=float)
        if params.shape != (self.n_params,):
            raise ValueError(f"expected {self.n_params} parameters, got {params.shape}")
        params.setflags(write=False)
        self.params = params

    @property
    def net(self) -> MadeNet:
        return self.layers[0].net

    @property
    def n_params(self) -> int:
        return self.n_layers * self.net.n_params

    @property
    def layout(self) -> dict:
        return {
            "dim": self.dim,
            "hidden": self.hidden,
            "layers": self.n_layers,
            "params_per_layer": self.net.n_params,
            "permutation": "reverse",
            "mask_seed": 0,
        }

    def with_params(self, params) -> "Flow":
        return Flow(params, self.dim, self.hidden, self.n_layers)

    @classmethod
    def identity(cls, dim: int = 2, hidden: int = 4, n_layers: int = 3) -> "Flow":
        return cls(np.zeros(n_layers * MadeNet(dim, hidden).n_params), dim, hidden, n_layers)

    @classmethod
    def initialize(cls, rng: Rng, dim: int = 2, hidden: int = 4, n_layers: int = 3) -> "Flow":
        """Hidden layers ~ U(-1/sqrt(D), 1/sqrt(D)); output heads zero, so every layer starts as identity."""
        net = MadeNet(dim, hidden)
        bound = 1.0 / math.sqrt(dim)
        chunks = []
        for _ in range(n_layers):
            w1 = rng.uniform((hidden, dim)) * 2 * bound - bound
            b1 = rng.uniform(hidden) * 2 * bound - bound
            zeros_dh = np.zeros((dim, hidden))
            chunks.append(net.pack(w1, b1, zeros_dh, zeros_dh, np.zeros(dim), np.zeros(dim)))
        return cls(np.concatenate(chunks), dim, hidden, n_layers)

    def layer_params(self, k: int) -> np.ndarray:
        p = self.net.n_params
        return self.params[k * p : (k + 1) * p]

    def transform(self, x) -> ForwardPass:
        """Forward pass keeping the intermediates needed for backpropagation."""
        y = np.atleast_2d(np.asarray(x, dtype=float))
        logdet = np.zeros(y.shape[0])
        saturated = 0
        cache = []
        for k, layer in enumerate(self.layers):
            y = y[:, layer.permutation]
            theta = self.layer_params(k)
            w1, b1, wmu, wal, bmu, bal = layer.net.unpack(theta)
            pre = y @ (w1 * layer.net.mask_in).T + b1
            h = np.maximum(pre, 0.0)
            mu = h @ (wmu * layer.net.mask_out).T + bmu
            raw_alpha = h @ (wal * layer.net.mask_out).T + bal
            alpha = np.clip(raw_alpha, -ALPHA_CLAMP, ALPHA_CLAMP)
            saturated += int(np.count_nonzero(alpha != raw_alpha))
            z = (y - mu) * np.exp(-alpha)
            logdet = logdet - alpha.sum(axis=1)
            cache.append((y, pre, h, alpha, raw_alpha, z))
            y = z
        return ForwardPass(y, logdet, saturated, cache)

    def forward(self, x):
        """Returns ``(z, logdet)`` with ``logdet = ln|det dT/dx|``."""
        single = np.ndim(x) == 1
        fp = self.transform(x)
        if single:
            return fp.z[0], float(fp.logdet[0])
        return fp.z, fp.logdet

    def inverse(self, z, return_saturation: bool = False):
        single = np.ndim(z) == 1
        x = np.atleast_2d(np.asarray(z, dtype=float)).copy()
        saturated = 0
        with np.errstate(over="ignore", invalid="ignore"):
            for k in reversed(range(self.n_layers)):
                layer = self.layers[k]
                theta = self.layer_params(k)
                y = np.zeros_like(x)
                for i in range(self.dim):
                    mu, raw_alpha = made_forward(layer.net, theta, y)
                    alpha = np.clip(raw_alpha[:, i], -ALPHA_CLAMP, ALPHA_CLAMP)
                    saturated += int(np.count_nonzero(alpha != raw_alpha[:, i]))
                    y[:, i] = x[:, i] * np.exp(alpha) + mu[:, i]
                x = np.empty_like(y)
                x[:, layer.permutation] = y
        out = x[0] if single else x
        return (out, saturated) if return_saturation else out

    def log_prob(self, base, x):
        """``ln p(x) = ln p_base(T(x)) + ln|det J_T(x)|``."""
        single = np.ndim(x) == 1
        fp = self.transform(x)
        out = base.log_pdf(fp.z) + fp.logdet
        return float(out[0]) if single else out

    def backward(self, fp: ForwardPass, grad_z: np.ndarray, grad_logdet: np.ndarray) -> np.ndarray:
        """Parameter gradient of ``sum_n grad_z[n] . z[n] + grad_logdet[n] * logdet[n]``.

        Layer-wise analytic adjoints of the forward pass; clamped log-scales
        pass no gradient.
        """
        grads = []
        gz = np.asarray(grad_z, dtype=float)
        gld = np.asarray(grad_logdet, dtype=float)[:, None]
        for k in reversed(range(self.n_layers)):
            layer = self.layers[k]
            net = layer.net
            w1, b1, wmu, wal, bmu, bal = net.unpack(self.layer_params(k))
            y, pre, h, alpha, raw_alpha, z = fp.cache[k]
            scale = np.exp(-alpha)
            g_y = gz * scale
            g_mu = -g_y
            g_alpha = (-gz * z - gld) * (alpha == raw_alpha)
            wmu_m = wmu * net.mask_out
            wal_m = wal * net.mask_out
            g_wmu = (g_mu.T @ h) * net.mask_out
            g_wal = (g_alpha.T @ h) * net.mask_out
            g_h = g_mu @ wmu_m + g_alpha @ wal_m
            g_pre = g_h * (pre > 0)
            g_w1 = (g_pre.T @ y) * net.mask_in
            g_y = g_y + g_pre @ (w1 * net.mask_in)
            grads.append(net.pack(g_w1, g_pre.sum(0), g_wmu, g_wal, g_mu.sum(0), g_alpha.sum(0)))
            gz = np.empty_like(g_y)
            gz[:, layer.permutation] = g_y
        return np.concatenate(grads[::-1])
