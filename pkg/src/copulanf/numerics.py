"""Special functions, Gauss-Legendre quadrature and the seeded random streams.

Random numbers come from numpy's PCG64 bit generator seeded through a
``SeedSequence``.  Sub-streams are addressed by an integer path
(``Rng(seed).substream(3).substream(0)``), so a trial's stream depends only on
the master seed and its own index, never on how many other trials ran.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy import special

__all__ = [
    "DomainError",
    "log_gamma",
    "reg_inc_beta",
    "std_normal_cdf",
    "std_normal_quantile",
    "std_normal_pdf",
    "QuadratureRule",
    "gauss_legendre",
    "composite_gauss_legendre",
    "gauss_quadrature",
    "Rng",
]

_TWO_POW_53 = float(2**53)


class DomainError(ValueError):
    """Argument outside the domain of a numerical routine."""


def log_gamma(x):
    """Natural log of the Gamma function for ``x > 0``."""
    arr = np.asarray(x, dtype=float)
    if np.any(~(arr > 0)):
        raise DomainError("log_gamma requires x > 0")
    out = special.gammaln(arr)
    return float(out) if out.ndim == 0 else out


def _betacf(a, b, x, max_iter=500, tol=1e-15):
    # Modified Lentz evaluation of the incomplete-beta continued fraction.
    tiny = 1e-300
    qab = a + b
    qap = a + 1.0
    qam = a - 1.0
    c = np.ones_like(x)
    d = 1.0 - qab * x / qap
    d = np.where(np.abs(d) < tiny, tiny, d)
    d = 1.0 / d
    h = d.copy()
    done = np.zeros(x.shape, dtype=bool)
    for m in range(1, max_iter + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        d = np.where(np.abs(d) < tiny, tiny, d)
        c = 1.0 + aa / c
        c = np.where(np.abs(c) < tiny, tiny, c)
        d = 1.0 / d
        h = np.where(done, h, h * d * c)
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        d = np.where(np.abs(d) < tiny, tiny, d)
        c = 1.0 + aa / c
        c = np.where(np.abs(c) < tiny, tiny, c)
        d = 1.0 / d
        delta = d * c
        h = np.where(done, h, h * delta)
        done |= np.abs(delta - 1.0) < tol
        if done.all():
            break
    return h


def reg_inc_beta(a, b, x, xc=None):
    """Regularized incomplete beta function ``I_x(a, b)``.

    Parameters
    ----------
    a, b : float or array_like
        Positive shape parameters.
    x : float or array_like
        Evaluation points in ``[0, 1]``.
    xc : float or array_like, optional
        ``1 - x`` when the caller knows it more accurately than the
        subtraction would give (the Student-t cdf does).

    Returns
    -------
    float or ndarray
    """
    a_arr, b_arr, x_arr = np.broadcast_arrays(
        np.asarray(a, dtype=float), np.asarray(b, dtype=float), np.asarray(x, dtype=float)
    )
    scalar = x_arr.ndim == 0
    a_arr, b_arr, x_arr = (np.atleast_1d(v).astype(float) for v in (a_arr, b_arr, x_arr))
    if np.any(~(a_arr > 0)) or np.any(~(b_arr > 0)):
        raise DomainError("reg_inc_beta requires a > 0 and b > 0")
    if np.any(~((x_arr >= 0) & (x_arr <= 1))):
        raise DomainError("reg_inc_beta requires 0 <= x <= 1")
    if xc is None:
        xc_arr = 1.0 - x_arr
    else:
        xc_arr = np.broadcast_to(np.atleast_1d(np.asarray(xc, dtype=float)), x_arr.shape).copy()

    out = np.empty_like(x_arr)
    lo = x_arr <= 0
    hi = xc_arr <= 0
    out[lo] = 0.0
    out[hi] = 1.0
    inner = ~(lo | hi)
    if inner.any():
        aa, bb, xx, cc = a_arr[inner], b_arr[inner], x_arr[inner], xc_arr[inner]
        log_front = (
            special.gammaln(aa + bb)
            - special.gammaln(aa)
            - special.gammaln(bb)
            + aa * np.log(xx)
            + bb * np.log(cc)
        )
        front = np.exp(log_front)
        direct = xx < (aa + 1.0) / (aa + bb + 2.0)
        res = np.empty_like(xx)
        if direct.any():
            res[direct] = front[direct] * _betacf(aa[direct], bb[direct], xx[direct]) / aa[direct]
        flip = ~direct
        if flip.any():
            res[flip] = 1.0 - front[flip] * _betacf(bb[flip], aa[flip], cc[flip]) / bb[flip]
        out[inner] = np.clip(res, 0.0, 1.0)
    return float(out[0]) if scalar else out


def std_normal_pdf(x):
    x = np.asarray(x, dtype=float)
    return np.exp(-0.5 * x * x) / np.sqrt(2.0 * np.pi)


def std_normal_cdf(x):
    """Standard normal cdf."""
    out = special.ndtr(np.asarray(x, dtype=float))
    return float(out) if np.ndim(out) == 0 else out


def std_normal_quantile(p):
    """Inverse of the standard normal cdf on the open interval ``(0, 1)``."""
    arr = np.asarray(p, dtype=float)
    if np.any(~((arr > 0) & (arr < 1))):
        raise DomainError("std_normal_quantile requires 0 < p < 1")
    out = special.ndtri(arr)
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class QuadratureRule:
    """Nodes and positive weights approximating an integral over ``interval``."""

    nodes: np.ndarray
    weights: np.ndarray
    interval: tuple[float, float]


def gauss_legendre(n: int, lo: float = -1.0, hi: float = 1.0) -> QuadratureRule:
    """``n``-point Gauss-Legendre rule mapped to ``[lo, hi]``."""
    if n < 1:
        raise DomainError("a quadrature rule needs at least one node")
    t, w = np.polynomial.legendre.leggauss(n)
    half = 0.5 * (hi - lo)
    return QuadratureRule(lo + half * (t + 1.0), half * w, (float(lo), float(hi)))


def composite_gauss_legendre(n: int, edges) -> QuadratureRule:
    """Gauss-Legendre rule of order ``n`` on every panel between consecutive ``edges``."""
    edges = np.asarray(edges, dtype=float)
    t, w = np.polynomial.legendre.leggauss(n)
    lo, hi = edges[:-1, None], edges[1:, None]
    half = 0.5 * (hi - lo)
    nodes = (lo + half * (t + 1.0)).ravel()
    weights = (half * w).ravel()
    return QuadratureRule(nodes, weights, (float(edges[0]), float(edges[-1])))


def gauss_quadrature(f: Callable[[np.ndarray], np.ndarray], rule: QuadratureRule) -> float:
    """Weighted sum of ``f`` over the rule's nodes; ``f`` is called once, vectorized."""
    values = np.broadcast_to(np.asarray(f(rule.nodes), dtype=float), rule.nodes.shape)
    return float(np.dot(rule.weights, values))


class Rng:
    """Seeded, splittable random stream.

    Normal variates are produced by the inverse-cdf method on open-interval
    uniforms, so every stream is an exact function of the seed path.
    """

    def __init__(self, seed: int, path: tuple[int, ...] = ()):
        if seed < 0 or seed >= 2**64:
            raise DomainError("seed must be a 64-bit unsigned integer")
        self.seed = int(seed)
        self.path = tuple(int(p) for p in path)
        seq = np.random.SeedSequence(self.seed, spawn_key=self.path)
        self._gen = np.random.Generator(np.random.PCG64(seq))

    def __repr__(self):
        return f"Rng(seed={self.seed}, path={self.path})"

    def substream(self, index: int) -> "Rng":
        """Independent child stream; does not advance this stream."""
        return Rng(self.seed, self.path + (int(index),))

    def uniform(self, size=None):
        """Uniform variates on ``[0, 1)``."""
        return self._gen.random(size)

    def open_uniform(self, size=None):
        """Uniform variates on the open interval ``(0, 1)`` (53-bit midpoints)."""
        k = self._gen.integers(0, 2**53, size=size, dtype=np.uint64)
        return (k.astype(float) + 0.5) / _TWO_POW_53

    def normal(self, size=None):
        return special.ndtri(self.open_uniform(size))

    def exponential(self, size=None):
        return -np.log(self.open_uniform(size))

    def gamma(self, shape: float, size=None):
        """Gamma(shape, 1) variates (Marsaglia-Tsang squeeze, boosted for shape < 1)."""
        if shape <= 0:
            raise DomainError("gamma shape must be positive")
        n = 1 if size is None else int(np.prod(size))
        boost = shape < 1.0
        k = shape + 1.0 if boost else shape
        d = k - 1.0 / 3.0
        c = 1.0 / np.sqrt(9.0 * d)
        out = np.empty(n)
        filled = 0
        while filled < n:
            need = n - filled
            m = int(need * 1.1) + 16
            x = self.normal(m)
            u = self.open_uniform(m)
            v = (1.0 + c * x) ** 3
            with np.errstate(invalid="ignore"):
                ok = (v > 0) & (np.log(u) < 0.5 * x * x + d - d * v + d * np.log(np.where(v > 0, v, 1.0)))
            acc = (d * v)[ok][:need]
            out[filled : filled + acc.size] = acc
            filled += acc.size
        if boost:
            out *= self.open_uniform(n) ** (1.0 / shape)
        return float(out[0]) if size is None else out.reshape(size)

    def chisquare(self, df: float, size=None):
        return 2.0 * self.gamma(0.5 * df, size)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def integers(self, high: int, size=None) -> np.ndarray:
        """Integers in ``[0, high)``."""
        return self._gen.integers(0, high, size=size)
