"""Diagnostics: quantile curves, test NLL, empirical tail dependence, Lipschitz surfaces."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .coupling import CopulaBase
from .flow import Flow
from .numerics import Rng

DEFAULT_PS = tuple(np.round(np.arange(1, 100) / 100.0, 2))


@dataclass(frozen=True)
class QuantileCurve:
    ps: np.ndarray
    values: np.ndarray
    label: str = ""

    def rows(self, trial: Optional[int] = None):
        extra = () if trial is None else (trial,)
        return [(float(p), float(v), self.label) + extra for p, v in zip(self.ps, self.values)]


def empirical_quantile(samples, ps, label: str = "") -> QuantileCurve:
    """Order-statistic quantiles, linear between neighbours: ``h = (n - 1) p``."""
    x = np.sort(np.asarray(samples, dtype=float).ravel())
    if x.size == 0:
        raise ValueError("no samples")
    ps = np.asarray(ps, dtype=float)
    if np.any((ps <= 0) | (ps >= 1)):
        raise ValueError("probabilities must lie in (0, 1)")
    h = (x.size - 1) * ps
    lo = np.floor(h).astype(int)
    hi = np.minimum(lo + 1, x.size - 1)
    frac = h - lo
    values = x[lo] + frac * (x[hi] - x[lo])
    # Guard against rounding breaking monotonicity between equal neighbours.
    values = np.maximum.accumulate(values)
    return QuantileCurve(ps, values, label)


@dataclass
class ModelQuantiles:
    curves: dict
    n_saturated: int
    n_nonfinite: int


def model_quantiles(
    flow: Flow, base: CopulaBase, rng: Rng, n: int = 100_000, ps=DEFAULT_PS, prefix: str = "model"
) -> ModelQuantiles:
    """Sample the model (``z ~ base``, ``x = T^{-1}(z)``) and summarize per coordinate and by ``||x||_2``."""
    if n < 10_000:
        raise ValueError("model_quantiles needs n >= 10000")
    z = base.sample(rng, n)
    x, saturated = flow.inverse(z, return_saturation=True)
    finite = np.all(np.isfinite(x), axis=1)
    x = x[finite]
    curves = data_quantiles(x, ps, prefix)
    return ModelQuantiles(curves, saturated, int((~finite).sum()))


def data_quantiles(x, ps=DEFAULT_PS, prefix: str = "data") -> dict:
    x = np.asarray(x, dtype=float)
    curves = {}
    for j in range(x.shape[1]):
        label = f"{prefix}_x{j + 1}"
        curves[label] = empirical_quantile(x[:, j], ps, label)
    label = f"{prefix}_norm"
    curves[label] = empirical_quantile(np.linalg.norm(x, axis=1), ps, label)
    return curves


@dataclass(frozen=True)
class NLLResult:
    value: float
    n_nonfinite: int

    def __float__(self):
        return self.value


def evaluate_nll(flow: Flow, base: CopulaBase, data) -> NLLResult:
    data = np.atleast_2d(np.asarray(data, dtype=float))
    if data.shape[0] == 0:
        raise ValueError("no data")
    with np.errstate(over="ignore", invalid="ignore"):
        ll = flow.log_prob(base, data)
    ll = np.atleast_1d(ll)
    bad = int(np.count_nonzero(~np.isfinite(ll)))
    value = -float(np.mean(ll))
    return NLLResult(value if math.isfinite(value) else math.inf, bad)


@dataclass(frozen=True)
class LipschitzSurface:
    """Local Lipschitz estimates on a regular grid; NaN marks cells with non-finite map output."""

    xs: np.ndarray
    ys: np.ndarray
    values: np.ndarray  # shape (len(ys), len(xs)); values[i, j] is at (xs[j], ys[i])
    epsilon: float
    n_dirs: int
    seed: int
    log_scale: bool = True

    @property
    def masked(self) -> int:
        return int(np.isnan(self.values).sum())

    def rows(self):
        X, Y = np.meshgrid(self.xs, self.ys)
        return list(zip(X.ravel().tolist(), Y.ravel().tolist(), self.values.ravel().tolist()))

    def log10_stats(self) -> dict:
        v = self.values[np.isfinite(self.values) & (self.values > 0)]
        if v.size == 0:
            return {"max": math.nan, "mean": math.nan, "var": math.nan, "masked": self.masked}
        lv = np.log10(v)
        return {
            "max": float(lv.max()),
            "mean": float(lv.mean()),
            "var": float(lv.var()),
            "masked": self.masked,
        }


def unit_directions(rng: Rng, n_dirs: int, dim: int = 2) -> np.ndarray:
    v = rng.normal((n_dirs, dim))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def lipschitz_surface(
    fn: Callable[[np.ndarray], np.ndarray],
    lo: float = -10.0,
    hi: float = 10.0,
    resolution: int = 100,
    epsilon: float = 1e-3,
    n_dirs: int = 100,
    seed: int = 0,
    chunk: int = 200_000,
) -> LipschitzSurface:
    """``max_j ||f(x) - f(x - eps v_j)|| / eps`` over one shared set of unit directions."""
    if not epsilon > 0 or n_dirs < 1 or resolution < 2:
        raise ValueError("need epsilon > 0, n_dirs >= 1, resolution >= 2")
    dirs = unit_directions(Rng(seed), n_dirs)
    xs = np.linspace(lo, hi, resolution)
    ys = np.linspace(lo, hi, resolution)
    X, Y = np.meshgrid(xs, ys)
    nodes = np.stack([X.ravel(), Y.ravel()], axis=1)
    best = np.zeros(nodes.shape[0])
    with np.errstate(over="ignore", invalid="ignore"):
        f0 = np.asarray(fn(nodes), dtype=float)
        bad = ~np.all(np.isfinite(f0), axis=1)
        per = max(1, chunk // nodes.shape[0])
        for start in range(0, n_dirs, per):
            v = dirs[start : start + per]
            pts = (nodes[None, :, :] - epsilon * v[:, None, :]).reshape(-1, 2)
            f1 = np.asarray(fn(pts), dtype=float).reshape(v.shape[0], nodes.shape[0], -1)
            dist = np.linalg.norm(f0[None] - f1, axis=2) / epsilon
            bad |= ~np.all(np.isfinite(dist), axis=0)
            best = np.maximum(best, np.max(np.where(np.isfinite(dist), dist, 0.0), axis=0))
    best[bad] = np.nan
    return LipschitzSurface(xs, ys, best.reshape(X.shape), float(epsilon), int(n_dirs), int(seed))


@dataclass(frozen=True)
class TailDependence:
    thresholds: np.ndarray
    upper: np.ndarray
    lower: np.ndarray


def empirical_tail_dependence(samples, thresholds, min_count: int = 50) -> TailDependence:
    """``#{both above their u-quantile} / #{first above its u-quantile}``, mirrored for the lower tail.

    Estimates with fewer than ``min_count`` conditioning points are NaN.
    """
    x = np.asarray(samples, dtype=float)
    if x.ndim != 2 or x.shape[1] != 2:
        raise ValueError("expected samples of shape (n, 2)")
    thresholds = np.atleast_1d(np.asarray(thresholds, dtype=float))
    up = np.empty(thresholds.size)
    low = np.empty(thresholds.size)
    for k, u in enumerate(thresholds):
        q_hi = np.quantile(x, u, axis=0)
        q_lo = np.quantile(x, 1.0 - u, axis=0)
        a1 = x[:, 0] > q_hi[0]
        n1 = int(a1.sum())
        up[k] = np.nan if n1 < min_count else np.count_nonzero(a1 & (x[:, 1] > q_hi[1])) / n1
        b1 = x[:, 0] < q_lo[0]
        m1 = int(b1.sum())
        low[k] = np.nan if m1 < min_count else np.count_nonzero(b1 & (x[:, 1] < q_lo[1])) / m1
    return TailDependence(thresholds, up, low)
