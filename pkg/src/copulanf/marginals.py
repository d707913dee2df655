"""Univariate location-scale families used as base and target marginals."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np
from scipy import optimize, special

from .numerics import DomainError, Rng, reg_inc_beta, std_normal_cdf, std_normal_quantile

FAMILIES = ("Normal", "StudentT", "Laplace", "Uniform")

_LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)


def _out(arr):
    return float(arr) if np.ndim(arr) == 0 else arr


@dataclass(frozen=True)
class Marginal1D:
    """A univariate distribution ``loc + scale * X`` with ``X`` standardized.

    For ``Uniform`` the support is ``[loc, loc + scale]``.  ``df`` is only
    meaningful (and required) for ``StudentT``.
    """

    family: str
    loc: float = 0.0
    scale: float = 1.0
    df: Optional[float] = None

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown marginal family {self.family!r}")
        if not self.scale > 0:
            raise ValueError("scale must be positive")
        if self.family == "StudentT":
            if self.df is None or not self.df > 0:
                raise ValueError("StudentT needs df > 0")
        elif self.df is not None:
            raise ValueError(f"{self.family} takes no df")

    def __str__(self):
        if self.family == "StudentT":
            return f"StudentT({self.loc:g}, {self.scale:g}, {self.df:g})"
        return f"{self.family}({self.loc:g}, {self.scale:g})"

    def to_tuple(self) -> tuple:
        if self.family == "StudentT":
            return (self.family, self.loc, self.scale, self.df)
        return (self.family, self.loc, self.scale)

    @classmethod
    def from_tuple(cls, t) -> "Marginal1D":
        family, loc, scale, *rest = t
        return cls(family, float(loc), float(scale), float(rest[0]) if rest else None)

    def _std(self, x):
        return (np.asarray(x, dtype=float) - self.loc) / self.scale

    def log_pdf(self, x):
        y = self._std(x)
        log_scale = math.log(self.scale)
        if self.family == "Normal":
            out = -0.5 * y * y - _LOG_SQRT_2PI - log_scale
        elif self.family == "StudentT":
            nu = self.df
            const = (
                special.gammaln(0.5 * (nu + 1.0))
                - special.gammaln(0.5 * nu)
                - 0.5 * math.log(nu * math.pi)
                - log_scale
            )
            out = const - 0.5 * (nu + 1.0) * np.log1p(y * y / nu)
        elif self.family == "Laplace":
            out = -np.abs(y) - math.log(2.0) - log_scale
        else:
            inside = (y >= 0) & (y <= 1)
            out = np.where(inside, -log_scale, -np.inf)
        return _out(out)

    def pdf(self, x):
        return _out(np.exp(self.log_pdf(x)))

    def score(self, x):
        """Derivative of ``log_pdf`` with respect to ``x``."""
        y = self._std(x)
        if self.family == "Normal":
            out = -y / self.scale
        elif self.family == "StudentT":
            nu = self.df
            out = -(nu + 1.0) * y / (self.scale * (nu + y * y))
        elif self.family == "Laplace":
            out = -np.sign(y) / self.scale
        else:
            out = np.zeros_like(y)
        return _out(out)

    def cdf(self, x):
        y = self._std(x)
        if self.family == "Normal":
            out = np.asarray(std_normal_cdf(y))
        elif self.family == "StudentT":
            out = _student_t_cdf(y, self.df)
        elif self.family == "Laplace":
            with np.errstate(over="ignore"):
                out = np.where(y < 0, 0.5 * np.exp(np.minimum(y, 0.0)), 1.0 - 0.5 * np.exp(-np.maximum(y, 0.0)))
        else:
            out = np.clip(y, 0.0, 1.0)
        return _out(out)

    def sf(self, x):
        """Survival function ``1 - cdf``, accurate deep in the upper tail."""
        y = self._std(x)
        if self.family == "Uniform":
            return _out(np.clip(1.0 - y, 0.0, 1.0))
        mirrored = Marginal1D(self.family, 0.0, 1.0, self.df)
        return mirrored.cdf(-y)

    def quantile(self, p):
        """Right-inverse of the cdf on ``(0, 1)``."""
        p = np.asarray(p, dtype=float)
        if np.any(~((p > 0) & (p < 1))):
            raise DomainError("quantile requires 0 < p < 1")
        if self.family == "Normal":
            y = np.asarray(std_normal_quantile(p))
        elif self.family == "StudentT":
            y = _student_t_quantile(p, self.df)
        elif self.family == "Laplace":
            y = np.where(p < 0.5, np.log(2.0 * p), -np.log(2.0 * (1.0 - p)))
        else:
            y = p
        return _out(self.loc + self.scale * y)

    def sample_standard(self, rng: Rng, n: int) -> np.ndarray:
        """Draws of the standardized variate (``loc = 0``, ``scale = 1``)."""
        if n < 1:
            raise ValueError("n must be >= 1")
        if self.family == "Normal":
            return rng.normal(n)
        if self.family == "StudentT":
            z = rng.normal(n)
            return z / np.sqrt(rng.chisquare(self.df, n) / self.df)
        if self.family == "Laplace":
            u = rng.open_uniform(n)
            return np.where(u < 0.5, np.log(2.0 * u), -np.log(2.0 * (1.0 - u)))
        return rng.uniform(n)

    def sample(self, rng: Rng, n: int) -> np.ndarray:
        return self.loc + self.scale * self.sample_standard(rng, n)


def Normal(loc=0.0, scale=1.0) -> Marginal1D:
    return Marginal1D("Normal", float(loc), float(scale))


def StudentT(df, loc=0.0, scale=1.0) -> Marginal1D:
    return Marginal1D("StudentT", float(loc), float(scale), float(df))


def Laplace(loc=0.0, scale=1.0) -> Marginal1D:
    return Marginal1D("Laplace", float(loc), float(scale))


def Uniform(lo=0.0, width=1.0) -> Marginal1D:
    return Marginal1D("Uniform", float(lo), float(width))


def _student_t_cdf(y, nu):
    y = np.asarray(y, dtype=float)
    y1 = np.atleast_1d(y)
    out = np.empty_like(y1)
    inf = np.isinf(y1)
    out[inf] = np.where(y1[inf] > 0, 1.0, 0.0)
    fin = ~inf
    if fin.any():
        yy = y1[fin]
        y2 = yy * yy
        w = nu / (nu + y2)
        wc = y2 / (nu + y2)
        tail = 0.5 * reg_inc_beta(np.full_like(w, 0.5 * nu), np.full_like(w, 0.5), w, wc)
        out[fin] = np.where(yy > 0, 1.0 - tail, tail)
    return out.reshape(y.shape)


def _student_t_quantile(p, nu):
    if nu == 1.0:
        # cot form on each half keeps full relative accuracy in both tails
        r = np.minimum(p, 1.0 - p)
        return np.where(p < 0.5, -1.0, 1.0) / np.tan(np.pi * r)
    if nu == 2.0:
        return (2.0 * p - 1.0) / np.sqrt(2.0 * p * (1.0 - p))
    shape = p.shape
    p = np.atleast_1d(p).astype(float)
    # Solve on the lower half, where the cdf is the directly computed tail.
    upper = p > 0.5
    p = np.where(upper, 1.0 - p, p)
    dens_const = math.exp(
        special.gammaln(0.5 * (nu + 1.0)) - special.gammaln(0.5 * nu) - 0.5 * math.log(nu * math.pi)
    )
    lo = np.full_like(p, -np.inf)
    hi = np.full_like(p, np.inf)
    y = special.ndtri(p)
    active = np.ones(p.shape, dtype=bool)
    # Safeguarded Newton: steps leaving the bracket fall back to bisection, or
    # to a doubling stride while one side of the bracket is still open.
    for _ in range(500):
        idx = np.flatnonzero(active)
        if idx.size == 0:
            break
        yy, ll, hh, pp = y[idx], lo[idx], hi[idx], p[idx]
        err = _student_t_cdf(yy, nu) - pp
        ll = np.where(err < 0, yy, ll)
        hh = np.where(err > 0, yy, hh)
        dens = dens_const * (1.0 + yy * yy / nu) ** (-0.5 * (nu + 1.0))
        stride = np.maximum(1.0, np.abs(yy))
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            cand = yy - err / dens
            fallback = np.where(
                np.isfinite(ll) & np.isfinite(hh),
                0.5 * (ll + hh),
                np.where(err < 0, yy + stride, yy - stride),
            )
        bad = ~np.isfinite(cand) | (cand <= ll) | (cand >= hh)
        cand = np.where(bad, fallback, cand)
        scale = np.maximum(1.0, np.abs(yy))
        finished = (err == 0) | (np.abs(cand - yy) <= 1e-14 * scale) | ((hh - ll) <= 1e-15 * scale)
        y[idx] = np.where(err == 0, yy, cand)
        lo[idx], hi[idx] = ll, hh
        active[idx[finished]] = False
    y = np.where(upper, -y, y)
    return y.reshape(shape)


class FitResult(NamedTuple):
    marginal: Marginal1D
    converged: bool
    degenerate: bool


def fit_marginal_mle(family: str, data, max_iter: int = 500) -> FitResult:
    """Maximum-likelihood fit of a ``Normal``, ``StudentT`` or ``Laplace`` marginal.

    Constant data produces a fit with ``scale`` clamped to ``1e-8`` and
    ``degenerate=True`` (with a warning) instead of an error.
    """
    x = np.asarray(data, dtype=float).ravel()
    if x.size < 2:
        raise ValueError("need at least two observations")
    if family not in ("Normal", "StudentT", "Laplace"):
        raise ValueError(f"cannot fit family {family!r}")

    def clamped(scale):
        if scale > 1e-8:
            return scale, False
        warnings.warn("degenerate data: scale clamped to 1e-8", RuntimeWarning, stacklevel=3)
        return 1e-8, True

    if family == "Normal":
        scale, degen = clamped(float(np.std(x)))
        return FitResult(Normal(float(np.mean(x)), scale), True, degen)
    if family == "Laplace":
        med = float(np.median(x))
        scale, degen = clamped(float(np.mean(np.abs(x - med))))
        return FitResult(Laplace(med, scale), True, degen)

    med = float(np.median(x))
    iqr = float(np.subtract(*np.percentile(x, [75, 25])))
    if iqr <= 1e-8:
        scale, _ = clamped(iqr)
        return FitResult(StudentT(1e3, med, scale), True, True)

    def nll(theta):
        df, loc, log_scale = theta
        return -float(np.sum(StudentT(df, loc, math.exp(log_scale)).log_pdf(x)))

    start = np.array([5.0, med, math.log(iqr / 2.0)])
    res = optimize.minimize(
        nll,
        start,
        method="L-BFGS-B",
        bounds=[(0.5, 1e3), (None, None), (math.log(1e-8), None)],
        options={"maxiter": max_iter},
    )
    df, loc, log_scale = res.x
    converged = bool(res.success) and res.fun <= nll(start)
    return FitResult(StudentT(float(df), float(loc), math.exp(log_scale)), converged, False)
