"""Independence, Gaussian and (bivariate) Gumbel copulas.

All copulas share one vectorized surface: points are arrays of shape
``(n, D)`` (a single point of shape ``(D,)`` is also accepted and gives a
scalar back).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .numerics import (
    DomainError,
    Rng,
    composite_gauss_legendre,
    std_normal_cdf,
    std_normal_pdf,
    std_normal_quantile,
)

CLAMP = 1e-12


def clamp_unit(u):
    """Clamp to ``[CLAMP, 1 - CLAMP]``; returns the clamped array and a mask of touched entries."""
    u = np.asarray(u, dtype=float)
    clamped = np.clip(u, CLAMP, 1.0 - CLAMP)
    return clamped, clamped != u


def _as_points(u, dim):
    u = np.asarray(u, dtype=float)
    single = u.ndim == 1
    pts = np.atleast_2d(u)
    if pts.shape[-1] != dim:
        raise ValueError(f"expected points of dimension {dim}, got {pts.shape[-1]}")
    return pts, single


def _finish(values, single):
    return float(values[0]) if single else values


def _check_cube(pts, closed=True):
    ok = (pts >= 0) & (pts <= 1) if closed else (pts > 0) & (pts < 1)
    if not ok.all():
        raise DomainError("copula arguments must lie in the unit cube")


class Copula:
    """Common interface; subclasses implement the ``_``-prefixed kernels."""

    family: str = ""
    dim: int = 2

    def cdf(self, u):
        pts, single = _as_points(u, self.dim)
        _check_cube(pts)
        return _finish(self._cdf(pts), single)

    def log_density(self, u):
        """Log copula density at interior points of the unit cube."""
        pts, single = _as_points(u, self.dim)
        _check_cube(pts, closed=False)
        return _finish(self._log_density(pts), single)

    def log_density_grad(self, u):
        """Gradient of ``log_density`` with respect to ``u``, shape ``(n, D)``."""
        pts, single = _as_points(u, self.dim)
        _check_cube(pts, closed=False)
        g = self._log_density_grad(pts)
        return g[0] if single else g

    def sample(self, rng: Rng, n: int) -> np.ndarray:
        if n < 1:
            raise ValueError("n must be >= 1")
        return self._sample(rng, n)

    def upper_tail_dependence(self) -> float:
        raise NotImplementedError

    def lower_tail_dependence(self) -> float:
        raise NotImplementedError

    def to_spec(self) -> str:
        raise NotImplementedError


@dataclass(frozen=True)
class IndependenceCopula(Copula):
    dim: int = 2
    family: str = field(default="Independence", init=False)

    def __post_init__(self):
        if self.dim < 2:
            raise ValueError("copula dimension must be >= 2")

    def _cdf(self, pts):
        return np.prod(pts, axis=1)

    def _log_density(self, pts):
        return np.zeros(pts.shape[0])

    def _log_density_grad(self, pts):
        return np.zeros_like(pts)

    def _sample(self, rng, n):
        return rng.uniform((n, self.dim))

    def upper_tail_dependence(self):
        return 0.0

    def lower_tail_dependence(self):
        return 0.0

    def to_spec(self):
        return "Independence()"


def bivariate_normal_cdf(a: float, b: float, r: float) -> float:
    """``P(X <= a, Y <= b)`` for standard normals with correlation ``r``.

    Integrates ``phi(x) * Phi((b - r x) / sqrt(1 - r^2))`` over ``x <= a``
    with a composite Gauss-Legendre rule whose panel width follows the
    conditional standard deviation.
    """
    if a == -np.inf or b == -np.inf:
        return 0.0
    if a == np.inf:
        return std_normal_cdf(b)
    if b == np.inf:
        return std_normal_cdf(a)
    if r >= 1.0:
        return std_normal_cdf(min(a, b))
    if r <= -1.0:
        return max(0.0, std_normal_cdf(a) + std_normal_cdf(b) - 1.0)
    s = math.sqrt((1.0 - r) * (1.0 + r))
    lo = min(-12.0, a - 1.0)
    if a <= -12.0:
        lo = a - 12.0
    width = min(1.0, max(s, 1e-3))
    n_panels = max(2, int(math.ceil((a - lo) / width)))
    rule = composite_gauss_legendre(20, np.linspace(lo, a, n_panels + 1))
    x = rule.nodes
    vals = std_normal_pdf(x) * std_normal_cdf((b - r * x) / s)
    return float(np.clip(np.dot(rule.weights, vals), 0.0, 1.0))


@dataclass(frozen=True, eq=False)
class GaussianCopula(Copula):
    corr: np.ndarray
    family: str = field(default="Gaussian", init=False)

    def __post_init__(self):
        r = np.array(self.corr, dtype=float)
        if r.ndim != 2 or r.shape[0] != r.shape[1] or r.shape[0] < 2:
            raise ValueError("correlation matrix must be square with D >= 2")
        if not np.allclose(r, r.T, atol=1e-12) or not np.allclose(np.diag(r), 1.0, atol=1e-12):
            raise ValueError("correlation matrix must be symmetric with unit diagonal")
        try:
            chol = np.linalg.cholesky(r)
        except np.linalg.LinAlgError as exc:
            raise ValueError("correlation matrix is not positive definite") from exc
        r.setflags(write=False)
        object.__setattr__(self, "corr", r)
        object.__setattr__(self, "dim", r.shape[0])
        object.__setattr__(self, "_chol", chol)
        object.__setattr__(self, "_prec_minus_eye", np.linalg.inv(r) - np.eye(r.shape[0]))
        object.__setattr__(self, "_logdet", 2.0 * float(np.sum(np.log(np.diag(chol)))))

    @classmethod
    def bivariate(cls, rho: float) -> "GaussianCopula":
        return cls(np.array([[1.0, rho], [rho, 1.0]]))

    @property
    def rho(self) -> float:
        return float(self.corr[0, 1])

    def __repr__(self):
        return f"GaussianCopula(corr={self.corr.tolist()})"

    def _cdf(self, pts):
        if self.dim != 2:
            raise NotImplementedError("Gaussian copula cdf is implemented for D = 2")
        out = np.empty(pts.shape[0])
        r = self.rho
        for k, (u1, u2) in enumerate(pts):
            if u1 == 0.0 or u2 == 0.0:
                out[k] = 0.0
            elif u1 == 1.0:
                out[k] = u2
            elif u2 == 1.0:
                out[k] = u1
            else:
                out[k] = bivariate_normal_cdf(std_normal_quantile(u1), std_normal_quantile(u2), r)
        return out

    def _log_density(self, pts):
        return self.log_density_scores(std_normal_quantile(pts))

    def log_density_scores(self, q):
        """Log density expressed in normal scores ``q = Phi^{-1}(u)``, shape ``(n, D)``."""
        quad = np.einsum("ni,ij,nj->n", q, self._prec_minus_eye, q)
        return -0.5 * quad - 0.5 * self._logdet

    def log_density_scores_grad(self, q):
        """Gradient of ``log_density_scores`` with respect to ``q``."""
        return -(q @ self._prec_minus_eye)

    def _log_density_grad(self, pts):
        q = std_normal_quantile(pts)
        # d/du of -q'Aq/2 with dq/du = 1/phi(q)
        return -(q @ self._prec_minus_eye) / std_normal_pdf(q)

    def _sample(self, rng, n):
        g = rng.normal((n, self.dim)) @ self._chol.T
        return std_normal_cdf(g)

    # Positive definiteness rules out |R_ij| = 1, so both tails are independent.
    def upper_tail_dependence(self):
        return 0.0

    def lower_tail_dependence(self):
        return 0.0

    def to_spec(self):
        if self.dim != 2:
            raise NotImplementedError("only bivariate Gaussian copulas have a text encoding")
        return f"Gaussian({self.rho!r})"


@dataclass(frozen=True)
class GumbelCopula(Copula):
    """Bivariate Gumbel copula ``exp(-((-ln u1)^rho + (-ln u2)^rho)^(1/rho))``, ``rho >= 1``."""

    rho: float
    dim: int = field(default=2, init=False)
    family: str = field(default="Gumbel", init=False)

    def __post_init__(self):
        if not self.rho >= 1.0:
            raise ValueError("Gumbel parameter must satisfy rho >= 1")

    def _cdf(self, pts):
        with np.errstate(divide="ignore"):
            w = -np.log(pts)
        s = np.sum(w**self.rho, axis=1)
        return np.exp(-(s ** (1.0 / self.rho)))

    def _parts(self, pts):
        rho = self.rho
        w = -np.log(pts)
        lw = np.log(w)
        t = np.exp(rho * lw)
        s = t.sum(axis=1)
        a = s ** (1.0 / rho)
        return rho, w, lw, s, a

    def _log_density(self, pts):
        rho, w, lw, s, a = self._parts(pts)
        return (
            -a
            + w.sum(axis=1)
            + (rho - 1.0) * lw.sum(axis=1)
            + (1.0 / rho - 2.0) * np.log(s)
            + np.log(a + rho - 1.0)
        )

    def _log_density_grad(self, pts):
        rho, w, lw, s, a = self._parts(pts)
        # ds/du_j and dA/du_j for A = s^(1/rho)
        ds = -rho * np.exp((rho - 1.0) * lw) / pts
        da = (a / (rho * s))[:, None] * ds
        return (
            -da
            - 1.0 / pts
            - (rho - 1.0) / (w * pts)
            + (1.0 / rho - 2.0) * ds / s[:, None]
            + da / (a + rho - 1.0)[:, None]
        )

    def _sample(self, rng, n):
        # Marshall-Olkin: positive alpha-stable frailty with Laplace transform exp(-t^alpha).
        alpha = 1.0 / self.rho
        e = rng.exponential((n, 2))
        if alpha == 1.0:
            v = np.ones(n)
        else:
            theta = math.pi * rng.open_uniform(n)
            w = rng.exponential(n)
            v = (np.sin(alpha * theta) / np.sin(theta) ** (1.0 / alpha)) * (
                np.sin((1.0 - alpha) * theta) / w
            ) ** ((1.0 - alpha) / alpha)
        return np.exp(-((e / v[:, None]) ** alpha))

    def upper_tail_dependence(self):
        return 2.0 - 2.0 ** (1.0 / self.rho)

    def lower_tail_dependence(self):
        return 0.0

    def to_spec(self):
        return f"Gumbel({self.rho!r})"
