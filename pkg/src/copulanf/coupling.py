"""Joint base distributions built from marginals and a copula."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .copulas import CLAMP, Copula, GaussianCopula, GumbelCopula, IndependenceCopula, clamp_unit
from .marginals import Laplace, Marginal1D, Normal, StudentT
from .numerics import Rng, std_normal_pdf, std_normal_quantile

SCORE_LIMIT = -float(std_normal_quantile(CLAMP))


@dataclass(frozen=True)
class CopulaBase:
    """``p(z) = c(F_1(z_1), ..., F_D(z_D)) * prod_j p_j(z_j)``."""

    marginals: tuple[Marginal1D, ...]
    copula: Copula

    def __post_init__(self):
        object.__setattr__(self, "marginals", tuple(self.marginals))
        if len(self.marginals) != self.copula.dim:
            raise ValueError(
                f"copula dimension {self.copula.dim} != number of marginals {len(self.marginals)}"
            )

    @property
    def dim(self) -> int:
        return len(self.marginals)

    @property
    def independent(self) -> bool:
        return isinstance(self.copula, IndependenceCopula)

    def _points(self, z):
        z = np.asarray(z, dtype=float)
        single = z.ndim == 1
        z = np.atleast_2d(z)
        if z.shape[1] != self.dim:
            raise ValueError(f"expected points of dimension {self.dim}")
        return z, single

    def marginal_cdfs(self, z) -> np.ndarray:
        z, _ = self._points(z)
        return np.stack([m.cdf(z[:, j]) for j, m in enumerate(self.marginals)], axis=1)

    def normal_scores(self, z):
        """``Phi^{-1}(F_j(z_j))`` taken through the survival function on the upper half.

        Scores are clipped to the image of the ``[1e-12, 1 - 1e-12]`` clamp;
        returns the scores and the mask of clipped entries.
        """
        z, _ = self._points(z)
        q = np.empty_like(z)
        for j, m in enumerate(self.marginals):
            lower = np.minimum(m.cdf(z[:, j]), m.sf(z[:, j]))
            lower = np.clip(lower, CLAMP, 0.5)
            sign = np.where(m.cdf(z[:, j]) > 0.5, -1.0, 1.0)
            q[:, j] = sign * std_normal_quantile(lower)
        clipped = np.abs(q) >= SCORE_LIMIT
        return q, clipped

    def log_pdf(self, z):
        z, single = self._points(z)
        out = np.zeros(z.shape[0])
        for j, m in enumerate(self.marginals):
            out += m.log_pdf(z[:, j])
        if isinstance(self.copula, GaussianCopula):
            out += self.copula.log_density_scores(self.normal_scores(z)[0])
        elif not self.independent:
            u, _ = clamp_unit(self.marginal_cdfs(z))
            out += self.copula.log_density(u)
        return float(out[0]) if single else out

    def score(self, z) -> np.ndarray:
        """Gradient of ``log_pdf`` with respect to ``z``, shape ``(n, D)``."""
        z, _ = self._points(z)
        g = np.stack([m.score(z[:, j]) for j, m in enumerate(self.marginals)], axis=1)
        if isinstance(self.copula, GaussianCopula):
            q, clipped = self.normal_scores(z)
            dens = np.stack([m.pdf(z[:, j]) for j, m in enumerate(self.marginals)], axis=1)
            dq = dens / std_normal_pdf(q)
            g += np.where(clipped, 0.0, self.copula.log_density_scores_grad(q) * dq)
        elif not self.independent:
            raw = self.marginal_cdfs(z)
            u, touched = clamp_unit(raw)
            dens = np.stack([m.pdf(z[:, j]) for j, m in enumerate(self.marginals)], axis=1)
            g += np.where(touched, 0.0, self.copula.log_density_grad(u) * dens)
        return g

    def clamp_count(self, z) -> int:
        """Number of marginal-cdf values that hit the ``[1e-12, 1 - 1e-12]`` clamp."""
        if self.independent:
            return 0
        if isinstance(self.copula, GaussianCopula):
            return int(self.normal_scores(z)[1].sum())
        _, touched = clamp_unit(self.marginal_cdfs(z))
        return int(touched.sum())

    def joint_cdf(self, z):
        z, single = self._points(z)
        out = self.copula.cdf(self.marginal_cdfs(z))
        return float(np.atleast_1d(out)[0]) if single else out

    def sample(self, rng: Rng, n: int) -> np.ndarray:
        u = self.copula.sample(rng, n)
        # Uniform(0,1) variates may be exactly 0; the quantile needs the open interval.
        u = np.where(u > 0.0, u, 2.0**-54)
        return np.stack([m.quantile(u[:, j]) for j, m in enumerate(self.marginals)], axis=1)

    def describe(self) -> dict:
        return {
            "copula": self.copula.to_spec(),
            "marginals": [str(m) for m in self.marginals],
        }


PRESETS = ("normal", "heavierTails", "correctFamily", "exactMarginals")


def make_preset(name: str) -> CopulaBase:
    """The four experiment bases, all coupled with the independence copula."""
    if name == "normal":
        marg = (Normal(0, 1), Normal(0, 1))
    elif name == "heavierTails":
        marg = (Laplace(0, 4), StudentT(5, 0, 2))
    elif name == "correctFamily":
        marg = (StudentT(5, 0, 1), StudentT(5, 0, 1))
    elif name == "exactMarginals":
        marg = (StudentT(2, 0, 1), StudentT(2, 0, 1))
    else:
        raise ValueError(f"unknown preset {name!r}; expected one of {', '.join(PRESETS)}")
    return CopulaBase(marg, IndependenceCopula(2))


def target_distribution(rho: float = 2.5, df: float = 2.0) -> CopulaBase:
    """Gumbel-coupled Student-t target (defaults: rho = 2.5, t_2(0, 1) marginals)."""
    return CopulaBase((StudentT(df, 0, 1), StudentT(df, 0, 1)), GumbelCopula(rho))
