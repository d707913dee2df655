"""Fast invariant checks across all modules, runnable without pytest."""
from __future__ import annotations

from typing import Callable

import numpy as np
from scipy import stats

from .copulas import GaussianCopula, GumbelCopula, IndependenceCopula
from .coupling import PRESETS, make_preset
from .evaluation import lipschitz_surface
from .flow import Flow
from .marginals import StudentT
from .numerics import Rng, reg_inc_beta, std_normal_quantile
from .training import AdamState, adam_step, loss_and_grad


def _check_numerics():
    x = np.linspace(0.01, 0.99, 25)
    err = np.max(np.abs(reg_inc_beta(2.5, 0.7, x) - stats.beta.cdf(x, 2.5, 0.7)))
    assert err < 1e-12, f"incomplete beta error {err}"
    assert abs(std_normal_quantile(0.975) - 1.959963984540054) < 1e-12
    a = Rng(3).substream(1).uniform(5)
    b = Rng(3).substream(1).uniform(5)
    assert np.array_equal(a, b), "Rng is not deterministic"


def _check_marginals():
    t = StudentT(2.0)
    p = np.array([1e-6, 0.1, 0.5, 0.9, 1 - 1e-6])
    assert np.allclose(t.cdf(t.quantile(p)), p, rtol=0, atol=1e-12)
    assert abs(float(t.cdf(0.0)) - 0.5) < 1e-15


def _check_copulas():
    u = np.array([[0.3, 0.8], [0.5, 0.5], [0.9, 0.1]])
    assert np.allclose(GumbelCopula(1.0).cdf(u), IndependenceCopula().cdf(u), atol=1e-12)
    assert abs(float(GumbelCopula(2.5).cdf(np.array([0.5, 0.5]))) - 0.40068) < 1e-5
    g = GaussianCopula.bivariate(0.6)
    assert np.allclose(g.cdf(np.column_stack([u[:, 0], np.ones(3)])), u[:, 0], atol=1e-8)
    assert abs(GumbelCopula(2.5).upper_tail_dependence() - (2 - 2**0.4)) < 1e-15


def _check_flow():
    rng = Rng(11)
    x = rng.normal((1000, 2)) * 3
    flow = Flow.initialize(rng.substream(0))
    theta = flow.params + 0.3 * rng.substream(1).normal(flow.n_params)
    flow = flow.with_params(theta)
    z, _ = flow.forward(x)
    assert np.max(np.abs(flow.inverse(z) - x)) < 1e-9, "round trip failed"


def _check_gradients():
    rng = Rng(5)
    x = make_preset("exactMarginals").sample(rng.substream(0), 64)
    for name in PRESETS:
        base = make_preset(name)
        flow = Flow.initialize(rng.substream(1))
        flow = flow.with_params(flow.params + 0.2 * rng.substream(2).normal(flow.n_params))
        _, g = loss_and_grad(flow, base, x)
        h = 1e-6
        for k in (0, 17, 40, 95):
            e = np.zeros(flow.n_params)
            e[k] = h
            fd = (loss_and_grad(flow.with_params(flow.params + e), base, x)[0]
                  - loss_and_grad(flow.with_params(flow.params - e), base, x)[0]) / (2 * h)
            assert abs(fd - g[k]) <= 1e-4 * max(1.0, abs(fd)), f"{name}: grad[{k}] {g[k]} vs {fd}"


def _check_training():
    state = AdamState.zeros(1, lr=0.1)
    p = np.array([1.0])
    p, state = adam_step(state, p, np.array([2.0]))
    assert abs(p[0] - 0.9) < 1e-6


def _check_lipschitz():
    s = lipschitz_surface(lambda p: p, resolution=5, n_dirs=10)
    assert np.max(np.abs(s.values - 1.0)) < 1e-9


CHECKS: dict[str, Callable[[], None]] = {
    "numerics": _check_numerics,
    "marginals": _check_marginals,
    "copulas": _check_copulas,
    "flow": _check_flow,
    "gradients": _check_gradients,
    "training": _check_training,
    "lipschitz": _check_lipschitz,
}


def run_selftest(echo: Callable[[str], None] = print) -> bool:
    ok = True
    for name, check in CHECKS.items():
        try:
            check()
        except Exception as exc:  # report every failing suite, not only the first
            ok = False
            echo(f"FAIL {name}: {exc}")
        else:
            echo(f"ok   {name}")
    return ok
