"""End-to-end acceptance checks, one reported line per criterion.

Criterion 6 runs 400 full-budget trials (several minutes per hundred on one
core).  Set ``COPULANF_SKIP_FULL_SWEEP=1`` to skip it.
"""
import math
import os
import shutil
import time
from pathlib import Path

import mpmath
import numpy as np
import pytest
from scipy import stats

from copulanf.copulas import GaussianCopula, GumbelCopula, IndependenceCopula
from copulanf.coupling import PRESETS, make_preset
from copulanf.evaluation import empirical_tail_dependence, lipschitz_surface
from copulanf.flow import Flow
from copulanf.harness import ExperimentConfig, generate_target, read_params, run_surface_report, run_sweep
from copulanf.harness.io import read_table
from copulanf.marginals import StudentT
from copulanf.numerics import Rng, composite_gauss_legendre
from copulanf.training import loss_and_grad

from conftest import ks_distance, report, report_skip

GUMBEL_CENTER = 0.40068
LAMBDA_U = 0.68049
DIAG_PS = np.round(np.arange(1, 20) * 0.05, 2)


def _tree(root):
    root = Path(root)
    return {str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


@pytest.fixture(scope="session")
def criterion5_runs(tmp_path_factory):
    """Default config, 10 trials per preset."""
    root = tmp_path_factory.mktemp("criterion5")
    runs = {}
    for preset in PRESETS:
        cfg = ExperimentConfig(out=str(root / preset), trials=10, workers=0).with_overrides(preset=preset)
        runs[preset] = (cfg, run_sweep(cfg))
    return runs


def _best_params(cfg, summary):
    trial = min(summary.finals, key=lambda f: f[1])[0]
    return Path(cfg.out) / "trials" / f"trial_{trial:04d}" / "params.txt"


# 1 ---------------------------------------------------------------------------

def _score_space_mass(cop):
    rule = composite_gauss_legendre(20, np.linspace(-9, 9, 19))
    a, b = np.meshgrid(rule.nodes, rule.nodes)
    u = np.column_stack([stats.norm.cdf(a.ravel()), stats.norm.cdf(b.ravel())])
    ok = np.all((u > 0) & (u < 1), axis=1)
    dens = np.zeros(u.shape[0])
    dens[ok] = np.exp(cop.log_density(u[ok]))
    w = np.outer(rule.weights, rule.weights).ravel() * stats.norm.pdf(a.ravel()) * stats.norm.pdf(b.ravel())
    return float(np.sum(w * dens))


def test_criterion_01_copula_correctness():
    rng = Rng(1)
    cops = [IndependenceCopula(), GaussianCopula.bivariate(0.7), GaussianCopula.bivariate(-0.5),
            GumbelCopula(1.0), GumbelCopula(2.5), GumbelCopula(8.0)]
    mass_err = max(abs(_score_space_mass(c) - 1.0) for c in cops)

    h = 1e-4
    fd_err = 0.0
    grid = [(a, b) for a in (0.1, 0.3, 0.5, 0.7, 0.9) for b in (0.2, 0.5, 0.8)]
    # float64 differencing cannot resolve the 3e-8 densities of Gumbel(8) off the diagonal,
    # so that member is checked against a 50-digit mixed partial instead
    for c in cops[:-1]:
        for u1, u2 in grid:
            f = lambda a, b: c.cdf(np.array([a, b]))
            fd = (f(u1 + h, u2 + h) - f(u1 + h, u2 - h) - f(u1 - h, u2 + h) + f(u1 - h, u2 - h)) / (4 * h * h)
            dens = math.exp(c.log_density(np.array([u1, u2])))
            fd_err = max(fd_err, abs(fd - dens) / dens)

    mpmath.mp.dps = 50
    rho = mpmath.mpf(8)
    gumbel = lambda a, b: mpmath.exp(-(((-mpmath.log(a)) ** rho + (-mpmath.log(b)) ** rho) ** (1 / rho)))
    for u1, u2 in grid:
        d = float(mpmath.diff(gumbel, (mpmath.mpf(u1), mpmath.mpf(u2)), (1, 1)))
        fd_err = max(fd_err, abs(math.exp(cops[-1].log_density(np.array([u1, u2]))) - d) / d)

    u = rng.uniform((1000, 2))
    ind_err = float(np.max(np.abs(GumbelCopula(1.0).cdf(u) - u[:, 0] * u[:, 1])))
    center = GumbelCopula(2.5).cdf(np.array([0.5, 0.5]))

    marg_err = 0.0
    prng = rng.substream(1)
    for k in range(100):
        params = prng.substream(k).uniform(2)
        fams = [GumbelCopula(1.0 + 19.0 * params[0]), GaussianCopula.bivariate(-0.99 + 1.98 * params[1]), IndependenceCopula()]
        t = prng.substream(k).substream(0).uniform(50)
        for c in fams:
            marg_err = max(marg_err, float(np.max(np.abs(c.cdf(np.column_stack([t, np.ones_like(t)])) - t))))
            marg_err = max(marg_err, float(np.max(np.abs(c.cdf(np.column_stack([np.ones_like(t), t])) - t))))

    ok = mass_err <= 1e-3 and fd_err <= 1e-3 and ind_err <= 1e-12 and abs(center - GUMBEL_CENTER) <= 1e-5 and marg_err <= 1e-8
    report(1, ok, f"copulas: |mass-1|={mass_err:.2e} (<=1e-3), cdf/density rel={fd_err:.2e} (<=1e-3), "
                  f"Gumbel(1)-indep={ind_err:.1e} (<=1e-12), C(.5,.5)={center:.7f} (0.40068+-1e-5), "
                  f"uniform margins={marg_err:.1e} (<=1e-8)")
    assert ok


# 2 ---------------------------------------------------------------------------

def test_criterion_02_target_sklar():
    x = generate_target(Rng(2), 10**6)
    ks = max(ks_distance(x[:, j], StudentT(2.0).cdf) for j in range(2))
    both = float(np.mean(np.all(x <= 0, axis=1)))
    lam = float(empirical_tail_dependence(x, [0.995]).upper[0])
    ok = ks < 0.002 and abs(both - GUMBEL_CENTER) <= 0.0015 and abs(lam - LAMBDA_U) <= 0.08
    report(2, ok, f"target n=1e6: KS={ks:.5f} (<0.002), P(both<=0)={both:.5f} (0.40068+-0.0015), "
                  f"lambda_U(0.995)={lam:.4f} (0.68049+-0.08)")
    assert ok


# 3 ---------------------------------------------------------------------------

def test_criterion_03_gradients():
    worst = 0.0
    h = 1e-6
    for preset in PRESETS:
        base = make_preset(preset)
        for draw in range(20):
            rng = Rng(3).substream(draw)
            flow = Flow.initialize(rng.substream(0))
            flow = flow.with_params(flow.params + 0.3 * rng.substream(1).normal(flow.n_params))
            x = generate_target(rng.substream(2), 128)
            _, g = loss_and_grad(flow, base, x)
            fd = np.empty_like(g)
            for k in range(g.size):
                e = np.zeros(g.size)
                e[k] = h
                fd[k] = (loss_and_grad(flow.with_params(flow.params + e), base, x)[0]
                         - loss_and_grad(flow.with_params(flow.params - e), base, x)[0]) / (2 * h)
            worst = max(worst, float(np.linalg.norm(g - fd) / np.linalg.norm(fd)))
    ok = worst <= 1e-4
    report(3, ok, f"gradients: worst relative error {worst:.2e} over 20 draws x 4 presets (<=1e-4)")
    assert ok


# 4 ---------------------------------------------------------------------------

def _fd_logdet_rel(flow, x, h=1e-6):
    jac = np.empty((x.shape[0], 2, 2))
    for j in range(2):
        e = np.zeros(2)
        e[j] = h
        jac[:, :, j] = (flow.forward(x + e)[0] - flow.forward(x - e)[0]) / (2 * h)
    fd = np.log(np.abs(np.linalg.det(jac)))
    _, logdet = flow.forward(x)
    return float(np.max(np.abs(fd - logdet) / np.maximum(1.0, np.abs(logdet))))


def test_criterion_04_invertibility(criterion5_runs):
    rng = Rng(4)
    pre = 0.0
    small = 0.0
    jac = 0.0
    for draw in range(10):
        # the flow as handed to the optimizer, on target data
        init = Flow.initialize(rng.substream(draw))
        x = generate_target(rng.substream(100 + draw), 10**4)
        pre = max(pre, float(np.max(np.abs(init.inverse(init.forward(x)[0]) - x))))
        # random small parameters on unit-scale points
        flow = init.with_params(init.params + 0.1 * rng.substream(draw).substream(0).normal(init.n_params))
        pts = rng.substream(200 + draw).normal((10**4, 2)) * 3
        small = max(small, float(np.max(np.abs(flow.inverse(flow.forward(pts)[0]) - pts))))
        jac = max(jac, _fd_logdet_rel(flow, pts[:100]))

    held_out = generate_target(rng.substream(999), 10**4)
    r = np.linalg.norm(held_out, axis=1)
    region = held_out[r <= np.quantile(r, 0.999)]
    post = 0.0
    for cfg, summary in criterion5_runs.values():
        for trial, *_ in summary.finals:
            flow = read_params(Path(cfg.out) / "trials" / f"trial_{trial:04d}" / "params.txt")
            post = max(post, float(np.max(np.abs(flow.inverse(flow.forward(region)[0]) - region))))
            jac = max(jac, _fd_logdet_rel(flow, region[:100]))
    ok = pre <= 1e-9 and small <= 1e-9 and post <= 1e-5 and jac <= 1e-4
    report(4, ok, f"invertibility: pre-training {pre:.1e} (<=1e-9), small random params {small:.1e} (<=1e-9), "
                  f"post-training 99.9% region {post:.1e} (<=1e-5), "
                  f"logdet vs FD rel {jac:.1e} (<=1e-4)")
    assert ok


# 5 ---------------------------------------------------------------------------

def test_criterion_05_loss_gap(criterion5_runs):
    med = {p: float(np.median([f[1] for f in s.finals])) for p, (_, s) in criterion5_runs.items()}
    ok = (
        3.3 <= med["exactMarginals"] <= 3.7
        and med["normal"] - med["exactMarginals"] >= 0.2
        and 3.3 <= med["heavierTails"] <= 3.8
        and 3.3 <= med["correctFamily"] <= 3.8
    )
    report(5, ok, "median final test NLL (10 trials): " + ", ".join(f"{p}={v:.3f}" for p, v in med.items())
           + f"; gap normal-exact={med['normal'] - med['exactMarginals']:.3f} (>=0.2)")
    # mean at the last evaluation point orders the same way
    assert criterion5_runs["normal"][1].final_mean() > criterion5_runs["exactMarginals"][1].final_mean()
    assert ok


# 6 ---------------------------------------------------------------------------

def test_criterion_06_stability(tmp_path_factory):
    if os.environ.get("COPULANF_SKIP_FULL_SWEEP"):
        report_skip(6, "100-trial sweeps skipped (COPULANF_SKIP_FULL_SWEEP set)")
        pytest.skip("full sweep disabled")
    root = tmp_path_factory.mktemp("criterion6")
    counts = {}
    start = time.time()
    for preset in PRESETS:
        cfg = ExperimentConfig(out=str(root / preset), trials=100, workers=0).with_overrides(preset=preset)
        counts[preset] = run_sweep(cfg).n_excluded
    heavy = sum(counts[p] for p in PRESETS if p != "normal")
    ok = heavy == 0
    report(6, ok, "runs with final test NLL > 25 over 100 trials: "
                  + ", ".join(f"{p}={c}" for p, c in counts.items())
                  + f"; heavy-tailed total {heavy} (==0); normal count reported, not pinned "
                  f"[{time.time() - start:.0f}s]")
    assert ok


# 7 ---------------------------------------------------------------------------

def test_criterion_07_lipschitz_estimator():
    ident = lipschitz_surface(lambda p: p)
    ident_err = float(np.max(np.abs(ident.values - 1.0)))
    A = np.diag([2.0, 0.5])
    diag = lipschitz_surface(lambda p: p @ A.T, resolution=30, n_dirs=1000)
    lo, hi = float(diag.values.min()), float(diag.values.max())
    flow = Flow.initialize(Rng(7))
    flow = flow.with_params(flow.params + 0.3 * Rng(8).normal(flow.n_params))
    s1 = lipschitz_surface(flow.inverse, resolution=25, seed=3)
    s2 = lipschitz_surface(flow.inverse, resolution=25, seed=3)
    same = np.array_equal(s1.values, s2.values)
    ok = ident_err <= 1e-9 and 1.9 <= lo and hi <= 2.0 and same
    report(7, ok, f"Lipschitz estimator: identity |L-1|={ident_err:.1e} (<=1e-9), diag(2,.5) range "
                  f"[{lo:.4f}, {hi:.4f}] (within [1.9, 2.0]), deterministic={same}")
    assert ok


# 8 ---------------------------------------------------------------------------

def test_criterion_08_surface_comparison(criterion5_runs, tmp_path):
    maxima = {}
    for preset in ("exactMarginals", "normal"):
        cfg, summary = criterion5_runs[preset]
        rep = run_surface_report(cfg, _best_params(cfg, summary), tmp_path / preset)
        maxima[preset] = rep["inverse"]["max"]
        assert rep["inverse"]["masked"] == 0
    ok = maxima["exactMarginals"] < maxima["normal"]
    report(8, ok, f"max log10 local Lipschitz of T^-1 on [-10,10]^2 (best runs): exactMarginals="
                  f"{maxima['exactMarginals']:.3f} < normal={maxima['normal']:.3f}")
    assert ok


# 9 ---------------------------------------------------------------------------

def _sup_deviation(cfg, trial):
    rows = read_table(Path(cfg.out) / "trials" / f"trial_{trial:04d}" / "quantiles.csv")
    table = {(r["label"], round(float(r["p"]), 2)): float(r["value"]) for r in rows}
    return {
        j: max(abs(table[(f"model_x{j}", p)] - table[(f"data_x{j}", p)]) for p in DIAG_PS)
        for j in (1, 2)
    }


def test_criterion_09_quantiles(criterion5_runs):
    med = {}
    for preset in ("exactMarginals", "normal"):
        cfg, summary = criterion5_runs[preset]
        devs = [_sup_deviation(cfg, t) for t, *_ in summary.finals]
        med[preset] = {j: float(np.median([d[j] for d in devs])) for j in (1, 2)}
    ok = all(med["exactMarginals"][j] < med["normal"][j] for j in (1, 2))
    report(9, ok, "median over trials of sup_p |model q - data q|, p in {0.05..0.95}: "
                  + "; ".join(f"x{j}: exactMarginals={med['exactMarginals'][j]:.3f} vs normal={med['normal'][j]:.3f}"
                              for j in (1, 2)))
    assert ok


# 10 --------------------------------------------------------------------------

def test_criterion_10_determinism(tmp_path):
    cfg = ExperimentConfig(out=str(tmp_path / "run"), trials=2, surfaces=True, workers=0)
    run_sweep(cfg)
    first = _tree(tmp_path / "run")
    shutil.rmtree(tmp_path / "run")
    run_sweep(cfg)
    second = _tree(tmp_path / "run")
    data_same = np.array_equal(generate_target(Rng(10), 1000), generate_target(Rng(10), 1000))
    ok = first == second and data_same and len(first) > 10
    report(10, ok, f"determinism: {len(first)} emitted files bitwise identical on repeat={first == second}, "
                   f"target data identical={data_same}")
    assert ok
