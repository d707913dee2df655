"""Trial and sweep protocol.

Seed layout (``Rng`` sub-stream paths under the master seed):

* ``(0, i)``: trial ``i``; its children are ``0`` train data, ``1`` test
  data, ``2`` flow initialization, ``3`` minibatch shuffling, ``4`` model
  sampling for the quantile curves.
* ``(1,)``: bootstrap resampling during aggregation.

Lipschitz-surface directions are drawn from ``Rng(master seed)`` and are
therefore shared by every trial of a sweep.
"""
from __future__ import annotations

import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..coupling import CopulaBase
from ..evaluation import (
    DEFAULT_PS,
    LipschitzSurface,
    data_quantiles,
    lipschitz_surface,
    model_quantiles,
)
from ..flow import Flow
from ..numerics import Rng
from ..training import LossHistory, bootstrap_ci, train
from .config import ExperimentConfig, TargetSpec
from .io import read_params, read_table, write_json, write_params, write_table

log = logging.getLogger(__name__)

DIAGNOSTIC_PS = tuple(np.round(np.arange(1, 20) * 0.05, 2))


def generate_target(rng: Rng, n: int, target: TargetSpec | CopulaBase | None = None) -> np.ndarray:
    """``n`` draws from the target (default: Gumbel(2.5) copula, t_2(0, 1) marginals)."""
    if n < 1:
        raise ValueError("n must be >= 1")
    if target is None:
        target = TargetSpec()
    dist = target.build() if isinstance(target, TargetSpec) else target
    return dist.sample(rng, n)


def trial_rng(config: ExperimentConfig, index: int) -> Rng:
    return Rng(config.seed).substream(0).substream(index)


def trial_dir(config: ExperimentConfig, index: int) -> Path:
    return Path(config.out) / "trials" / f"trial_{index:04d}"


@dataclass
class TrialResult:
    trial: int
    seed: str
    history: LossHistory
    final_test_nll: float
    diverged: bool
    excluded: bool
    skipped_steps: int = 0
    quantile_sup_dev: dict = field(default_factory=dict)
    artifacts: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "trial": self.trial,
            "seed": self.seed,
            "final_test_nll": self.final_test_nll,
            "diverged": self.diverged,
            "excluded": self.excluded,
            "skipped_steps": self.skipped_steps,
            "quantile_sup_dev": self.quantile_sup_dev,
            "artifacts": self.artifacts,
        }


def quantile_sup_deviation(model_curves: dict, data_curves: dict, ps=DIAGNOSTIC_PS) -> dict:
    """``sup_p |model quantile - data quantile|`` per coordinate and for the norm."""
    out = {}
    for label, data_curve in data_curves.items():
        stat = label.split("_", 1)[1]
        model_curve = model_curves[f"model_{stat}"]
        idx = [int(np.argmin(np.abs(data_curve.ps - p))) for p in ps]
        out[stat] = float(np.max(np.abs(model_curve.values[idx] - data_curve.values[idx])))
    return out


def surface_pair(flow: Flow, config: ExperimentConfig) -> tuple[LipschitzSurface, LipschitzSurface]:
    kw = dict(
        resolution=config.surface_resolution,
        epsilon=config.surface_epsilon,
        n_dirs=config.surface_dirs,
        seed=config.seed,
    )
    fwd = lipschitz_surface(lambda p: flow.forward(p)[0], **kw)
    inv = lipschitz_surface(flow.inverse, **kw)
    return fwd, inv


def write_surface(path, surface: LipschitzSurface):
    meta = (
        f"epsilon={surface.epsilon!r} n_dirs={surface.n_dirs} seed={surface.seed} "
        f"log_scale={str(surface.log_scale).lower()}"
    )
    write_table(path, ("x1", "x2", "value"), surface.rows(), comment=meta)


def run_trial(config: ExperimentConfig, index: int) -> TrialResult:
    """One complete train/evaluate run; never raises on divergence."""
    rng = trial_rng(config, index)
    target = config.target.build()
    base = config.base.build()
    train_x = generate_target(rng.substream(0), config.n_train, target)
    test_x = generate_target(rng.substream(1), config.n_test, target)
    flow = Flow.initialize(rng.substream(2))
    res = train(flow, base, train_x, test_x, config.training, rng.substream(3))
    final = res.history.test[-1]
    if not math.isfinite(final):
        final = math.inf
    excluded = res.diverged or final > config.threshold

    out = trial_dir(config, index)
    out.mkdir(parents=True, exist_ok=True)
    artifacts = {"losses": "losses.csv", "params": "params.txt", "quantiles": "quantiles.csv"}
    write_table(out / "losses.csv", ("trial", "epoch", "split", "nll"), res.history.rows(index))
    write_params(out / "params.txt", res.flow)

    mq = model_quantiles(res.flow, base, rng.substream(4), config.quantile_n, DEFAULT_PS)
    dq = data_quantiles(test_x, DEFAULT_PS, "data")
    rows = []
    for curve in list(mq.curves.values()) + list(dq.values()):
        rows.extend(curve.rows(index))
    write_table(out / "quantiles.csv", ("p", "value", "label", "trial"), rows)
    sup_dev = quantile_sup_deviation(mq.curves, dq)

    if config.surfaces:
        fwd, inv = surface_pair(res.flow, config)
        write_surface(out / "surface_fwd.csv", fwd)
        write_surface(out / "surface_inv.csv", inv)
        artifacts["surface_fwd"] = "surface_fwd.csv"
        artifacts["surface_inv"] = "surface_inv.csv"

    result = TrialResult(
        trial=index,
        seed=f"{config.seed}/0/{index}",
        history=res.history,
        final_test_nll=final,
        diverged=res.diverged,
        excluded=excluded,
        skipped_steps=res.skipped_steps,
        quantile_sup_dev=sup_dev,
        artifacts=artifacts,
    )
    write_json(out / "result.json", result.to_dict())
    return result


@dataclass
class SweepSummary:
    rows: list  # (epoch, split, mean, ci_lo, ci_hi, n_included)
    finals: list  # (trial, final_test_nll, diverged, excluded)
    n_trials: int
    n_excluded: int
    empty: bool
    preset: str = ""

    @property
    def n_included(self) -> int:
        return self.n_trials - self.n_excluded

    def final_mean(self, split: str = "test") -> float:
        last = [r for r in self.rows if r[1] == split]
        return last[-1][2] if last else math.nan


def summarize(loss_rows, finals, seed: int = 0, resamples: int = 10000) -> SweepSummary:
    """Per-epoch means and 95% bootstrap intervals over the included trials.

    ``loss_rows`` are ``(trial, epoch, split, nll)``; ``finals`` are
    ``(trial, final_test_nll, diverged, excluded)``.
    """
    included = {int(t) for t, _, _, exc in finals if not exc}
    grouped: dict = {}
    for trial, epoch, split, nll in loss_rows:
        if int(trial) in included:
            grouped.setdefault((int(epoch), split), []).append((int(trial), float(nll)))
    agg_rng = Rng(seed).substream(1)
    rows = []
    for (epoch, split) in sorted(grouped, key=lambda k: (k[0], k[1] != "train")):
        vals = np.array([v for _, v in sorted(grouped[(epoch, split)])])
        mean = float(np.mean(vals))
        lo, hi = bootstrap_ci(vals, 0.95, resamples, agg_rng.substream(len(rows)))
        rows.append((epoch, split, mean, min(lo, mean), max(hi, mean), int(vals.size)))
    n_excl = sum(1 for f in finals if f[3])
    return SweepSummary(rows, list(finals), len(finals), n_excl, not included)


def _run_trial_args(args):
    return run_trial(*args)


def run_sweep(config: ExperimentConfig, indices=None) -> SweepSummary:
    """Run every trial, aggregate, and write the sweep-level tables and manifest."""
    indices = list(range(config.trials)) if indices is None else list(indices)
    workers = config.workers or os.cpu_count() or 1
    workers = min(workers, len(indices))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_trial_args, [(config, i) for i in indices]))
    else:
        results = [run_trial(config, i) for i in indices]
    results.sort(key=lambda r: r.trial)

    out = Path(config.out)
    loss_rows = [row for r in results for row in r.history.rows(r.trial)]
    finals = [(r.trial, r.final_test_nll, r.diverged, r.excluded) for r in results]
    summary = summarize(loss_rows, finals, config.seed)
    summary.preset = config.base.name
    write_table(out / "losses.csv", ("trial", "epoch", "split", "nll"), loss_rows)
    write_table(
        out / "trials.csv",
        ("trial", "seed", "final_test_nll", "diverged", "excluded", "dir"),
        [
            (r.trial, r.seed, r.final_test_nll, int(r.diverged), int(r.excluded),
             str(trial_dir(config, r.trial).relative_to(out)))
            for r in results
        ],
    )
    write_table(
        out / "summary.csv", ("epoch", "split", "mean", "ci_lo", "ci_hi", "n_included"), summary.rows
    )
    marker = out / "EMPTY_AGGREGATE"
    if summary.empty:
        marker.write_text(f"all {summary.n_trials} trials excluded (threshold {config.threshold!r})\n")
    elif marker.exists():
        marker.unlink()
    (out / "config.ini").write_text(config.to_ini(), encoding="utf-8")
    write_json(
        out / "manifest.json",
        {
            "config_digest": config.digest(),
            "base": config.base.name,
            "master_seed": config.seed,
            "trials": indices,
            "trial_seeds": {r.trial: r.seed for r in results},
            "threshold": config.threshold,
            "n_excluded": summary.n_excluded,
            "exclusions_by_preset": {config.base.name: summary.n_excluded},
            "empty_aggregate": summary.empty,
            "artifacts": {
                "losses": "losses.csv",
                "trials": "trials.csv",
                "summary": "summary.csv",
                "config": "config.ini",
                "per_trial": {
                    r.trial: {k: f"{trial_dir(config, r.trial).relative_to(out)}/{v}" for k, v in r.artifacts.items()}
                    for r in results
                },
            },
        },
    )
    log.info("sweep %s: %d trials, %d excluded", config.base.name, len(results), summary.n_excluded)
    return summary


def load_sweep_tables(out) -> tuple[list, list]:
    """Re-read ``losses.csv`` and ``trials.csv`` in the form ``summarize`` expects."""
    out = Path(out)
    losses = [(int(r["trial"]), int(r["epoch"]), r["split"], float(r["nll"])) for r in read_table(out / "losses.csv")]
    finals = [
        (int(r["trial"]), float(r["final_test_nll"]), bool(int(r["diverged"])), bool(int(r["excluded"])))
        for r in read_table(out / "trials.csv")
    ]
    return losses, finals


def run_surface_report(config: ExperimentConfig, params_path, out_dir=None) -> dict:
    """Forward and inverse Lipschitz surfaces for a saved parameter file, plus log10 statistics."""
    flow = read_params(params_path, expected=Flow.identity())
    out = Path(out_dir if out_dir is not None else config.out)
    fwd, inv = surface_pair(flow, config)
    write_surface(out / "surface_fwd.csv", fwd)
    write_surface(out / "surface_inv.csv", inv)
    report = {
        "params": str(params_path),
        "forward": fwd.log10_stats(),
        "inverse": inv.log10_stats(),
        "epsilon": config.surface_epsilon,
        "n_dirs": config.surface_dirs,
        "resolution": config.surface_resolution,
        "seed": config.seed,
        "box": [-10.0, 10.0],
    }
    write_json(out / "surfaces.json", report)
    return report


def export_quantiles(config: ExperimentConfig, params_path=None, out_dir=None, n=None) -> Path:
    """Model quantile curves (and target-sample curves) for a saved or identity flow."""
    flow = Flow.identity() if params_path is None else read_params(params_path, expected=Flow.identity())
    base = config.base.build()
    root = Rng(config.seed)
    n = n or config.quantile_n
    mq = model_quantiles(flow, base, root.substream(4), n, DEFAULT_PS)
    data = generate_target(root.substream(5), n, config.target)
    rows = []
    for curve in list(mq.curves.values()) + list(data_quantiles(data, DEFAULT_PS, "data").values()):
        rows.extend(curve.rows(0))
    path = Path(out_dir if out_dir is not None else config.out) / "quantiles.csv"
    write_table(path, ("p", "value", "label", "trial"), rows)
    return path


__all__ = [
    "generate_target",
    "run_trial",
    "run_sweep",
    "summarize",
    "load_sweep_tables",
    "run_surface_report",
    "export_quantiles",
    "TrialResult",
    "SweepSummary",
    "quantile_sup_deviation",
]
