"""Maximum-likelihood training: exact gradients, Adam, loss history, bootstrap CIs.

Gradients use the flow's layer-wise analytic adjoints (``Flow.backward``)
seeded with the base score ``d ln p_base / dz``; there is no general tape.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .coupling import CopulaBase
from .flow import Flow
from .numerics import Rng

log = logging.getLogger(__name__)


class NonFiniteLoss(FloatingPointError):
    """Raised when a sample's log-likelihood is not finite."""

    def __init__(self, index: int, value: float):
        super().__init__(f"non-finite log-likelihood {value} at sample {index}")
        self.index = index
        self.value = value


def loss_and_grad(flow: Flow, base: CopulaBase, batch) -> tuple[float, np.ndarray]:
    """Mean negative log-likelihood of ``batch`` and its gradient in the flat parameter layout."""
    x = np.atleast_2d(np.asarray(batch, dtype=float))
    n = x.shape[0]
    if n == 0:
        raise ValueError("empty batch")
    with np.errstate(over="ignore", invalid="ignore"):
        fp = flow.transform(x)
        ll = base.log_pdf(fp.z) + fp.logdet
    bad = ~np.isfinite(ll)
    if bad.any():
        i = int(np.flatnonzero(bad)[0])
        raise NonFiniteLoss(i, float(ll[i]))
    nll = -float(np.mean(ll))
    grad_z = -base.score(fp.z) / n
    grad = flow.backward(fp, grad_z, np.full(n, -1.0 / n))
    return nll, grad


@dataclass(frozen=True)
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros(cls, n: int, **hyper) -> "AdamState":
        return cls(np.zeros(n), np.zeros(n), **hyper)


def adam_step(state: AdamState, params, grad) -> tuple[np.ndarray, AdamState]:
    params = np.asarray(params, dtype=float)
    grad = np.asarray(grad, dtype=float)
    if params.shape != grad.shape or params.shape != state.m.shape:
        raise ValueError("parameter, gradient and moment shapes differ")
    t = state.t + 1
    m = state.beta1 * state.m + (1.0 - state.beta1) * grad
    v = state.beta2 * state.v + (1.0 - state.beta2) * grad * grad
    m_hat = m / (1.0 - state.beta1**t)
    v_hat = v / (1.0 - state.beta2**t)
    new = params - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return new, replace(state, m=m, v=v, t=t)


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 128
    epochs: int = 50
    lr: float = 1e-3
    clip: Optional[float] = None

    def __post_init__(self):
        if self.batch_size < 1 or self.epochs < 0 or not self.lr > 0:
            raise ValueError("invalid training configuration")


@dataclass
class LossHistory:
    """Full-dataset train/test NLL after each epoch (epoch 0 = before training)."""

    epochs: list = field(default_factory=list)
    train: list = field(default_factory=list)
    test: list = field(default_factory=list)

    def append(self, epoch: int, train_nll: float, test_nll: float):
        self.epochs.append(epoch)
        self.train.append(train_nll)
        self.test.append(test_nll)

    def rows(self, trial: int = 0):
        """``(trial, epoch, split, nll)`` rows."""
        out = []
        for e, tr, te in zip(self.epochs, self.train, self.test):
            out.append((trial, e, "train", tr))
            out.append((trial, e, "test", te))
        return out


@dataclass
class TrainResult:
    flow: Flow
    history: LossHistory
    diverged: bool
    skipped_steps: int


def _mean_nll(flow, base, data, chunk=20000):
    total = 0.0
    for start in range(0, data.shape[0], chunk):
        with np.errstate(over="ignore", invalid="ignore"):
            ll = flow.log_prob(base, data[start : start + chunk])
        total += float(np.sum(ll))
    val = -total / data.shape[0]
    return val if math.isfinite(val) else math.inf


def train(
    flow: Flow,
    base: CopulaBase,
    train_data,
    test_data,
    config: TrainConfig,
    rng: Rng,
) -> TrainResult:
    """Minibatch Adam on the mean NLL; shuffles every epoch, keeps the last partial batch.

    A run is marked diverged (and stopped) once three consecutive epoch
    evaluations are non-finite.  Batches with a non-finite loss or gradient
    are skipped.
    """
    train_data = np.asarray(train_data, dtype=float)
    test_data = np.asarray(test_data, dtype=float)
    if train_data.shape[1] != flow.dim or test_data.shape[1] != flow.dim:
        raise ValueError("data dimension does not match the flow")
    if config.batch_size > train_data.shape[0]:
        raise ValueError("batch size exceeds the training set")

    history = LossHistory()
    history.append(0, _mean_nll(flow, base, train_data), _mean_nll(flow, base, test_data))
    params = np.array(flow.params)
    state = AdamState.zeros(params.size, lr=config.lr)
    n = train_data.shape[0]
    skipped = 0
    bad_evals = 0
    diverged = False
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(n)
        for start in range(0, n, config.batch_size):
            batch = train_data[order[start : start + config.batch_size]]
            try:
                _, grad = loss_and_grad(flow, base, batch)
            except NonFiniteLoss:
                skipped += 1
                continue
            if not np.all(np.isfinite(grad)):
                skipped += 1
                continue
            if config.clip is not None:
                norm = float(np.linalg.norm(grad))
                if norm > config.clip:
                    grad = grad * (config.clip / norm)
            params, state = adam_step(state, params, grad)
            flow = flow.with_params(params)
        tr = _mean_nll(flow, base, train_data)
        te = _mean_nll(flow, base, test_data)
        history.append(epoch, tr, te)
        bad_evals = bad_evals + 1 if not (math.isfinite(tr) and math.isfinite(te)) else 0
        if bad_evals >= 3:
            diverged = True
            log.warning("training diverged at epoch %d", epoch)
            break
    return TrainResult(flow, history, diverged, skipped)


def bootstrap_ci(values, level: float = 0.95, resamples: int = 10000, rng: Optional[Rng] = None):
    """Percentile bootstrap interval for the mean of ``values``."""
    x = np.asarray(values, dtype=float).ravel()
    if x.size == 0:
        raise ValueError("bootstrap_ci needs at least one value")
    if not 0 < level < 1:
        raise ValueError("level must lie in (0, 1)")
    if np.all(x == x[0]):
        return float(x[0]), float(x[0])
    rng = rng or Rng(0)
    means = np.empty(resamples)
    chunk = max(1, 2_000_000 // x.size)
    for start in range(0, resamples, chunk):
        k = min(chunk, resamples - start)
        idx = rng.integers(x.size, (k, x.size))
        means[start : start + k] = x[idx].mean(axis=1)
    alpha = 0.5 * (1.0 - level)
    lo, hi = np.quantile(means, [alpha, 1.0 - alpha])
    return float(lo), float(hi)
