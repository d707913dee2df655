import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from copulanf.coupling import PRESETS, make_preset, target_distribution
from copulanf.flow import Flow
from copulanf.numerics import Rng
from copulanf.training import (
    AdamState,
    LossHistory,
    NonFiniteLoss,
    TrainConfig,
    adam_step,
    bootstrap_ci,
    loss_and_grad,
    train,
)

MU_BIAS = slice(28, 30)
ALPHA_BIAS = slice(30, 32)
LAST = 64


def perturbed_flow(rng, spread=0.3):
    flow = Flow.initialize(rng.substream(0))
    return flow.with_params(flow.params + spread * rng.substream(1).normal(flow.n_params))


def test_identity_flow_at_origin():
    nll, grad = loss_and_grad(Flow.identity(), make_preset("normal"), np.zeros((4, 2)))
    assert nll == pytest.approx(1.837877, abs=1e-6)
    # z = 0 everywhere: only -logdet contributes, d(-logdet)/d alpha = 1 in every layer
    for k in range(3):
        assert np.array_equal(grad[32 * k + 30 : 32 * k + 32], [1.0, 1.0])
        assert np.array_equal(grad[32 * k + 28 : 32 * k + 30], [0.0, 0.0])


def test_hand_adjoint_of_last_layer_heads():
    # identity flow, x = (1, 2) -> z = (2, 1); nll = |z|^2 / 2 + const - logdet
    # d nll / d mu_i = -z_i and d nll / d alpha_i = 1 - z_i^2 for the final layer
    _, grad = loss_and_grad(Flow.identity(), make_preset("normal"), np.array([[1.0, 2.0]]))
    assert np.allclose(grad[LAST:][MU_BIAS], [-2.0, -1.0], atol=1e-15)
    assert np.allclose(grad[LAST:][ALPHA_BIAS], [-3.0, 0.0], atol=1e-15)


def test_duplicating_batch_is_invariant():
    rng = Rng(1)
    flow = perturbed_flow(rng)
    x = target_distribution().sample(rng.substream(2), 64)
    a = loss_and_grad(flow, make_preset("exactMarginals"), x)
    b = loss_and_grad(flow, make_preset("exactMarginals"), np.concatenate([x, x]))
    assert a[0] == pytest.approx(b[0], rel=1e-14)
    assert np.allclose(a[1], b[1], rtol=1e-12, atol=1e-15)


def central_difference_check(flow, base, x, h=1e-6):
    _, g = loss_and_grad(flow, base, x)
    fd = np.empty_like(g)
    for k in range(g.size):
        e = np.zeros(g.size)
        e[k] = h
        fd[k] = (loss_and_grad(flow.with_params(flow.params + e), base, x)[0]
                 - loss_and_grad(flow.with_params(flow.params - e), base, x)[0]) / (2 * h)
    return float(np.linalg.norm(g - fd) / max(np.linalg.norm(fd), 1e-12))


@pytest.mark.parametrize("preset", PRESETS)
@pytest.mark.parametrize("draw", range(5))
def test_gradient_matches_central_differences(preset, draw):
    rng = Rng(1000 + draw)
    x = target_distribution().sample(rng.substream(3), 128)
    assert central_difference_check(perturbed_flow(rng), make_preset(preset), x) <= 1e-4


def test_gradient_with_dependent_copula_bases():
    from copulanf.copulas import GaussianCopula
    from copulanf.coupling import CopulaBase
    from copulanf.marginals import Laplace, StudentT

    rng = Rng(7)
    x = target_distribution().sample(rng.substream(3), 64)
    for base in (target_distribution(), CopulaBase((Laplace(0, 2), StudentT(3)), GaussianCopula.bivariate(0.5))):
        assert central_difference_check(perturbed_flow(rng, 0.2), base, x) <= 1e-4


def test_non_finite_loss_is_reported():
    x = np.array([[0.0, 0.0], [np.nan, 1.0]])
    with pytest.raises(NonFiniteLoss) as info:
        loss_and_grad(Flow.identity(), make_preset("normal"), x)
    assert info.value.index == 1


def test_adam_zero_gradient_keeps_params():
    p = np.array([1.0, -2.0, 3.5])
    new, state = adam_step(AdamState.zeros(3), p, np.zeros(3))
    assert np.array_equal(new, p) and state.t == 1


def test_adam_first_step():
    # t = 1: m_hat = g, v_hat = g^2, so the step is -lr * g / (|g| + eps)
    new, _ = adam_step(AdamState.zeros(1, lr=1e-3), np.zeros(1), np.array([2.0]))
    assert new[0] == pytest.approx(-1e-3 * 2.0 / (2.0 + 1e-8), rel=1e-15)
    assert new[0] == pytest.approx(-9.99999e-4, abs=1e-9)


def test_adam_constant_gradient_does_not_blow_up():
    state = AdamState.zeros(1)
    p0 = np.zeros(1)
    p1, state = adam_step(state, p0, np.array([3.0]))
    p2, state = adam_step(state, p1, np.array([3.0]))
    assert abs(p2[0] - p1[0]) <= abs(p1[0] - p0[0]) * 1.01


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-10, 10), min_size=4, max_size=4), st.permutations(range(4)))
def test_adam_is_coordinatewise(grads, perm):
    g = np.array(grads)
    p = np.arange(4.0)
    perm = np.array(perm)
    a, _ = adam_step(AdamState.zeros(4), p, g)
    b, _ = adam_step(AdamState.zeros(4), p[perm], g[perm])
    assert np.array_equal(a[perm], b)


def test_adam_shape_mismatch():
    with pytest.raises(ValueError):
        adam_step(AdamState.zeros(2), np.zeros(3), np.zeros(3))


def _data(seed, n=2000):
    rng = Rng(seed)
    return target_distribution().sample(rng.substream(0), n), target_distribution().sample(rng.substream(1), n)


def test_zero_epochs_only_initial_evaluation():
    tr, te = _data(2)
    flow = Flow.initialize(Rng(3))
    res = train(flow, make_preset("normal"), tr, te, TrainConfig(epochs=0), Rng(4))
    assert res.history.epochs == [0]
    assert np.array_equal(res.flow.params, flow.params)
    assert res.history.test[0] == pytest.approx(-np.mean(flow.log_prob(make_preset("normal"), te)), rel=1e-14)


def test_training_is_deterministic():
    tr, te = _data(5)
    runs = [
        train(Flow.initialize(Rng(6)), make_preset("heavierTails"), tr, te, TrainConfig(epochs=3), Rng(7))
        for _ in range(2)
    ]
    assert runs[0].history == runs[1].history
    assert np.array_equal(runs[0].flow.params, runs[1].flow.params)


@pytest.mark.parametrize("preset", PRESETS)
def test_training_reduces_loss_in_expectation(preset):
    start, end = [], []
    for seed in range(10):
        tr, te = _data(100 + seed)
        res = train(Flow.initialize(Rng(seed)), make_preset(preset), tr, te, TrainConfig(epochs=5), Rng(50 + seed))
        start.append(res.history.train[0])
        end.append(res.history.train[5])
    assert np.mean(end) < np.mean(start)


def test_non_finite_data_marks_divergence():
    tr, te = _data(8, 512)
    tr = tr.copy()
    tr[3] = np.nan
    res = train(Flow.initialize(Rng(9)), make_preset("normal"), tr, te, TrainConfig(epochs=10), Rng(10))
    assert res.diverged
    assert res.skipped_steps >= 3
    assert len(res.history.epochs) == 4  # epoch 0 plus three failing evaluations


def test_last_partial_batch_is_used():
    tr, te = _data(11, 300)
    flow = Flow.initialize(Rng(12))
    res = train(flow, make_preset("normal"), tr, te, TrainConfig(batch_size=128, epochs=1), Rng(13))
    assert res.skipped_steps == 0
    # three steps: 128 + 128 + 44; replay them by hand
    state = AdamState.zeros(flow.n_params)
    params = np.array(flow.params)
    order = Rng(13).permutation(300)
    cur = flow
    for start in range(0, 300, 128):
        _, g = loss_and_grad(cur, make_preset("normal"), tr[order[start : start + 128]])
        params, state = adam_step(state, params, g)
        cur = cur.with_params(params)
    assert state.t == 3
    assert np.array_equal(params, res.flow.params)


def test_train_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(batch_size=0)
    with pytest.raises(ValueError):
        TrainConfig(lr=0.0)
    tr, te = _data(14, 100)
    with pytest.raises(ValueError):
        train(Flow.identity(), make_preset("normal"), tr, te, TrainConfig(batch_size=128), Rng(0))


def test_loss_history_rows():
    h = LossHistory()
    h.append(0, 2.0, 3.0)
    assert h.rows(7) == [(7, 0, "train", 2.0), (7, 0, "test", 3.0)]


def test_bootstrap_constant_and_bounded():
    assert bootstrap_ci([2.5] * 20) == (2.5, 2.5)
    lo, hi = bootstrap_ci([0.0, 1.0], 0.95, 2000, Rng(1))
    assert 0.0 <= lo <= hi <= 1.0


def test_bootstrap_width_matches_clt():
    x = Rng(2).normal(10**4)
    lo, hi = bootstrap_ci(x, 0.95, 10000, Rng(3))
    oracle = 2 * 1.959964 * x.std() / math.sqrt(x.size)
    assert abs((hi - lo) - oracle) <= 0.2 * oracle
    assert abs((hi - lo) - 0.0392) <= 0.2 * 0.0392
    assert lo <= x.mean() <= hi


def test_bootstrap_deterministic_and_validated():
    x = Rng(4).normal(50)
    assert bootstrap_ci(x, rng=Rng(5)) == bootstrap_ci(x, rng=Rng(5))
    with pytest.raises(ValueError):
        bootstrap_ci([])
    with pytest.raises(ValueError):
        bootstrap_ci([1.0, 2.0], level=1.0)
