import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from edgerank.errors import CertaintyCoverageError, ConfigError, NoPositivesError, ShapeError
from edgerank.losses import (
    LossConfig,
    Strategy,
    cb_ce_loss,
    ce_dice_combined,
    ce_loss,
    check_delta,
    dice_loss,
    overall_loss,
    primary_terms,
    rank_loss,
    sort_loss,
    step_h,
    uncertainty_weighted_loss,
)

from oracles import ce_oracle, rank_oracle, sort_oracle

STRATEGIES = list(Strategy)


def cfg_for(strategy, **kw):
    # small tiles and few sweep levels so the tiled paths get exercised
    return LossConfig(strategy=strategy, tile_size=7, max_sweep_levels=3, **kw)


@st.composite
def instances(draw, max_side=9, levels=None):
    h = draw(st.integers(1, max_side))
    w = draw(st.integers(2, max_side))
    p = draw(arrays(np.float64, (h, w), elements=st.floats(0, 1)))
    y = draw(arrays(np.bool_, (h, w)))
    y.flat[draw(st.integers(0, h * w - 1))] = True
    if levels:
        c = draw(arrays(np.int64, (h, w), elements=st.integers(1, levels))) / levels
    else:
        c = draw(arrays(np.float64, (h, w), elements=st.floats(0, 1)))
    return p, y, np.where(y, c, 0.0)


# -------------------------------------------------------------- step


@pytest.mark.parametrize("x,expected", [(0.0, 0.5), (-0.5, 0.0), (0.05, 0.75), (0.5, 1.0), (-0.1, 0.0), (0.1, 1.0)])
def test_step_h_values(x, expected):
    assert step_h(x, 0.1) == pytest.approx(expected, abs=1e-15)


def test_delta_validation():
    with pytest.raises(ValueError):
        check_delta(0.0)
    with pytest.raises(ValueError):
        LossConfig(delta_rank=-1)
    with pytest.raises(ValueError):
        LossConfig(delta_sort=1.5)


# -------------------------------------------------------------- worked examples


@pytest.mark.parametrize("strategy", STRATEGIES)
def test_rank_inverted_pair(strategy):
    res = rank_loss(np.array([[0.2, 0.8]]), np.array([[1, 0]]), cfg_for(strategy))
    assert res.loss == pytest.approx(0.5, abs=1e-12)
    np.testing.assert_allclose(res.grad, [[-0.5, 0.5]], atol=1e-12)


@pytest.mark.parametrize("strategy", STRATEGIES)
def test_rank_tied_pair(strategy):
    res = rank_loss(np.array([[0.5, 0.5]]), np.array([[1, 0]]), cfg_for(strategy))
    assert res.loss == pytest.approx(1 / 3, abs=1e-12)


@pytest.mark.parametrize("strategy", STRATEGIES)
def test_sort_two_positives(strategy):
    p = np.array([[0.3, 0.9]])
    c = np.array([[1.0, 0.5]])
    res = sort_loss(p, np.ones((1, 2)), c, cfg_for(strategy))
    assert res.loss == pytest.approx(0.125, abs=1e-12)
    np.testing.assert_allclose(res.grad, [[-0.125, 0.125]], atol=1e-12)


def test_worked_examples_match_oracle():
    assert rank_oracle([0.2, 0.8], [1, 0])[0] == pytest.approx(0.5)
    assert rank_oracle([0.5, 0.5], [1, 0])[0] == pytest.approx(1 / 3)
    assert sort_oracle([0.3, 0.9], [1, 1], [1.0, 0.5])[0] == pytest.approx(0.125)


@pytest.mark.parametrize("strategy", STRATEGIES)
def test_rank_separated_is_zero(strategy):
    p = np.array([[0.9, 0.95, 0.1, 0.2, 0.3]])
    y = np.array([[1, 1, 0, 0, 0]])
    res = rank_loss(p, y, cfg_for(strategy))
    assert res.loss == 0.0
    assert not res.grad.any()


def test_errors():
    with pytest.raises(NoPositivesError):
        rank_loss(np.zeros((2, 2)), np.zeros((2, 2)))
    with pytest.raises(ShapeError):
        rank_loss(np.zeros((2, 2)), np.ones((2, 3)))
    with pytest.raises(CertaintyCoverageError):
        sort_loss(np.zeros((1, 2)), np.ones((1, 2)), np.array([[np.nan, 1.0]]))
    with pytest.raises(ConfigError):
        overall_loss(np.zeros((1, 2)), np.ones((1, 2)), None, LossConfig(alpha=1.0))


# -------------------------------------------------------------- oracle agreement


@settings(max_examples=60, deadline=None)
@given(instances(levels=None))
def test_rank_matches_literal_oracle(inst):
    p, y, _ = inst
    loss_terms, loss_ap, grad = rank_oracle(p, y)
    assert loss_terms == pytest.approx(loss_ap, abs=1e-12)
    for s in STRATEGIES:
        res = rank_loss(p, y, cfg_for(s))
        assert res.loss == pytest.approx(loss_terms, abs=1e-12)
        np.testing.assert_allclose(res.grad.ravel(), grad, atol=1e-12)


@settings(max_examples=60, deadline=None)
@given(st.one_of(instances(levels=None), instances(levels=4)))
def test_sort_matches_literal_oracle(inst):
    p, y, c = inst
    loss, grad = sort_oracle(p, y, c)
    for s in STRATEGIES:
        res = sort_loss(p, y, c, cfg_for(s))
        assert res.loss == pytest.approx(loss, abs=1e-12)
        np.testing.assert_allclose(res.grad.ravel(), grad, atol=1e-12)


# -------------------------------------------------------------- invariants


@settings(max_examples=80, deadline=None)
@given(instances())
def test_rank_range_and_balance(inst):
    p, y, _ = inst
    res = rank_loss(p, y)
    assert 0.0 <= res.loss <= 1.0
    assert abs(res.grad.sum()) < 1e-12
    assert np.all(res.grad[y] <= 0) and np.all(res.grad[~y] >= 0)


@settings(max_examples=60, deadline=None)
@given(instances(), st.floats(0.01, 0.5))
def test_rank_saturation(inst, delta):
    _, y, _ = inst
    p = np.where(y, 0.9, 0.85 - delta)
    assert rank_loss(p, y, LossConfig(delta_rank=delta)).loss == 0.0


@settings(max_examples=80, deadline=None)
@given(instances(), st.data())
def test_pair_swap_decreases_rank_loss(inst, data):
    p, y, _ = inst
    pos, neg = np.flatnonzero(y), np.flatnonzero(~y)
    if len(neg) == 0:
        return
    i = data.draw(st.sampled_from(pos.tolist()))
    j = data.draw(st.sampled_from(neg.tolist()))
    flat = p.ravel().copy()
    if not flat[j] - flat[i] > 0.1 + 1e-9:
        return
    before = rank_loss(p, y).loss
    flat[i], flat[j] = flat[j], flat[i]
    after = rank_loss(flat.reshape(p.shape), y).loss
    assert after < before


@settings(max_examples=80, deadline=None)
@given(instances(levels=5))
def test_sort_nonnegative(inst):
    p, y, c = inst
    res = sort_loss(p, y, c)
    assert res.loss >= -1e-15
    assert abs(res.grad.sum()) < 1e-12
    assert not res.grad[~y].any()


@settings(max_examples=40, deadline=None)
@given(instances(), st.floats(0, 1))
def test_sort_vanishes_on_uniform_certainty(inst, level):
    p, y, _ = inst
    c = np.where(y, level, 0.0)
    res = sort_loss(p, y, c)
    assert res.loss == pytest.approx(0.0, abs=1e-15)
    assert np.abs(res.grad).max() == pytest.approx(0.0, abs=1e-15)


def test_sort_vanishes_when_order_agrees():
    p = np.array([[0.1, 0.5, 0.9]])
    c = np.array([[0.2, 0.6, 1.0]])
    assert sort_loss(p, np.ones_like(p), c).loss == pytest.approx(0.0, abs=1e-15)


@settings(max_examples=40, deadline=None)
@given(instances(levels=3))
def test_overall_is_weighted_sum(inst):
    p, y, c = inst
    cfg = LossConfig(alpha=2.0)
    r, s = rank_loss(p, y, cfg), sort_loss(p, y, c, cfg)
    o = overall_loss(p, y, c, cfg)
    assert o.loss == pytest.approx(r.loss + 2 * s.loss, abs=1e-12)
    np.testing.assert_allclose(o.grad, r.grad + 2 * s.grad, atol=1e-12)
    assert overall_loss(p, y, None, LossConfig()).loss == r.loss


@settings(max_examples=40, deadline=None)
@given(instances(levels=4))
def test_primary_terms_reconstruct(inst):
    p, y, c = inst
    rt = primary_terms(p, y, cfg=LossConfig(), which="rank")
    assert rt.reconstruct() == pytest.approx(rank_loss(p, y).loss, abs=1e-12)
    st_ = primary_terms(p, y, c, LossConfig(), which="sort")
    assert st_.reconstruct() == pytest.approx(sort_loss(p, y, c).loss, abs=1e-12)
    pos = set(np.flatnonzero(y).tolist())
    assert all(i in pos and j in pos for i, j, _ in st_.triples())
    assert all(i in pos and j not in pos for i, j, _ in rt.triples())


def test_primary_terms_inverted_pair():
    t = primary_terms(np.array([[0.2, 0.8]]), np.array([[1, 0]]))
    assert t.triples() == [(0, 1, pytest.approx(0.5))]
    assert t.reconstruct() == pytest.approx(0.5)
    sep = primary_terms(np.array([[0.9, 0.1]]), np.array([[1, 0]]))
    assert len(sep) == 0


# -------------------------------------------------------------- baselines


def test_cb_ce_example():
    p = np.full((1, 4), 0.5)
    y = np.array([[1, 0, 0, 0]])
    assert cb_ce_loss(p, y).loss == pytest.approx(1.5 * math.log(2), rel=1e-12)
    assert cb_ce_loss(p, y).loss == pytest.approx(ce_oracle(p, y, 0.75, 0.25), rel=1e-12)


def test_cb_ce_all_positive_is_zero():
    p = np.random.default_rng(0).random((3, 3))
    assert cb_ce_loss(p, np.ones((3, 3))).loss == 0.0


def test_cb_ce_perfect_prediction_small():
    y = np.array([[1, 0], [0, 1]], dtype=float)
    assert cb_ce_loss(y, y).loss < 4 * 1e-6


def test_dice_examples():
    y = np.array([[1, 0, 1, 0]], dtype=float)
    assert dice_loss(y, y).loss == pytest.approx(1.0, rel=1e-6)
    assert dice_loss(np.zeros_like(y), y).loss == pytest.approx(2 / 2e-7, rel=1e-6)


@settings(max_examples=100, deadline=None)
@given(arrays(np.float64, (3, 4), elements=st.floats(0, 1)), arrays(np.bool_, (3, 4)))
def test_dice_at_least_one(p, y):
    if not y.any():
        return
    assert dice_loss(p, y).loss >= 1.0 - 1e-6


def test_combined_reductions():
    rng = np.random.default_rng(1)
    p = rng.uniform(0.05, 0.95, (4, 4))
    y = rng.random((4, 4)) < 0.3
    y[0, 0] = True
    assert ce_dice_combined(p, y, 1, 0).loss == pytest.approx(dice_loss(p, y).loss)
    assert ce_dice_combined(p, y, 0, 1).loss == pytest.approx(ce_loss(p, y).loss)
    yb = y.astype(float)
    assert ce_dice_combined(yb, y, 1, 1).loss == pytest.approx(1.0, abs=1e-4)


def _central_difference(fn, p, h=1e-4):
    g = np.zeros_like(p)
    for k in range(p.size):
        a, b = p.copy(), p.copy()
        a.flat[k] += h
        b.flat[k] -= h
        g.flat[k] = (fn(a) - fn(b)) / (2 * h)
    return g


@pytest.mark.parametrize("seed", range(5))
@pytest.mark.parametrize("kind", ["cb_ce", "ce", "dice", "combined"])
def test_baseline_gradients_finite_difference(kind, seed):
    rng = np.random.default_rng(seed)
    p = rng.uniform(0.05, 0.95, (5, 6))
    y = rng.random((5, 6)) < 0.3
    y[0, 0] = True
    fns = {
        "cb_ce": lambda q: cb_ce_loss(q, y),
        "ce": lambda q: ce_loss(q, y),
        "dice": lambda q: dice_loss(q, y),
        "combined": lambda q: ce_dice_combined(q, y, 0.7, 1.3),
    }
    fn = fns[kind]
    numeric = _central_difference(lambda q: fn(q).loss, p)
    np.testing.assert_allclose(fn(p).grad, numeric, rtol=1e-4, atol=1e-10)


# -------------------------------------------------------------- uncertainty weighting


@pytest.mark.parametrize("base", ["cb_ce", "ce", "rank"])
def test_uncertainty_weighting_limits(base):
    rng = np.random.default_rng(3)
    p = rng.random((4, 5))
    y = rng.random((4, 5)) < 0.4
    y[0, 0] = True
    ref = {"cb_ce": cb_ce_loss, "ce": ce_loss, "rank": lambda a, b: rank_loss(a, b)}[base](p, y)
    zero = uncertainty_weighted_loss(p, y, np.zeros_like(p), base)
    assert zero.loss == pytest.approx(ref.loss, rel=1e-12)
    np.testing.assert_allclose(zero.grad, ref.grad, atol=1e-12)
    one = uncertainty_weighted_loss(p, y, np.where(y, 1.0, 0.0), base)
    if base == "rank":
        assert one.loss == 0.0


def test_uncertainty_weighting_half_on_ce():
    p = np.array([[0.3, 0.6, 0.2]])
    y = np.array([[1, 1, 0]])
    c = np.array([[0.5, 0.5, 0.0]])
    full = ce_oracle(p[:, :2], y[:, :2], 1, 1)
    neg = ce_oracle(p[:, 2:], y[:, 2:], 1, 1)
    assert uncertainty_weighted_loss(p, y, c, "ce").loss == pytest.approx(0.5 * full + neg, rel=1e-12)
