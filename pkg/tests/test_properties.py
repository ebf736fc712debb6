import math

import numpy as np
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from dmcbounds.capacity_solver import capacity_sets
from dmcbounds.channel_model import Dmc, lattice_of_values, output_distribution, reverse_channel
from dmcbounds.fourth_order_bounds import BoundsError, a_eps_bounds, bsc_constants
from dmcbounds.info_metrics import channel_moments, divergence_moments
from dmcbounds.np_testing import ProductTest, np_beta_exact
from dmcbounds.tail_asymptotics import cgf_eval, large_dev_fn, make_model

SETTINGS = settings(max_examples=40, deadline=None)


def _pmf(draw, k, floor=1e-3):
    w = np.array(draw(st.lists(st.floats(floor, 1.0), min_size=k, max_size=k)))
    return w / w.sum()


@st.composite
def channels(draw, nx=(2, 4), ny=(2, 4)):
    a = draw(st.integers(*nx))
    b = draw(st.integers(*ny))
    return Dmc(np.array([_pmf(draw, b) for _ in range(a)]))


@st.composite
def channel_and_input(draw):
    W = draw(channels())
    return W, _pmf(draw, W.nx)


@SETTINGS
@given(channel_and_input())
def test_output_mass_preserved(cp):
    W, P = cp
    q = output_distribution(P, W).probs
    assert abs(q.sum() - 1.0) <= 1e-12 and np.all(q >= 0)


@SETTINGS
@given(channel_and_input())
def test_reverse_channel_marginal(cp):
    W, P = cp
    R = reverse_channel(P, W).matrix
    q = P @ W.matrix
    assert np.allclose(q @ R, P, atol=1e-12)
    assert np.allclose(R.sum(axis=1), 1.0, atol=1e-12)


@SETTINGS
@given(st.lists(st.integers(-50, 50), min_size=2, max_size=6, unique=True),
       st.floats(0.01, 3.0), st.floats(-5.0, 5.0))
def test_lattice_shift_invariance(ks, span, shift):
    ks = sorted(ks)
    g = math.gcd(*[k - ks[0] for k in ks[1:]])
    vals = np.array(ks, dtype=float) * span
    a = lattice_of_values(vals)
    b = lattice_of_values(vals + shift)
    assert a.is_lattice and b.is_lattice
    assert math.isclose(a.span, g * span, rel_tol=1e-6) and math.isclose(b.span, a.span, rel_tol=1e-9)


@SETTINGS
@given(channel_and_input())
def test_total_variance(cp):
    W, P = cp
    cm = channel_moments(P, W)
    assert abs(cm.v_uncond - cm.v_rev - cm.var_rev_mean) <= 1e-10 * max(1.0, cm.v_uncond)
    if cm.rho is None:
        assert cm.v_uncond <= 1e-12  # rho is undefined for a zero-variance density
    else:
        assert -1e-12 <= cm.rho <= 1 + 1e-12


@SETTINGS
@given(st.integers(2, 5).flatmap(lambda k: st.tuples(st.just(k), st.data())))
def test_cgf_convex_and_rate_nonnegative(kd):
    k, data = kd
    vals = np.array(data.draw(st.lists(st.floats(-3, 3), min_size=k, max_size=k, unique=True)))
    assume(np.ptp(vals) > 1e-3)
    probs = _pmf(data.draw, k, floor=0.05)
    m = make_model(vals, probs)
    ss = np.linspace(-2, 2, 9)
    kap = np.array([cgf_eval(m, s)[0] for s in ss])
    assert np.all(np.diff(kap, 2) >= -1e-10)
    a = float(data.draw(st.floats(0.05, 0.95))) * (vals.max() - m.mean) + m.mean
    lam, s, _ = large_dev_fn(m, a)
    assert lam >= -1e-12 and s >= 0


@SETTINGS
@given(channels(nx=(2, 3), ny=(2, 4)), st.sampled_from([1e-2, 1e-3, 1e-6]))
def test_gap_nonnegative(W, eps):
    try:
        b = a_eps_bounds(W, eps, lattice="advisory")
    except BoundsError:
        return
    if b.a_lower is not None:
        assert b.a_upper - b.a_lower >= -1e-9


@SETTINGS
@given(channels(nx=(2, 3), ny=(2, 4)), st.randoms(use_true_random=False))
def test_permutation_invariance(W, rnd):
    rows = list(range(W.nx))
    cols = list(range(W.ny))
    rnd.shuffle(rows)
    rnd.shuffle(cols)
    W2 = Dmc(W.matrix[np.ix_(rows, cols)])
    a, b = capacity_sets(W, 1e-3), capacity_sets(W2, 1e-3)
    assert abs(a.c - b.c) <= 1e-9
    assert abs(a.v_min - b.v_min) <= 1e-7 and abs(a.v_max - b.v_max) <= 1e-7


@SETTINGS
@given(st.floats(0.01, 0.49), st.sampled_from([0.3, 1e-2, 1e-4]), st.sampled_from([1e-3, 1e-6]))
def test_bsc_gap_eps_independent(lam, e1, e2):
    assert abs(bsc_constants(lam, e1).gap - bsc_constants(lam, e2).gap) <= 1e-9


@settings(max_examples=25, deadline=None)
@given(st.integers(2, 3).flatmap(lambda k: st.tuples(st.just(k), st.data())), st.integers(3, 12))
def test_beta_monotone_convex_and_sandwiched(kd, n):
    k, data = kd
    P = _pmf(data.draw, k, floor=0.02)
    Q = _pmf(data.draw, k, floor=0.02)
    test = ProductTest.iid(P, Q, n)
    alphas = np.linspace(0.05, 0.95, 13)
    betas = np.array([np_beta_exact(test, a).beta for a in alphas])
    assert np.all(np.diff(betas) >= -1e-12)
    assert np.all(np.diff(betas, 2) >= -1e-10)
    # 0 <= beta_alpha <= alpha: the randomized trivial test achieves alpha
    assert np.all(betas <= alphas + 1e-12) and np.all(betas >= 0)


@settings(max_examples=25, deadline=None)
@given(st.integers(2, 4).flatmap(lambda k: st.tuples(st.just(k), st.data())), st.integers(1, 10),
       st.floats(0.01, 0.99))
def test_beta_of_same_law(kd, n, alpha):
    k, data = kd
    P = _pmf(data.draw, k)
    assert abs(np_beta_exact(ProductTest.iid(P, P, n), alpha).beta - alpha) <= 1e-10


@SETTINGS
@given(st.integers(2, 5).flatmap(lambda k: st.tuples(st.just(k), st.data())))
def test_divergence_nonnegative(kd):
    k, data = kd
    P = _pmf(data.draw, k)
    Q = _pmf(data.draw, k)
    m = divergence_moments(P, Q)
    assert m.d >= -1e-15 and m.v >= -1e-15
