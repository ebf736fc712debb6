import math

import numpy as np
import pytest

from dmcbounds.capacity_solver import capacity_sets
from dmcbounds.channel_model import make_named_channel
from dmcbounds.info_metrics import (MetricError, channel_moments, conditional_moments, conditional_renyi,
                                    divergence_moments, f_eps, q_inv, renyi_divergence, zeta_hat_n, zeta_n)

from conftest import random_channels

D_07_05 = 0.7 * math.log(1.4) + 0.3 * math.log(0.6)


def test_q_inv_accuracy():
    from scipy.stats import norm
    for eps in (1e-9, 1e-6, 1e-3, 0.1, 0.5, 0.9):
        assert norm.sf(q_inv(eps)) == pytest.approx(eps, rel=1e-12)
    assert q_inv(1e-3) == pytest.approx(3.090232306167813, abs=1e-13)
    with pytest.raises(MetricError):
        q_inv(0.0)


def test_divergence_moments_examples():
    m = divergence_moments([0.3, 0.7], [0.3, 0.7])
    assert (m.d, m.v, m.t, m.s) == (0.0, 0.0, 0.0, None)
    assert divergence_moments([0.3, 0.7], [0.5, 0.5]).d == pytest.approx(D_07_05, abs=1e-15)
    assert D_07_05 == pytest.approx(0.0822829, abs=5e-7)
    # V(W_1||Q*) for z(0.5): v(theta||q) with q=0.8
    th, q = 0.5, 0.8
    l1, l2 = math.log(th / q), math.log((1 - th) / (1 - q))
    dd = th * l1 + (1 - th) * l2
    v = th * (l1 - dd) ** 2 + (1 - th) * (l2 - dd) ** 2
    assert divergence_moments([0.5, 0.5], [0.8, 0.2]).v == pytest.approx(v, rel=1e-13)
    with pytest.raises(MetricError):
        divergence_moments([0.5, 0.5], [1.0, 0.0])


def test_renyi_examples():
    assert renyi_divergence([0.2, 0.8], [0.2, 0.8], 2.0) == pytest.approx(0.0, abs=1e-15)
    for a in (1 - 1e-4, 1 + 1e-4):
        assert renyi_divergence([0.3, 0.7], [0.5, 0.5], a) == pytest.approx(D_07_05, abs=1e-5)
    assert renyi_divergence([0.0, 1.0], [0.5, 0.5], 2.0) == pytest.approx(math.log(2), abs=1e-15)
    W = make_named_channel("bsc", [0.11])
    assert conditional_renyi(W, [0.5, 0.5], [0.5, 0.5], 2.0) == pytest.approx(
        renyi_divergence(W.row(0), [0.5, 0.5], 2.0), rel=1e-14)


def test_channel_moments_bsc(bsc):
    cm = channel_moments([0.5, 0.5], bsc)
    lam = 0.11
    h2 = -lam * math.log(lam) - (1 - lam) * math.log(1 - lam)
    assert cm.i == pytest.approx(math.log(2) - h2, abs=1e-14)
    assert cm.v_cond == pytest.approx(lam * (1 - lam) * math.log((1 - lam) / lam) ** 2, rel=1e-13)
    assert cm.v_cond == pytest.approx(0.42790, abs=5e-5)
    assert cm.rho == pytest.approx(0.0, abs=1e-12)


def test_channel_moments_bito_rho(bito):
    an = capacity_sets(bito, 1e-3)
    cm = channel_moments(an.pi_star_vertices[0], bito)
    th = 0.2
    assert cm.rho == pytest.approx(th * an.c ** 2 / ((1 - th) * cm.v_cond), rel=1e-10)


def test_total_variance_random():
    rng = np.random.default_rng(3)
    for W in random_channels(100, seed=5):
        P = rng.dirichlet(np.ones(W.nx))
        cm = channel_moments(P, W)
        assert abs(cm.v_uncond - cm.v_rev - cm.var_rev_mean) <= 1e-10
        assert 0.0 <= cm.rho <= 1.0


def test_moments_agree_on_pi():
    for W in random_channels(20, seed=9) + [make_named_channel("z", [0.5])]:
        an = capacity_sets(W, 1e-3)
        for v in an.pi_vertices:
            cm = channel_moments(v, W)
            assert abs(cm.v_uncond - cm.v_cond) <= 1e-9
            assert abs(cm.t_uncond - cm.t_cond) <= 1e-9


def test_f_eps_examples():
    assert f_eps((0.0, 1.0 / (2 * math.pi), 0.0), 0.5) == pytest.approx(0.0, abs=1e-15)
    assert f_eps((0.0, 1.0, 0.0), 0.5) == pytest.approx(0.5 * math.log(2 * math.pi), abs=1e-15)
    t = q_inv(1e-3)
    assert f_eps((0.0, 2.0, 1.0), 1e-3) == pytest.approx(0.5 * t * t + (t * t - 1) / 12 + 0.5 * math.log(4 * math.pi))
    with pytest.raises(MetricError):
        f_eps((0.0, 0.0, 0.0), 0.1)


def test_zeta_n_examples(bsc):
    p, q = [0.5, 0.5], [0.5, 0.5]
    cm = conditional_moments(p, q, bsc)
    assert zeta_n(p, q, bsc, 1e-3, 0) == pytest.approx(f_eps(cm, 1e-3), abs=1e-14)
    t = q_inv(1e-3)
    want = 1000 * cm.d - math.sqrt(1000 * cm.v) * t + f_eps(cm, 1e-3)
    assert zeta_n(p, None, bsc, 1e-3, 1000) == pytest.approx(want, abs=1e-10)
    assert cm.d == pytest.approx(0.346632, abs=5e-7)


def test_zeta_n_saddlepoint_ordering(zch):
    an = capacity_sets(zch, 1e-3)
    p0 = an.pi_vertices[0]
    rng = np.random.default_rng(0)
    for _ in range(20):
        Q = rng.dirichlet(np.ones(2))
        gap = conditional_moments(p0, Q, zch).d - an.c
        assert gap >= -1e-12
        kl = divergence_moments(an.q_star, Q).d
        assert gap == pytest.approx(kl, abs=1e-12)
        P = rng.dirichlet(np.ones(2))
        assert conditional_moments(P, an.q_star, zch).d <= an.c + 1e-12


def test_zeta_hat_branches(zch):
    an = capacity_sets(zch, 1e-3)
    p = an.pi_star_vertices[0]
    val, br = zeta_hat_n(p, an.q_star, zch, 1e-3, 1000, 0.1, an)
    assert br == "near" and val == pytest.approx(zeta_n(p, an.q_star, zch, 1e-3, 1000))
    val, br = zeta_hat_n([0.0, 1.0], an.q_star, zch, 1e-3, 1000, 1e-3, an)
    cm = conditional_moments([0.0, 1.0], an.q_star, zch)
    assert br == "far"
    assert val == pytest.approx(1000 * cm.d + math.sqrt(2000 * cm.v / (1 - 1e-3)) - math.log((1 - 1e-3) / 2))


def test_far_branch_root_bound_for_large_eps(zch):
    an = capacity_sets(zch, 0.9)
    n = 1000
    root = math.sqrt(2 * n * an.v_min / (1 - 0.9))
    # with t_eps < 0 the far branch is dominated by -sqrt(n V_max) t_eps / 2 only for moderate eps;
    # the inequality as printed holds when 2/(1-eps) <= t_eps^2/4
    t = q_inv(0.9)
    holds = math.sqrt(2 / 0.1) <= -0.5 * t
    assert (root <= -0.5 * math.sqrt(n * an.v_max) * t) == holds
