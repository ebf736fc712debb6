import itertools
import math

import numpy as np
import pytest

from dmcbounds import np_testing as npt
from dmcbounds.channel_model import make_named_channel
from dmcbounds.np_testing import (NPError, ProductTest, aligned_alphas, converse_beta_bound,
                                  llr_sum_distribution, nearest_aligned_alpha, np_baselines,
                                  np_beta_asymptotic, np_beta_exact, type_counts)


def _brute_beta(pairs, alpha):
    # enumerate all outcome sequences, then the randomized LR test
    outcomes = []
    for seq in itertools.product(*[range(len(p)) for p, _ in pairs]):
        pp = math.prod(p[s] for (p, _), s in zip(pairs, seq))
        qq = math.prod(q[s] for (_, q), s in zip(pairs, seq))
        if pp > 0:
            outcomes.append((math.log(pp / qq), pp, qq))
    outcomes.sort(key=lambda o: -o[0])
    beta, need = 0.0, alpha
    i = 0
    while need > 1e-15 and i < len(outcomes):
        z = outcomes[i][0]
        grp = [o for o in outcomes[i:] if abs(o[0] - z) < 1e-9]
        pm = sum(o[1] for o in grp)
        qm = sum(o[2] for o in grp)
        take = min(1.0, need / pm)
        beta += take * qm
        need -= take * pm
        i += len(grp)
    return beta


def test_exact_matches_brute_force():
    rng = np.random.default_rng(7)
    pairs = [(rng.dirichlet(np.ones(3)), rng.dirichlet(np.ones(3))) for _ in range(5)]
    test = ProductTest.from_pairs(pairs)
    for alpha in (0.3, 0.9, 0.99):
        assert np_beta_exact(test, alpha).beta == pytest.approx(_brute_beta(pairs, alpha), rel=1e-9)


def test_beta_of_identical_laws_is_alpha():
    test = ProductTest.iid([0.2, 0.3, 0.5], [0.2, 0.3, 0.5], 8)
    for alpha in (0.1, 0.5, 0.95):
        assert np_beta_exact(test, alpha).beta == pytest.approx(alpha, abs=1e-12)


def test_llr_distribution_normalised():
    test = ProductTest.iid([0.3, 0.7], [0.5, 0.5], 50)
    vals, lq, lp = llr_sum_distribution(test)
    assert np.all(np.diff(vals) > 0)
    assert math.exp(np.logaddexp.reduce(lp)) == pytest.approx(1.0, abs=1e-12)
    assert math.exp(np.logaddexp.reduce(lq)) == pytest.approx(1.0, abs=1e-12)


def test_moments_average():
    test = ProductTest.from_pairs([([0.3, 0.7], [0.5, 0.5]), ([0.5, 0.5], [0.5, 0.5])])
    mo = npt.test_moments(test)
    d1 = 0.3 * math.log(0.6) + 0.7 * math.log(1.4)
    assert mo.d == pytest.approx(d1 / 2, abs=1e-14)
    with pytest.raises(NPError):
        npt.test_moments(ProductTest.iid([0.5, 0.5], [1.0, 0.0], 3))


def test_type_counts():
    assert list(type_counts([0.5, 0.5], 1001)) in ([501, 500], [500, 501])
    assert type_counts([0.2, 0.3, 0.5], 7).sum() == 7


def test_aligned_alpha_needs_no_randomisation():
    test = ProductTest.iid([0.89, 0.11], [0.5, 0.5], 200)
    a = nearest_aligned_alpha(test, 0.999)
    r = np_beta_exact(test, a)
    assert r.randomization == pytest.approx(1.0, abs=1e-9) or r.randomization <= 1e-9
    assert np.all(np.diff(aligned_alphas(test)) >= 0)


def test_bsc_exact_vs_asymptotic():
    W = make_named_channel("bsc", [0.11])
    test = ProductTest.composition(type_counts([0.5, 0.5], 1000), W, [0.5, 0.5])
    dist = llr_sum_distribution(test)
    a = nearest_aligned_alpha(test, 0.999, dist)
    ex = np_beta_exact(test, a, dist)
    asy = np_beta_asymptotic(test, a)
    assert asy["lattice"]
    assert abs(ex.log_beta - asy["log_beta"]) <= 0.1


def test_baselines_bracket():
    test = ProductTest.iid([0.89, 0.11], [0.5, 0.5], 1000)
    ex = np_beta_exact(test, 0.999)
    base = np_baselines(test, 0.999)
    assert base["chebyshev_lower"] <= ex.log_beta
    s = base["strassen"]
    if s["valid"]:
        assert s["lower"] <= ex.log_beta <= s["upper"]


def test_converse_bound_holds():
    from dmcbounds.capacity_solver import capacity_sets
    W = make_named_channel("bsc", [0.11])
    an = capacity_sets(W, 1e-2)
    n = 400
    test = ProductTest.composition(type_counts([0.5, 0.5], n), W, an.q_star)
    ex = np_beta_exact(test, 1 - 1e-2)
    cb = converse_beta_bound([0.5, 0.5], [0.5, 0.5], W, 1e-2, n, 0.1, an)
    assert -ex.log_beta <= cb["bound"]
