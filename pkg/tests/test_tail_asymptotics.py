import math

import numpy as np
import pytest
from scipy.special import gammaln, logsumexp
from scipy.stats import binom

from dmcbounds.tail_asymptotics import (TailError, bernoulli_model, binomial_tail_check, cgf_eval,
                                        cornish_fisher_quantile, edgeworth_cdf, ld_taylor_audit, llr_model,
                                        make_model, saddlepoint_solve, tilted_tail)


def test_cgf_bernoulli():
    m = bernoulli_model(0.3)
    k, k1, k2, _ = cgf_eval(m, 0.7)
    assert k == pytest.approx(math.log(0.7 + 0.3 * math.exp(0.7)), abs=1e-14)
    pe = 0.3 * math.exp(0.7) / (0.7 + 0.3 * math.exp(0.7))
    assert k1 == pytest.approx(pe, abs=1e-14)
    assert k2 == pytest.approx(pe * (1 - pe), abs=1e-14)


def test_saddlepoint_solve_bernoulli():
    m = bernoulli_model(0.5)
    s = saddlepoint_solve(m, 0.55)
    assert s == pytest.approx(math.log(0.55 / 0.45), abs=1e-10)
    with pytest.raises(TailError):
        saddlepoint_solve(m, 1.5)


def test_binomial_check_matches_scipy():
    r = binomial_tail_check(2000, 0.5, 0.55)
    assert r["k"] == 1100
    assert r["exact"] == pytest.approx(binom.sf(1099, 2000, 0.5), rel=1e-10)
    assert 0.9 < r["ratio"] < 1.0


def test_tilted_tail_lattice_matches_binomial():
    m = bernoulli_model(0.5)
    r = tilted_tail(m, 2000, 0.55)
    assert r.lattice_mode
    assert r.log_prob == pytest.approx(binomial_tail_check(2000, 0.5, 0.55)["log_asymptotic"], abs=1e-10)


def _trinomial_log_tail(n, a):
    # exact log P{sum >= n a} for values {0, 1, sqrt 2} with probs {0.5, 0.3, 0.2}
    i = np.arange(n + 1)[:, None]
    j = np.arange(n + 1)[None, :]
    k = n - i - j
    ok = (k >= 0) & (i + j * math.sqrt(2) >= n * a - 1e-12)
    lp = (gammaln(n + 1) - gammaln(i + 1) - gammaln(j + 1) - gammaln(np.maximum(k, 0) + 1)
          + i * math.log(0.3) + j * math.log(0.2) + k * math.log(0.5))
    return float(logsumexp(lp[ok]))


def test_tilted_tail_nonlattice_against_exact():
    m = make_model([0.0, 1.0, math.sqrt(2)], [0.5, 0.3, 0.2])
    assert not m.lattice.is_lattice
    ratios = [math.exp(_trinomial_log_tail(n, 0.75) - tilted_tail(m, n, 0.75).log_prob)
              for n in (60, 200, 800, 3200)]
    assert all(b > a for a, b in zip(ratios, ratios[1:]))
    assert ratios[-1] == pytest.approx(1.0, abs=0.01)


def test_ld_taylor_audit_passes():
    rng = np.random.default_rng(2)
    for _ in range(5):
        P, Q = rng.dirichlet(np.ones(4)), rng.dirichlet(np.ones(4))
        ta = ld_taylor_audit(P, Q)
        assert ta.passed and ta.lambda3_fd == pytest.approx(ta.lambda3_pred, rel=0.01)


def test_llr_model_mean():
    P, Q = [0.3, 0.7], [0.5, 0.5]
    m = llr_model(P, Q)
    assert np.dot(m.probs, m.values) < 0  # E_Q log P/Q = -D(Q||P)


def test_edgeworth_and_cornish_fisher_consistent():
    eps, skew, n = 1e-2, -0.8, 200
    t = cornish_fisher_quantile(eps, skew, n)
    assert 1 - edgeworth_cdf(t, skew, n) == pytest.approx(eps, rel=0.02)
