import dataclasses
import math

import numpy as np
import pytest

from dmcbounds.channel_model import make_named_channel
from dmcbounds.coding_sim import (SimulationError, achievable_rate, bivariate_prefactor, bsc_ensemble_error,
                                  clopper_pearson, simulate_random_code, term2_estimate, union_bound_terms)
from dmcbounds.info_metrics import phi


def test_bivariate_prefactor_rho_zero_and_errors():
    t = 2.0
    assert bivariate_prefactor(0.0, t) == pytest.approx(phi(t) ** 2, rel=1e-14)
    with pytest.raises(SimulationError):
        bivariate_prefactor(1.0, t)


def test_bsc_rate_lattice_spec(bsc):
    spec = achievable_rate(bsc, 1e-2, 500)
    assert spec.lattice_mode and spec.m >= 2
    assert spec.log_m <= spec.log_volume + 1e-12
    assert spec.input_dist == pytest.approx([0.5, 0.5])


def test_nonlattice_rate_input_law(bito):
    spec = achievable_rate(bito, 1e-2, 400)
    assert spec.input_dist.sum() == pytest.approx(1.0)
    assert abs(spec.h.sum()) <= 1e-9


def test_literal_matches_exact_bsc(bsc):
    spec = achievable_rate(bsc, 0.1, 24)
    res = simulate_random_code(spec, bsc, 20000, seed=3, mode="literal", with_terms=False)
    exact = bsc_ensemble_error(spec, 0.11)
    lo, hi = res.ci95
    assert lo <= exact <= hi


def test_conditional_matches_exact_bsc(bsc):
    spec = achievable_rate(bsc, 1e-2, 200)
    res = simulate_random_code(spec, bsc, 40000, seed=5, mode="conditional", with_terms=False)
    exact = bsc_ensemble_error(spec, 0.11)
    assert res.mean_conditional_error == pytest.approx(exact, rel=0.05)
    assert res.ci95[0] <= exact <= res.ci95[1]


def test_determinism(bsc):
    spec = achievable_rate(bsc, 1e-2, 200)
    a = simulate_random_code(spec, bsc, 5000, seed=9, mode="conditional")
    b = simulate_random_code(spec, bsc, 5000, seed=9, mode="conditional")
    assert a.as_dict() == b.as_dict()


def test_error_monotone_in_m(bsc):
    spec = achievable_rate(bsc, 1e-2, 200)
    rates = []
    for m in (spec.m // 4, spec.m, spec.m * 4):
        s = dataclasses.replace(spec, m=m, log_m=math.log(m))
        rates.append(simulate_random_code(s, bsc, 4000, seed=1, mode="conditional", with_terms=False).errors)
    assert rates[0] <= rates[1] <= rates[2]


def test_literal_budget_enforced(bsc):
    spec = achievable_rate(bsc, 1e-2, 500)
    with pytest.raises(SimulationError):
        simulate_random_code(spec, bsc, 10, mode="literal")


def test_union_terms_and_term2(bsc):
    spec = achievable_rate(bsc, 1e-2, 200)
    ut = union_bound_terms(spec, bsc, 20000, seed=2)
    assert 0 <= ut["term1"]["estimate"] <= 1
    t2 = term2_estimate(spec, bsc, 20000, seed=2, method="conditional")
    assert t2["method"] == "conditional" and t2["rel_se"] < 0.05
    tilted = term2_estimate(spec, bsc, 20000, seed=2, method="tilted")
    assert tilted["estimate"] > 0


def test_clopper_pearson():
    lo, hi = clopper_pearson(0, 100)
    assert lo == 0.0 and 0 < hi < 0.05
    lo, hi = clopper_pearson(50, 100)
    assert lo < 0.5 < hi
