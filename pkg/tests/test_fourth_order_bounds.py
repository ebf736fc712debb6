import math

import numpy as np
import pytest

from dmcbounds.channel_model import make_named_channel
from dmcbounds.fourth_order_bounds import (BoundsError, a_eps_bounds, bito_gap, bsc_constants, bsc_gap,
                                           log_volume_bracket, parse_grid, sweep)
from dmcbounds.info_metrics import q_inv


def test_weakly_symmetric_gap_is_one_nat():
    W = make_named_channel("additive-mod-3", [0.7, 0.2, 0.1])
    for eps in (1e-2, 1e-3, 1e-6):
        b = a_eps_bounds(W, eps)
        assert b.gap == pytest.approx(1.0, abs=1e-9)
        assert b.rho == pytest.approx(0.0, abs=1e-12)


def test_bsc_constants_closed_form():
    lam, eps = 0.11, 1e-3
    b = bsc_constants(lam, eps)
    t = q_inv(eps)
    ell = math.log((1 - lam) / lam)
    d = ell
    f = math.log(d / (1 - math.exp(-d)))
    a_star = (2 * lam - 1) / 6 * ell * (t * t - 1) + t * t / 2 + 0.5 * math.log(2 * math.pi * lam * (1 - lam) * ell ** 2)
    assert b.bsc_terms["a_star"] == pytest.approx(a_star, abs=1e-12)
    assert b.a_upper == pytest.approx(a_star - f - d / 2, abs=1e-12)
    k = max(1, math.floor(1 / d + 0.5))
    assert b.a_lower == pytest.approx(a_star - 2 * f - k * d + math.log(k * d), abs=1e-12)
    assert bsc_gap(lam) == pytest.approx(b.gap, abs=1e-12)


def test_bsc_gap_spot_value():
    assert bsc_gap(0.25) == pytest.approx(0.955, abs=5e-3)


def test_bsc_gap_eps_independent():
    gaps = [bsc_constants(0.2, e).gap for e in (1e-1, 1e-3, 1e-6)]
    assert max(gaps) - min(gaps) <= 1e-12


def test_bito_closed_form_gap(bito):
    for eps in (1e-3, 1e-6):
        assert a_eps_bounds(bito, eps).gap == pytest.approx(bito_gap(0.2, eps), abs=1e-8)


def test_z_rejected_unless_advisory(zch):
    with pytest.raises(BoundsError) as exc:
        a_eps_bounds(zch, 1e-3)
    assert exc.value.code == "lattice"
    b = a_eps_bounds(zch, 1e-3, lattice="advisory")
    assert not b.a3_holds and b.gap >= 0


def test_bsc_routed_to_lattice(bsc):
    b = a_eps_bounds(bsc, 1e-3)
    assert b.lattice_mode and b.gap == pytest.approx(bsc_gap(0.11), abs=1e-12)


def test_log_volume_bracket(bito):
    br = log_volume_bracket(bito, 1e-3, 1000)
    assert br["lower"] < br["center"] + br["bounds"].a_upper == br["upper"]


def test_sweep_rows_and_errors():
    rows = sweep("bsc", [0.1, 0.5], [1e-3])
    assert rows[0]["gap"] == pytest.approx(bsc_gap(0.1))
    assert "error" in rows[1] and rows[1]["gap"] is None


def test_parse_grid():
    assert parse_grid("0.1:0.3:0.1") == pytest.approx([0.1, 0.2, 0.3])
    assert parse_grid("0.2,0.4") == pytest.approx([0.2, 0.4])
    with pytest.raises(ValueError):
        parse_grid("0.3:0.1:0.1")


def test_upper_not_below_lower_random():
    rng = np.random.default_rng(4)
    from dmcbounds.channel_model import Dmc
    done = 0
    while done < 10:
        W = Dmc(rng.dirichlet(np.ones(4), size=3))
        try:
            b = a_eps_bounds(W, 1e-3)
        except BoundsError:
            continue
        if b.a_lower is not None:
            assert b.a_upper - b.a_lower >= -1e-9
        done += 1
