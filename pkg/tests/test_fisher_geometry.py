import numpy as np
import pytest

from dmcbounds.capacity_solver import capacity_sets
from dmcbounds.channel_model import make_named_channel
from dmcbounds.fisher_geometry import (fisher_matrix, game_saddlepoint, gradient_vectors, identity_audit,
                                       local_optimality_audit, pseudo_inverse_closed_form)

from conftest import random_channels


def test_z_fisher_matrix(zch):
    an = capacity_sets(zch, 1e-3)
    p = an.pi_star_vertices[0]
    fm = fisher_matrix(p, zch, an)
    assert fm.j_full == pytest.approx(np.array([[1.25, 0.625], [0.625, 1.5625]]), abs=1e-9)
    assert fm.j_full @ p == pytest.approx([1.0, 1.0], abs=1e-10)
    assert fm.j_plus @ fm.j_star @ fm.j_plus == pytest.approx(fm.j_plus, abs=1e-10)


def test_pseudo_inverse_forms_agree(bito):
    an = capacity_sets(bito, 1e-3)
    fm = fisher_matrix(an.pi_star_vertices[0], bito, an)
    assert pseudo_inverse_closed_form(fm.j_star, fm.x_star) == pytest.approx(fm.j_plus, abs=1e-8)


def test_bsc_gradients_vanish(bsc):
    an = capacity_sets(bsc, 1e-3)
    gv = gradient_vectors(an.pi_star_vertices[0], bsc, an, 1e-3)
    fm = fisher_matrix(an.pi_star_vertices[0], bsc, an)
    assert float(gv.g @ fm.j_plus @ gv.g) == pytest.approx(0.0, abs=1e-12)


def test_game_value_two_paths(zch):
    an = capacity_sets(zch, 1e-3)
    p = an.pi_star_vertices[0]
    sp = game_saddlepoint(gradient_vectors(p, zch, an, 1e-3), fisher_matrix(p, zch, an))
    assert sp["gamma_star"] == pytest.approx(sp["gamma_star_alt"], abs=1e-10)


@pytest.mark.parametrize("name,params", [("bsc", [0.11]), ("z", [0.5]), ("bito", [0.2]),
                                         ("additive-mod-3", [0.7, 0.2, 0.1])])
def test_identity_audit_named(name, params):
    W = make_named_channel(name, params)
    out = identity_audit(W, 1e-3)
    failed = [k for k, v in out["checks"].items() if not v["passed"]]
    assert out["passed"], failed


def test_identity_audit_random():
    for W in random_channels(5, seed=21):
        assert identity_audit(W, 1e-3)["passed"]


def test_local_optimality_z(zch):
    an = capacity_sets(zch, 1e-3)
    out = local_optimality_audit(an.pi_star_vertices[0], zch, 1e-3, 1e6, 1e-3, an, samples=2000)
    assert out["slack_ok"]
    assert out["gain"] == pytest.approx(out["predicted_gain"], rel=0.1)
