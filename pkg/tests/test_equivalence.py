import json

import numpy as np
import pytest
import sympy as sp

from feedinv import equivalence as eq
from feedinv.corpus import random_irregular_system, random_regular_system
from feedinv.jets import SystemF, u, y
from feedinv.pseudogroup import apply_feedback, random_feedback

from conftest import FEEDBACK_BOX

SMALL = "u=0.5:1.5:8,y=-1:1:8,y1=0.5:1.5:8"


@pytest.fixture(scope="module")
def pair():
    F = random_regular_system(0)
    phi = random_feedback(0, box=FEEDBACK_BOX, strength=0.5)
    return F, phi, apply_feedback(F, phi)


@pytest.fixture(scope="module")
def sigma_F(pair):
    return eq.sample_signature(pair[0], eq.Domain.parse(SMALL))


def test_domain_parse_and_grid():
    d = eq.Domain.parse("u=0.5:1.5:3,y=-1:1:5,y1=0.5:1.5:3")
    assert d.grid().shape == (45, 3)
    assert d.interior().shape == (3, 3)
    assert d.box == ((0.5, 1.5), (-1.0, 1.0), (0.5, 1.5))
    assert eq.Domain.parse(str(d)) == d


@pytest.mark.parametrize("bad", ["u=0:1:1,y=0:1:2,y1=1:2:2", "u=1:0:3,y=0:1:2,y1=1:2:2",
                                 "u=0:1:3,y=0:1:2", "u=0:1:3,y=0:1:2,y1=1:2:2,z=0:1:2"])
def test_domain_rejects(bad):
    with pytest.raises(ValueError):
        eq.Domain.parse(bad)


def test_F_equal_u_is_a_chart_failure():
    d = eq.Domain.parse("u=0.5:1.5:4,y=-1:1:4,y1=0.5:1.5:4")
    A = eq.sample_signature(SystemF(u), d)
    assert not A.chart_regular
    v = eq.compare_signatures(A, A)
    assert v.verdict == "inconclusive" and v.reason == "chart-failure"


def test_self_comparison_is_exact(sigma_F):
    assert sigma_F.chart_regular
    v = eq.compare_signatures(sigma_F, sigma_F)
    assert v.verdict == "equivalent"
    assert v.max_deviation == 0.0


def test_round_trip_and_perturbation(pair, sigma_F):
    F, phi, G = pair
    d = eq.Domain.parse(SMALL)
    v = eq.compare_signatures(sigma_F, eq.sample_signature(G, d))
    assert v.verdict == "equivalent" and v.max_deviation <= 1e-4
    H = SystemF(G.expr + y / 10)
    w = eq.compare_signatures(sigma_F, eq.sample_signature(H, d))
    assert w.verdict != "equivalent"


def test_sigma_equivariance(pair):
    from feedinv.pseudogroup import transform_point

    F, phi, G = pair
    p = np.array([[1.0, 0.1, 0.9], [0.7, -0.4, 1.2]])
    q = np.array(transform_point(phi, tuple(p.T))).T
    np.testing.assert_allclose(eq.signature_at(G, p), eq.signature_at(F, q), rtol=1e-9, atol=1e-9)


def test_csv_and_json_round_trip(sigma_F, tmp_path):
    path = tmp_path / "sig.csv"
    sigma_F.to_csv(str(path))
    header = path.read_text().splitlines()[0]
    assert header == "u,y,y1,j,j1,j3,j11,j13,j33,k,l"
    back = eq.SignatureManifold.from_csv(str(path))
    np.testing.assert_allclose(back.values, sigma_F.values, rtol=1e-15)
    doc = sigma_F.to_json()
    assert json.loads(doc)["chart_rank_stats"]["full_rank_fraction"] >= 0.99
    again = eq.SignatureManifold.from_json(doc)
    np.testing.assert_allclose(again.base, sigma_F.base)
    assert str(again.system) == str(sigma_F.system)


def test_verdict_json():
    v = eq.EquivalenceVerdict("inconclusive", float("nan"), 0.0, "no-overlap")
    d = json.loads(v.to_json())
    assert d["max_deviation"] is None and d["reason"] == "no-overlap"


def test_recovery_identity():
    F = random_regular_system(1)
    r = eq.recover_transform(F, F, (1.0, 0.2, 0.9))
    np.testing.assert_allclose(r.values, (1.0, 0.2, 1.0, 0.0), atol=1e-10)


def test_recovery_matches_truth(pair):
    F, phi, G = pair
    p = (1.1, 0.3, 0.8)
    r = eq.recover_transform(F, G, p, box=eq.Domain.parse(SMALL).box)
    truth = [float(e.subs({u: p[0], y: p[1]})) for e in (phi.U, phi.Y, phi.dY, phi.ddY)]
    np.testing.assert_allclose(r.values, truth, atol=1e-8)
    assert np.max(np.abs(eq.h_residual(F, G, p, r.values))) < 1e-9


def test_spurious_roots_are_flagged(pair):
    F, phi, G = pair
    d = eq.Domain.parse("u=0.5:1.5:5,y=-1:1:5,y1=0.5:1.5:5")
    pts = d.interior()
    truth = sp.lambdify((u, y), [phi.U, phi.Y, phi.dY, phi.ddY])
    bad = {3, 10, 20}

    def guess(p):
        t = np.array(truth(p[0], p[1]), dtype=float)
        i = int(np.argmin(np.abs(pts - p).sum(1)))
        # mirrored seed converges to a root with Y' < 0
        return t * np.array([-1, 1, -1, 1]) if i in bad else t

    rep = eq.verify_smoothness_conditions(F, G, d, guess=guess)
    assert set(np.flatnonzero(rep.flagged)) == bad
    assert not rep.passed


def test_irregular_mode_is_heuristic():
    F = random_irregular_system(0)
    d = eq.Domain.parse("u=0.5:1.5:6,y=-1:1:6,y1=0.5:1.5:6")
    A = eq.sample_signature(F, d, mode="irregular")
    assert A.metadata["heuristic"]
    assert len(A.chart) == 3 and A.chart_regular
    assert json.loads(eq.compare_signatures(A, A).to_json())["heuristic"]
