import numpy as np
import pytest
import sympy as sp

from feedinv.corpus import random_regular_system
from feedinv.jets import SystemF, jet_of_system, random_jet, u, y, y1
from feedinv.pseudogroup import (FeedbackError, FeedbackMap, apply_feedback, expected_orbit_dimension,
                                 orbit_dimension, orbit_report, random_feedback, transform_point)

from conftest import FEEDBACK_BOX


def test_scaling_example():
    G = apply_feedback(SystemF(u), FeedbackMap.parse("2*y", "u"))
    assert sp.simplify(G.expr - u / 2) == 0


def test_identity_is_neutral():
    F = random_regular_system(0)
    assert sp.simplify(apply_feedback(F, FeedbackMap.identity()).expr - F.expr) == 0


def test_curvature_term():
    # Y = exp(y): (1/Y') F(Y, Y' y1, U) - (Y''/Y') y1^2 with F = 0
    G = apply_feedback(SystemF(sp.Integer(0)), FeedbackMap(sp.exp(y), u))
    assert sp.simplify(G.expr + y1**2) == 0


def test_composition_is_contravariant():
    # applying a then b equals applying a.after(b)
    F = random_regular_system(3)
    a = random_feedback(1, box=FEEDBACK_BOX, strength=0.3)
    b = random_feedback(2, box=FEEDBACK_BOX, strength=0.3)
    lhs = apply_feedback(apply_feedback(F, a), b)
    rhs = apply_feedback(F, a.after(b))
    p = (1.0, 0.2, 0.9)
    assert jet_of_system(lhs, p, 1)["f_u"] == pytest.approx(jet_of_system(rhs, p, 1)["f_u"], rel=1e-12)


def test_bad_maps_rejected():
    with pytest.raises(FeedbackError):
        FeedbackMap(u * y, u)
    with pytest.raises(FeedbackError):
        apply_feedback(SystemF(u), FeedbackMap(sp.Integer(1), u))


@pytest.mark.parametrize("seed", range(5))
def test_random_feedback_is_monotone_on_box(seed):
    phi = random_feedback(seed, box=FEEDBACK_BOX, strength=0.5)
    uu, yy = np.meshgrid(np.linspace(0.5, 1.5, 21), np.linspace(-1, 1, 21))
    dY = sp.lambdify(y, phi.dY, "numpy")(yy)
    dU = sp.lambdify((u, y), phi.dU, "numpy")(uu, yy)
    assert np.min(dY) >= 0.1 and np.min(dU) >= 0.1


def test_transform_point_and_inverse():
    phi = random_feedback(4, box=FEEDBACK_BOX, strength=0.5)
    p = (1.1, 0.3, 0.8)
    q = transform_point(phi, p)
    assert phi.inverse_point(q) == pytest.approx(p, abs=1e-12)


@pytest.mark.parametrize("k, dim", [(1, 6), (2, 10), (3, 15)])
def test_orbit_dimensions_at_random_jets(k, dim):
    assert expected_orbit_dimension(k) == dim
    rng = np.random.default_rng(k)
    for _ in range(3):
        jp = random_jet(rng, k)
        assert orbit_dimension(jp, k) == dim


def test_pure_order_increments():
    jp = random_jet(np.random.default_rng(9), 3)
    c = [orbit_report(jp, k).corank for k in (1, 2, 3)]
    assert c[0] == 1 and c[1] - c[0] == 2 and c[2] - c[1] == 5


def test_point_composition_law():
    a = random_feedback(5, box=FEEDBACK_BOX, strength=0.5)
    b = random_feedback(6, box=FEEDBACK_BOX, strength=0.5)
    p = (0.9, -0.3, 1.2)
    lhs = transform_point(b, transform_point(a, p))
    assert lhs == pytest.approx(transform_point(b.after(a), p), rel=1e-12)


@pytest.mark.parametrize("seed", range(3))
def test_chain_rule_jets_match_direct_differentiation(seed):
    from feedinv.jets import multi_indices
    from feedinv.pseudogroup import transformed_jet

    F = random_regular_system(seed)
    phi = random_feedback(seed)
    pts = np.random.default_rng(seed).uniform([0.5, -1, 0.5], [1.5, 1, 1.5], (10, 3))
    a = transformed_jet(F, phi, tuple(pts.T), 3)
    b = jet_of_system(apply_feedback(F, phi), tuple(pts.T), 3)
    for mi in multi_indices(3):
        np.testing.assert_allclose(a[mi], b[mi], rtol=1e-11, atol=1e-11)
