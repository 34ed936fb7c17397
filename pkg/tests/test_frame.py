import numpy as np
import pytest
import sympy as sp

from feedinv.corpus import random_irregular_system
from feedinv.frame import (IRREGULAR_NAMES, REGULAR_NAMES, classify, default_frame, tresse_derivatives)
from feedinv.jets import SystemF, fsym, jet_of_system, random_jet, simplify, u, y1


@pytest.fixture(scope="module")
def fr():
    return default_frame()


def test_basic_invariant_literal(fr):
    f = fsym()
    assert simplify(fr.J - (y1 * fsym("y1") - 2 * f) / y1) == 0


def test_values_for_F_equal_u(fr):
    # hand computation: J = -2u/y1, J_u = (y1/f_u) D_u J, J_y1 = y1 D_y1 J
    jp = jet_of_system(SystemF(u), (1.0, 0.0, 2.0), 3)
    vals = fr.catalog.evaluate(jp, ["J", "J_u", "J_y1"])
    assert vals == pytest.approx({"J": -1.0, "J_u": -2.0, "J_y1": 1.0})


def test_nabla_y_kills_J(fr):
    assert simplify(fr.nabla_y(fr.J)) == 0


def test_structure_coefficients_fixed_entries(fr):
    c = fr.structure
    assert simplify(c[("u", "y1", "u")] - (1 + fr.J_u)) == 0
    assert c[("u", "y", "y1")] == 1
    assert c[("y", "y1", "y")] == -1
    assert simplify(c[("y", "y1", "y1")] + fr.J) == 0


def test_catalog_contents(fr):
    names = set(fr.catalog.names())
    assert set(REGULAR_NAMES) <= names
    assert {"J", "M"} <= names
    assert set(IRREGULAR_NAMES) <= names | {"J_y1"}


def test_M_restores_factor_f(fr):
    # first term of M is y1 * f * f_y1y1y1
    coeff = sp.expand(fr.M).coeff(fsym("y1y1y1"))
    assert simplify(coeff - y1 * fsym()) == 0


@pytest.mark.parametrize("text, regular, irregular", [
    ("u", 8, False),  # J_u = -2 everywhere
    ("y1^2*u", 0, True),  # J = 0
])
def test_classify_simple_systems(text, regular, irregular):
    pts = np.array([[a, b, c] for a in (0.5, 1) for b in (0, 1) for c in (0.5, 1)])
    rep = classify(SystemF.parse(text), pts)
    assert rep.counts["weakly_regular"] == 8
    assert rep.counts["regular"] == regular
    assert rep.irregular is irregular


def test_singular_points_flagged():
    rep = classify(SystemF.parse("u + y1^3"), [[1.0, 0.0, 0.0], [1.0, 0.0, 1.0]])
    assert rep.singular.tolist() == [True, False]
    assert rep.regular.tolist() == [False, True]


def test_irregular_family_detected():
    F = random_irregular_system(3)
    pts = np.random.default_rng(0).uniform([0.5, -1, 0.5], [1.5, 1, 1.5], (50, 3))
    rep = classify(F, pts)
    assert rep.irregular and rep.max_abs_J_u < 1e-10


def test_tresse_lemma_decomposition():
    jp = random_jet(np.random.default_rng(5), 4)
    res = tresse_derivatives().decomposition_residual(jp)
    assert np.max(np.abs(res)) < 1e-9
