import numpy as np
import pytest

from feedinv.calibration import (affine_ansatz_basis, invariance_residuals, invariance_suite,
                                 syzygy_expression)
from feedinv.corpus import random_regular_system, well_conditioned_points
from feedinv.frame import default_frame
from feedinv.jets import fsym
from feedinv.pseudogroup import random_feedback

from conftest import FEEDBACK_BOX


def test_residual_separates_invariants_from_coordinates(rng):
    fr = default_frame()
    F = random_regular_system(2)
    phi = random_feedback(2, box=FEEDBACK_BOX, strength=0.5)
    pts = well_conditioned_points(F, rng, 5)
    inv, coord = invariance_residuals([fr.J_u, fsym("u")], F, phi, pts)
    assert np.max(inv) < 1e-10
    assert np.max(coord) > 1e-3


def test_short_invariance_suite():
    rows = invariance_suite(["J", "K", "L"], trials=3, seed=5)
    assert len(rows) == 9
    assert max(r.residual for r in rows) < 1e-7


def test_basis_is_pruned_to_independent_terms():
    full = affine_ansatz_basis()
    pruned = full.pruned()
    assert 0 < len(pruned) <= len(full)
    assert "1" in pruned.labels


@pytest.mark.parametrize("candidate", ["J_u", "J_y1"])
def test_syzygy_candidates_build(candidate):
    assert syzygy_expression(candidate).free_symbols
