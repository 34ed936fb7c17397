import pytest

from feedinv.ledger import build_ledger, printed_fixtures, syzygy_order4_dependence


@pytest.fixture(scope="module")
def ledger():
    return build_ledger(trials=1, syzygy=False)


def test_fixture_set():
    assert set(printed_fixtures()) == {"nabla_y coefficient", "J_u", "J_y1", "K", "L", "M"}


def test_alpha_reading(ledger):
    e = ledger["nabla_y coefficient"]
    assert not e.symbolic_match
    assert e.variants["z -> y1, leading f_uy1 -> f_yy1"]["match"]
    assert not e.variants["z -> y1"]["match"]


@pytest.mark.parametrize("name", ["J_u", "J_y1", "K", "M"])
def test_printed_forms_fail_invariance(ledger, name):
    e = ledger[name]
    assert e.printed_residual > 1e-3
    assert e.normative_residual < 1e-10


def test_printed_L_is_a_different_invariant(ledger):
    e = ledger["L"]
    assert not e.symbolic_match
    assert e.printed_residual < 1e-10


def test_table_renders(ledger):
    t = ledger.table()
    assert "nabla_y coefficient" in t and "printed form is not invariant" in t


def test_second_syzygy_has_order_four_leftovers():
    # a function of (J, J_u, J_y1) cannot depend on fourth-order coordinates
    assert syzygy_order4_dependence("J_u") > 1e-3
    assert syzygy_order4_dependence("J_y1") > 1e-3
