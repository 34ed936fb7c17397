import pytest
import sympy as sp

from feedinv.jets import fsym, u, y, y1
from feedinv.parser import ParseError, parse_expression


@pytest.mark.parametrize("text, expected", [
    ("u + y*y1", u + y * y1),
    ("2^3^2", sp.Integer(2) ** 9),
    ("-u^2", -(u**2)),
    ("u**2/4", u**2 / 4),
    ("0.25*u", u / 4),
    ("1e-1*y", y / 10),
    ("sin(y) + cos(y1)*exp(u)", sp.sin(y) + sp.cos(y1) * sp.exp(u)),
    ("(u+y)*(u-y)", (u + y) * (u - y)),
])
def test_parse_values(text, expected):
    assert sp.simplify(parse_expression(text) - expected) == 0


def test_decimals_are_exact():
    e = parse_expression("0.1 + 0.2")
    assert e == sp.Rational(3, 10)


def test_jet_coordinates_need_opt_in():
    assert parse_expression("f_uy1 * f", allow_jets=True) == fsym("uy1") * fsym()
    with pytest.raises(ParseError):
        parse_expression("f_u")


@pytest.mark.parametrize("text, offset", [("u + ", 4), ("u $ y", 2), ("sin(u", 5), ("q + u", 0)])
def test_errors_carry_offsets(text, offset):
    with pytest.raises(ParseError) as exc:
        parse_expression(text)
    assert exc.value.offset == offset
