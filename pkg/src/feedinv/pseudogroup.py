"""Feedback transformations, feedback vector fields and orbit dimensions."""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Sequence

import numpy as np
import sympy as sp
from scipy import optimize

from .jets import (
    BASE_NAMES,
    JetPoint,
    MissingJetError,
    MultiIndex,
    SystemF,
    evaluate_many,
    expression_order,
    fsym,
    jet_coordinates,
    jet_symbol,
    multi_indices,
    partial_derivative,
    total_derivative,
    u,
    y,
    y1,
)

f = fsym()
f_u, f_y, f_y1 = fsym("u"), fsym("y"), fsym("y1")

_U, _Y, _Z = sp.symbols("U_ Y_ Z_")


class FeedbackError(ValueError):
    pass


@dataclass(frozen=True)
class FeedbackMap:
    """(u, y) -> (U(u, y), Y(y)); acts on points as (u, y, y1) -> (U, Y, Y'(y) y1)."""

    Y: sp.Expr
    U: sp.Expr

    def __post_init__(self):
        Y, U = sp.sympify(self.Y), sp.sympify(self.U)
        if not Y.free_symbols <= {y}:
            raise FeedbackError("Y may depend on y only")
        if not U.free_symbols <= {u, y}:
            raise FeedbackError("U may depend on u and y only")
        object.__setattr__(self, "Y", Y)
        object.__setattr__(self, "U", U)

    @classmethod
    def parse(cls, Y: str, U: str) -> "FeedbackMap":
        from .parser import parse_expression

        return cls(parse_expression(Y), parse_expression(U))

    @classmethod
    def identity(cls) -> "FeedbackMap":
        return cls(y, u)

    @property
    def dY(self) -> sp.Expr:
        return sp.diff(self.Y, y)

    @property
    def ddY(self) -> sp.Expr:
        return sp.diff(self.Y, y, 2)

    @property
    def dU(self) -> sp.Expr:
        return sp.diff(self.U, u)

    def after(self, first: "FeedbackMap") -> "FeedbackMap":
        """Point-level composition: apply ``first``, then ``self``."""
        return FeedbackMap(self.Y.xreplace({y: first.Y}),
                           self.U.xreplace({u: _U, y: _Y}).xreplace({_U: first.U, _Y: first.Y}))

    def check(self, points: np.ndarray) -> None:
        """Raise if Y' or dU/du vanishes at any of the (u, y) sample points."""
        pts = np.atleast_2d(points)
        dY = sp.lambdify([u, y], self.dY, "numpy")(pts[:, 0], pts[:, 1])
        dU = sp.lambdify([u, y], self.dU, "numpy")(pts[:, 0], pts[:, 1])
        if np.any(np.abs(dY) < 1e-12) or np.any(np.abs(dU) < 1e-12):
            raise FeedbackError("feedback map is degenerate on the working domain")

    def inverse_point(self, q: Sequence[float], guess: Sequence[float] | None = None) -> tuple[float, float, float]:
        """Numeric inverse of :func:`transform_point`."""
        qu, qy, qy1 = (float(c) for c in q)
        Yf = sp.lambdify([y], self.Y, "math")
        dYf = sp.lambdify([y], self.dY, "math")
        Uf = sp.lambdify([u, y], self.U, "math")
        dUf = sp.lambdify([u, y], self.dU, "math")
        y0 = qy if guess is None else float(guess[1])
        yy = optimize.newton(lambda t: Yf(t) - qy, y0, fprime=dYf, tol=1e-15, maxiter=100)
        u0 = qu if guess is None else float(guess[0])
        uu = optimize.newton(lambda t: Uf(t, yy) - qu, u0, fprime=lambda t: dUf(t, yy),
                             tol=1e-15, maxiter=100)
        return (float(uu), float(yy), qy1 / dYf(yy))

    def to_dict(self) -> dict:
        from .jets import text_of

        return {"Y": text_of(self.Y), "U": text_of(self.U)}


def apply_feedback(F: SystemF, phi: FeedbackMap) -> SystemF:
    """(1/Y') F(Y, Y' y1, U) - (Y''/Y') y1^2."""
    dY, ddY = phi.dY, phi.ddY
    if dY == 0:
        raise FeedbackError("Y' vanishes identically")
    composed = F.expr.xreplace({u: _U, y: _Y, y1: _Z}).xreplace({_U: phi.U, _Y: phi.Y, _Z: dY * y1})
    return SystemF(composed / dY - ddY / dY * y1**2, label=f"feedback({F.label})")


def transform_point(phi: FeedbackMap, p: Sequence) -> tuple:
    """(u, y, y1) -> (U(u, y), Y(y), Y'(y) y1); accepts arrays."""
    pu, py, py1 = p
    fn = _point_map(phi)
    with np.errstate(all="raise"):
        U, Y, dY = fn(pu, py)
    if np.ndim(pu) == 0 and np.ndim(py) == 0 and np.ndim(py1) == 0:
        return (float(U), float(Y), float(dY) * float(py1))
    shape = np.broadcast_shapes(np.shape(pu), np.shape(py), np.shape(py1))
    return tuple(np.broadcast_to(np.asarray(c, dtype=float), shape).copy()
                 for c in (U, Y, np.asarray(dY) * np.asarray(py1)))


# -- jets of the transformed system by the chain rule ---------------------------------
#
# G = F(U, Y, Y' y1) / Y' - (Y''/Y') y1^2 is differentiated once for a generic F and
# generic U, Y: placeholders stand for the partials of F at the image point and for
# the derivatives of U and Y. A concrete pair then only needs small jets of F, U, Y.


_F_PLACEHOLDERS: dict[sp.Symbol, MultiIndex] = {}


def _fp(mi: MultiIndex) -> sp.Symbol:
    s = sp.Symbol("F" + mi.suffix)
    _F_PLACEHOLDERS[s] = mi
    return s


def _up(i: int, j: int) -> sp.Symbol:
    return sp.Symbol(f"U_{i}_{j}")


def _yp(k: int) -> sp.Symbol:
    return sp.Symbol(f"Y_{k}")


def _chain_derivative(e: sp.Expr, var: str) -> sp.Expr:
    # d/dvar of the image arguments (U, Y, Y'(y) y1)
    arg_d = {"u": (_up(1, 0), 0, 0), "y": (_up(0, 1), _yp(1), _yp(2) * y1), "y1": (0, 0, _yp(1))}[var]
    out = sp.diff(e, y1) if var == "y1" else sp.Integer(0)
    for s in e.free_symbols:
        name = s.name
        if s in _F_PLACEHOLDERS:
            mi = _F_PLACEHOLDERS[s]
            d = sum(_fp(mi.bump(b)) * a for b, a in zip(BASE_NAMES, arg_d) if a != 0)
        elif name.startswith("U_"):
            i, j = map(int, name[2:].split("_"))
            d = {"u": _up(i + 1, j), "y": _up(i, j + 1), "y1": 0}[var]
        elif name.startswith("Y_"):
            d = _yp(int(name[2:]) + 1) if var == "y" else 0
        else:
            continue
        if d != 0:
            out += sp.diff(e, s) * d
    return out


@lru_cache(maxsize=None)
def _chain_rule_jets(order: int):
    """Generic partials of G up to ``order`` and a lambdified evaluator."""
    base = _fp(MultiIndex()) / _yp(1) - _yp(2) / _yp(1) * y1**2
    out = {MultiIndex(): base}
    for mi in multi_indices(order):
        if mi.order == 0:
            continue
        if mi.dy1:
            parent, var = mi.bump("y1", -1), "y1"
        elif mi.dy:
            parent, var = mi.bump("y", -1), "y"
        else:
            parent, var = mi.bump("u", -1), "u"
        out[mi] = _chain_derivative(out[parent], var)
    f_syms = [_fp(mi) for mi in multi_indices(order)]
    u_syms = [_up(i, j) for i in range(order + 1) for j in range(order + 1 - i) if i + j > 0]
    y_syms = [_yp(k) for k in range(1, order + 3)]
    args = [y1] + f_syms + u_syms + y_syms
    fn = sp.lambdify(args, list(out.values()), "numpy", cse=True)
    return list(out), fn, u_syms, y_syms


@lru_cache(maxsize=64)
def _map_derivatives(phi: "FeedbackMap", order: int):
    U = [sp.diff(sp.diff(phi.U, u, i), y, j) for i in range(order + 1) for j in range(order + 1 - i) if i + j > 0]
    Y = [sp.diff(phi.Y, y, k) for k in range(1, order + 3)]
    return sp.lambdify([u, y], U + Y, "numpy")


def transformed_jet(F: SystemF, phi: "FeedbackMap", point: Sequence, order: int) -> JetPoint:
    """Jet of ``apply_feedback(F, phi)`` at ``point``, from the jet of F at the image point.

    Agrees with ``jet_of_system(apply_feedback(F, phi), point, order)`` but never
    differentiates the composed expression.
    """
    from .jets import jet_of_system

    pu, py, py1 = (np.asarray(c, dtype=float) for c in point)
    pu, py, py1 = np.broadcast_arrays(pu, py, py1)
    q = transform_point(phi, (pu, py, py1))
    jf = jet_of_system(F, q, order)
    indices, fn, u_syms, y_syms = _chain_rule_jets(order)
    mvals = _map_derivatives(phi, order)(pu, py)
    fvals = [jf[mi] for mi in multi_indices(order)]
    with np.errstate(all="ignore"):
        raw = fn(py1, *fvals, *mvals)
    vals = {mi: np.broadcast_to(np.asarray(v, dtype=float), pu.shape).copy() for mi, v in zip(indices, raw)}
    if pu.ndim == 0:
        return JetPoint(float(pu), float(py), float(py1), order, {k: float(v) for k, v in vals.items()})
    return JetPoint(pu.copy(), py.copy(), py1.copy(), order, vals)


@lru_cache(maxsize=256)
def _point_map(phi: FeedbackMap):
    return sp.lambdify([u, y], [phi.U, phi.Y, phi.dY], "numpy")


def random_feedback(seed: int, complexity: int = 2, box: Sequence[Sequence[float]] = ((-2, 2), (-2, 2)),
                    strength: float = 1.0) -> FeedbackMap:
    """Reproducible random map with min Y' >= 0.1 and min dU/du >= 0.1 on ``box`` (u-range, y-range).

    Coefficients are rounded decimals, so the map is exact symbolically. ``strength``
    scales the distance from the identity (slopes, offsets and nonlinear terms).
    """
    rng = np.random.default_rng(seed)
    (ulo, uhi), (ylo, yhi) = box
    umax = max(abs(ulo), abs(uhi))
    ymax = max(abs(ylo), abs(yhi))

    def q(x: float) -> sp.Rational:
        return sp.Rational(str(round(float(x), 3)))

    slope = rng.uniform(0.7, 1.4) ** strength
    budget = 0.8 * (slope - 0.1) * strength
    Y = q(rng.uniform(-0.3, 0.3) * strength) + q(slope) * y
    for _ in range(complexity):
        w = rng.uniform(0.5, 1.5)
        amp = rng.uniform(0.2, 1.0) * budget / (complexity * w)
        Y += q(amp) * sp.sin(q(w) * y + q(rng.uniform(0, np.pi)))

    rate = rng.uniform(0.7, 1.4) ** strength
    budget = 0.8 * (rate - 0.1) * strength
    U = q(rng.uniform(-0.3, 0.3) * strength) + q(rate) * u
    U += q(rng.uniform(-0.3, 0.3) * strength) * sp.sin(y)
    shares = rng.dirichlet(np.ones(complexity + 1)) * budget
    U += q(shares[0] / ymax * rng.choice([-1, 1])) * u * y
    for k in range(complexity):
        if k % 2 == 0:
            U += q(shares[k + 1] / (2 * umax) * rng.choice([-1, 1])) * u**2
        else:
            w = rng.uniform(0.5, 1.5)
            U += q(shares[k + 1] / w * rng.choice([-1, 1])) * sp.sin(q(w) * u) * sp.cos(y)
    return FeedbackMap(Y, U)


# -- feedback vector fields --------------------------------------------------


@dataclass(frozen=True)
class FieldParams:
    """X_{a,b} = a(y) d/dy + b(u, y) d/du."""

    a: sp.Expr
    b: sp.Expr

    def __post_init__(self):
        a, b = sp.sympify(self.a), sp.sympify(self.b)
        if not a.free_symbols <= {y} or not b.free_symbols <= {u, y}:
            raise ValueError("need a = a(y) and b = b(u, y)")
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)


def generating_function(params: FieldParams) -> sp.Expr:
    a, b = params.a, params.b
    da, dda = sp.diff(a, y), sp.diff(a, y, 2)
    return dda * y1**2 + da * f - b * f_u - a * f_y - da * y1 * f_y1


# Abstract field jets: a_i stands for the i-th derivative of a(y) at the point,
# b_ij for d^{i+j} b / du^i dy^j.  Components become linear forms in these.

def _a_sym(i: int) -> sp.Symbol:
    return sp.Symbol(f"a_{i}")


def _b_sym(i: int, j: int) -> sp.Symbol:
    return sp.Symbol(f"b_{i}_{j}")


def _param_index(s: sp.Symbol):
    parts = s.name.split("_")
    if parts[0] == "a" and len(parts) == 2:
        return ("a", int(parts[1]))
    if parts[0] == "b" and len(parts) == 3:
        return ("b", int(parts[1]), int(parts[2]))
    return None


def _total_derivative_with_field(e: sp.Expr, base: str) -> sp.Expr:
    out = total_derivative(e, base)
    for s in e.free_symbols:
        idx = _param_index(s) if isinstance(s, sp.Symbol) else None
        if idx is None:
            continue
        if idx[0] == "a":
            nxt = _a_sym(idx[1] + 1) if base == "y" else None
        else:
            i, j = idx[1], idx[2]
            nxt = {"u": _b_sym(i + 1, j), "y": _b_sym(i, j + 1)}.get(base)
        if nxt is not None:
            out += nxt * sp.diff(e, s)
    return out


ABSTRACT_PHI = (_a_sym(2) * y1**2 + _a_sym(1) * f - _b_sym(0, 0) * f_u - _a_sym(0) * f_y
                - _a_sym(1) * y1 * f_y1)
ABSTRACT_BASE = {"u": _b_sym(0, 0), "y": _a_sym(0), "y1": _a_sym(1) * y1}


@lru_cache(maxsize=None)
def prolonged_components(order: int) -> dict:
    """Components of the prolonged field on J^order as linear forms in the field jets.

    Keys are "u", "y", "y1" (base) and MultiIndex (fibre coordinate f_sigma);
    each fibre component is D_sigma(phi) + b f_{sigma+u} + a f_{sigma+y} + a' y1 f_{sigma+y1}.
    """
    comps: dict = dict(ABSTRACT_BASE)
    dphi = {MultiIndex(): ABSTRACT_PHI}
    for mi in multi_indices(order):
        if mi.order:
            if mi.dy1:
                parent, base = mi.bump("y1", -1), "y1"
            elif mi.dy:
                parent, base = mi.bump("y", -1), "y"
            else:
                parent, base = mi.bump("u", -1), "u"
            dphi[mi] = _total_derivative_with_field(dphi[parent], base)
        comp = dphi[mi] + sum(ABSTRACT_BASE[b] * jet_symbol(mi.bump(b)) for b in BASE_NAMES)
        comps[mi] = sp.expand(comp)
    return comps


def field_jet_symbols(order: int) -> list[sp.Symbol]:
    """Parameters a_0..a_{order+2}, b_ij (i + j <= order) that the order-k prolongation depends on."""
    out = [_a_sym(i) for i in range(order + 3)]
    out += [_b_sym(i, s - i) for s in range(order + 1) for i in range(s, -1, -1)]
    return out


def _field_jet_values(params: FieldParams, pu, py, order: int) -> dict:
    vals = {}
    for s in field_jet_symbols(order):
        idx = _param_index(s)
        if idx[0] == "a":
            e = sp.diff(params.a, y, idx[1])
        else:
            e = sp.diff(params.b, u, idx[1], y, idx[2]) if idx[1] or idx[2] else params.b
        vals[s] = sp.lambdify([u, y], e, "numpy")(pu, py)
    return vals


def prolonged_field_apply(params: FieldParams, e: sp.Expr, jp: JetPoint):
    """Value of the infinitely prolonged field X_{a,b} applied to ``e`` at ``jp``."""
    k = max(expression_order(e), 0)
    if jp.order < k:
        raise MissingJetError(f"prolongation needs a jet of order {k}, have {jp.order}")
    comps = prolonged_components(k)
    pvals = _field_jet_values(params, jp.u, jp.y, k)
    terms = []
    coeff_exprs = []
    for key in ("u", "y", "y1"):
        terms.append(comps[key])
        coeff_exprs.append(partial_derivative(e, key))
    for mi in jet_coordinates(e):
        terms.append(comps[mi])
        coeff_exprs.append(sp.diff(e, jet_symbol(mi)))
    comp_exprs = [t.xreplace({s: sp.Symbol(f"__p{i}") for i, s in enumerate(pvals)}) for t in terms]
    # evaluate field components by substituting numeric parameter values
    comp_vals = _eval_with_params(comp_exprs, jp, list(pvals.values()))
    grad_vals = evaluate_many(coeff_exprs, jp)
    return sum(np.asarray(c) * np.asarray(g) for c, g in zip(comp_vals, grad_vals))


def _eval_with_params(exprs: list, jp: JetPoint, pvals: list):
    from .jets import _lambdified

    coords = sorted({mi for e in exprs for mi in jet_coordinates(e)})
    psyms = tuple(sp.Symbol(f"__p{i}") for i in range(len(pvals)))
    syms = (u, y, y1) + tuple(jet_symbol(mi) for mi in coords) + psyms
    vals = [jp.u, jp.y, jp.y1] + [jp.values[mi] for mi in coords] + list(pvals)
    arrays = np.broadcast_arrays(*(np.asarray(v, dtype=float) for v in vals))
    fn = _lambdified(syms, tuple(exprs), "numpy")
    return [np.broadcast_to(np.asarray(r, dtype=float), arrays[0].shape) for r in fn(*arrays)]


@lru_cache(maxsize=None)
def _orbit_matrix_fn(k: int):
    comps = prolonged_components(k)
    params = field_jet_symbols(k)
    cols = ["u", "y", "y1"] + multi_indices(k)
    rows = [[sp.diff(comps[c], p) for c in cols] for p in params]
    coords = multi_indices(k)
    syms = [u, y, y1] + [jet_symbol(mi) for mi in coords]
    return sp.lambdify(syms, rows, "numpy"), coords, params, cols


def orbit_matrix(jp: JetPoint, k: int) -> np.ndarray:
    """Rows: prolonged fields for each field-jet direction; columns: coordinates of J^k."""
    if jp.order < k:
        raise MissingJetError(f"orbit dimension at order {k} needs a jet of order {k}")
    fn, coords, _, _ = _orbit_matrix_fn(k)
    args = [jp.u, jp.y, jp.y1] + [jp.values[mi] for mi in coords]
    return np.array(fn(*(float(a) for a in args)), dtype=float)


@dataclass
class OrbitReport:
    order: int
    point: tuple
    rank: int
    expected: int | None
    jet_dimension: int
    singular_values: list[float]

    @property
    def corank(self) -> int:
        return self.jet_dimension - self.rank

    def to_dict(self) -> dict:
        return {
            "order": self.order,
            "point": list(self.point),
            "rank": self.rank,
            "expected": self.expected,
            "jet_dimension": self.jet_dimension,
            "corank": self.corank,
            "singular_values": self.singular_values,
        }


def expected_orbit_dimension(k: int) -> int | None:
    if k == 1:
        return 6
    if k > 1:
        return (k + 2) * (k + 3) // 2
    return None


def numerical_rank(A: np.ndarray, rtol: float = 1e-8) -> tuple[int, np.ndarray]:
    s = np.linalg.svd(A, compute_uv=False)
    if s.size == 0 or s[0] == 0:
        return 0, s
    return int(np.sum(s > rtol * s[0])), s


def orbit_report(jp: JetPoint, k: int, rtol: float = 1e-8) -> OrbitReport:
    A = orbit_matrix(jp, k)
    r, s = numerical_rank(A, rtol)
    return OrbitReport(k, (float(jp.u), float(jp.y), float(jp.y1)), r, expected_orbit_dimension(k),
                       A.shape[1], [float(v) for v in s])


def orbit_dimension(jp: JetPoint, k: int, rtol: float = 1e-8) -> int:
    return orbit_report(jp, k, rtol).rank


def isotropy_conditions(jp: JetPoint) -> np.ndarray:
    """Kernel of the order-1 orbit matrix, as a vector over (a, a', a'', a''', b, b_u, b_y)."""
    A = orbit_matrix(jp, 1)
    _, _, vt = np.linalg.svd(A.T)
    return vt[-1]


__all__ = [
    "FeedbackMap", "FeedbackError", "FieldParams", "OrbitReport", "apply_feedback",
    "transform_point", "transformed_jet", "random_feedback", "generating_function", "prolonged_components",
    "prolonged_field_apply", "orbit_matrix", "orbit_dimension", "orbit_report",
    "expected_orbit_dimension", "numerical_rank", "field_jet_symbols", "isotropy_conditions",
]
