"""Expressions over jet coordinates.

An expression is a plain :class:`sympy.Expr` in the base variables ``u``, ``y``,
``y1`` and the jet coordinates ``f_sigma`` (partial derivatives of the right-hand
side ``f(u, y, y1)``).  Jet coordinates are independent symbols under partial
differentiation; :func:`total_derivative` is the chain-rule derivation that
moves along the jet of a section.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Mapping, Sequence

import numpy as np
import sympy as sp

Expression = sp.Expr

u, y, y1 = sp.symbols("u y y1")
BASE_SYMBOLS = {"u": u, "y": y, "y1": y1}
BASE_NAMES = ("u", "y", "y1")

DEFAULT_MAX_ORDER = 6


class EvaluationError(ArithmeticError):
    """Base class for numeric evaluation failures."""


class DivisionByZeroError(EvaluationError):
    def __init__(self, subexpression: sp.Expr):
        self.subexpression = subexpression
        super().__init__(f"division by zero: denominator {subexpression} vanishes")


class DomainError(EvaluationError):
    pass


class MissingJetError(EvaluationError):
    pass


@dataclass(frozen=True, order=True)
class MultiIndex:
    """Counts of u-, y- and y1-derivatives; mixed partials commute."""

    du: int = 0
    dy: int = 0
    dy1: int = 0

    def __post_init__(self):
        if min(self.du, self.dy, self.dy1) < 0:
            raise ValueError(f"negative derivative count in {self}")

    @property
    def order(self) -> int:
        return self.du + self.dy + self.dy1

    def bump(self, base: str, n: int = 1) -> "MultiIndex":
        if base == "u":
            return MultiIndex(self.du + n, self.dy, self.dy1)
        if base == "y":
            return MultiIndex(self.du, self.dy + n, self.dy1)
        if base == "y1":
            return MultiIndex(self.du, self.dy, self.dy1 + n)
        raise ValueError(f"unknown base variable {base!r}")

    @property
    def suffix(self) -> str:
        return "u" * self.du + "y" * self.dy + "y1" * self.dy1

    @property
    def name(self) -> str:
        return "f_" + self.suffix if self.order else "f"

    def __str__(self) -> str:
        return self.name


_JET_SYMBOLS: dict[MultiIndex, sp.Symbol] = {}
_SYMBOL_INDEX: dict[sp.Symbol, MultiIndex] = {}


def jet_symbol(mi: MultiIndex) -> sp.Symbol:
    sym = _JET_SYMBOLS.get(mi)
    if sym is None:
        sym = sp.Symbol(mi.name)
        _JET_SYMBOLS[mi] = sym
        _SYMBOL_INDEX[sym] = mi
    return sym


def fsym(suffix: str = "") -> sp.Symbol:
    """Shorthand: ``fsym("uy1")`` is the jet coordinate f_{u y1}."""
    from .parser import parse_jet_suffix

    return jet_symbol(parse_jet_suffix(suffix))


def multi_index_of(sym: sp.Basic) -> MultiIndex | None:
    mi = _SYMBOL_INDEX.get(sym)
    if mi is None and isinstance(sym, sp.Symbol) and (sym.name == "f" or sym.name.startswith("f_")):
        # symbols rebuilt elsewhere (unpickled, sympify) compare equal by name
        from .parser import parse_jet_suffix

        try:
            mi = parse_jet_suffix(sym.name[2:])
        except ValueError:
            return None
        jet_symbol(mi)
    return mi


def multi_indices(order: int, exact: bool = False) -> list[MultiIndex]:
    """All multi-indices with |sigma| <= order (or == order when ``exact``)."""
    out = []
    for k in range(0 if not exact else order, order + 1):
        for du in range(k, -1, -1):
            for dy in range(k - du, -1, -1):
                out.append(MultiIndex(du, dy, k - du - dy))
    return out


def jet_coordinates(e: sp.Expr) -> list[MultiIndex]:
    return sorted(mi for s in e.free_symbols if (mi := multi_index_of(s)) is not None)


def expression_order(e: sp.Expr) -> int:
    """Highest jet order present in ``e`` (-1 when no jet coordinate occurs)."""
    return max((mi.order for mi in jet_coordinates(e)), default=-1)


def _base_symbol(v: str | sp.Symbol) -> sp.Symbol:
    if isinstance(v, str):
        if v in BASE_SYMBOLS:
            return BASE_SYMBOLS[v]
        raise ValueError(f"unknown base variable {v!r}")
    return v


def partial_derivative(e: sp.Expr, v: str | sp.Symbol | MultiIndex) -> sp.Expr:
    if isinstance(v, MultiIndex):
        v = jet_symbol(v)
    return sp.diff(e, _base_symbol(v))


def total_derivative(e: sp.Expr, b: str) -> sp.Expr:
    """D_b e = de/db + sum_sigma f_{sigma+b} de/df_sigma."""
    e = sp.sympify(e)
    out = sp.diff(e, BASE_SYMBOLS[b])
    for mi in jet_coordinates(e):
        out += jet_symbol(mi.bump(b)) * sp.diff(e, jet_symbol(mi))
    return out


def total_derivative_multi(e: sp.Expr, mi: MultiIndex) -> sp.Expr:
    for base, n in zip(BASE_NAMES, (mi.du, mi.dy, mi.dy1)):
        for _ in range(n):
            e = total_derivative(e, base)
    return e


def simplify(e: sp.Expr) -> sp.Expr:
    """Canonical rational normal form: constants folded, like terms collected,
    common factors cancelled."""
    e = sp.sympify(e)
    if e.is_Number or e.is_Symbol:
        return e
    try:
        return sp.cancel(sp.together(e))
    except sp.PolynomialError:
        return sp.simplify(e)


class ZeroStatus(enum.Enum):
    STRUCTURAL = "structurally zero"
    PROBABLE = "probably zero"
    NONZERO = "nonzero"

    def __bool__(self) -> bool:
        return self is not ZeroStatus.NONZERO


def is_zero(e: sp.Expr, points: int = 50, tol: float = 1e-10, seed: int = 0) -> ZeroStatus:
    """Structural test via :func:`simplify`, then randomized evaluation."""
    s = simplify(e)
    if s == 0:
        return ZeroStatus.STRUCTURAL
    rng = np.random.default_rng(seed)
    syms = sorted(s.free_symbols, key=str)
    fn = sp.lambdify(syms, s, "numpy")
    for _ in range(points):
        vals = rng.uniform(0.5, 1.5, size=len(syms)) * rng.choice([-1.0, 1.0], size=len(syms))
        with np.errstate(all="ignore"):
            v = complex(fn(*vals))
        if not np.isfinite(v) or abs(v) > tol:
            return ZeroStatus.NONZERO
    return ZeroStatus.PROBABLE


@dataclass(frozen=True)
class SystemF:
    """Right-hand side of y'' = F(y, y', u), in the variables u, y, y1."""

    expr: sp.Expr
    label: str = ""

    def __post_init__(self):
        expr = sp.sympify(self.expr)
        object.__setattr__(self, "expr", expr)
        if jet_coordinates(expr):
            raise ValueError("a system may not contain jet coordinates")
        extra = expr.free_symbols - set(BASE_SYMBOLS.values())
        if extra:
            raise ValueError(f"unknown symbols in system: {sorted(map(str, extra))}")
        if not self.label:
            object.__setattr__(self, "label", text_of(expr))

    @classmethod
    def parse(cls, text: str, label: str = "") -> "SystemF":
        from .parser import parse_expression

        return cls(parse_expression(text), label or text)

    def __str__(self) -> str:
        return text_of(self.expr)


def text_of(e: sp.Expr) -> str:
    """Canonical expression text in the input grammar."""
    return sp.sstr(e).replace("**", "^")


@dataclass(frozen=True)
class JetPoint:
    """Base point plus the values of all jet coordinates up to ``order``.

    Coordinates may be floats or equally-shaped numpy arrays (a batch of jets).
    """

    u: float | np.ndarray
    y: float | np.ndarray
    y1: float | np.ndarray
    order: int
    values: Mapping[MultiIndex, float | np.ndarray] = field(repr=False)

    def __post_init__(self):
        want = set(multi_indices(self.order))
        if set(self.values) != want:
            raise ValueError(f"jet of order {self.order} needs exactly {len(want)} values")

    @property
    def base(self) -> tuple:
        return (self.u, self.y, self.y1)

    def __getitem__(self, key: MultiIndex | str):
        if isinstance(key, str):
            from .parser import parse_jet_suffix

            key = parse_jet_suffix(key[2:] if key.startswith("f_") else ("" if key == "f" else key))
        return self.values[key]

    def truncate(self, order: int) -> "JetPoint":
        return JetPoint(self.u, self.y, self.y1, order,
                        {mi: v for mi, v in self.values.items() if mi.order <= order})

    def select(self, index) -> "JetPoint":
        """Pick entries out of a batched jet."""
        return JetPoint(self.u[index], self.y[index], self.y1[index], self.order,
                        {mi: np.asarray(v)[index] for mi, v in self.values.items()})

    @property
    def size(self) -> int:
        return int(np.size(self.u))

    @classmethod
    def from_arrays(cls, base: Sequence, order: int, values: Mapping) -> "JetPoint":
        return cls(base[0], base[1], base[2], order, dict(values))


@lru_cache(maxsize=256)
def system_derivatives(expr: sp.Expr, order: int) -> tuple[tuple[MultiIndex, sp.Expr], ...]:
    """Symbolic partials of ``expr`` for every |sigma| <= order."""
    if order <= 0:
        return ((MultiIndex(), expr),)
    # reuse the cached lower orders; only the top layer is new
    out: dict[MultiIndex, sp.Expr] = dict(system_derivatives(expr, order - 1))
    for mi in multi_indices(order, exact=True):
        # differentiate a lower entry along one more variable
        if mi.dy1:
            parent, var = mi.bump("y1", -1), y1
        elif mi.dy:
            parent, var = mi.bump("y", -1), y
        else:
            parent, var = mi.bump("u", -1), u
        out[mi] = sp.diff(out[parent], var)
    return tuple(out.items())


@lru_cache(maxsize=1024)
def _lambdified(args: tuple, exprs: tuple, module: str):
    return sp.lambdify(args, list(exprs), modules=module, cse=True)


def _call_scalar(fn, args: Sequence[float]):
    return fn(*[float(a) for a in args])


def jet_of_system(F: SystemF, point: Sequence, order: int, strict: bool = True) -> JetPoint:
    """Exact jet of ``F`` at ``point = (u, y, y1)``; arrays give a batch of jets.

    With ``strict=False`` a batch keeps non-finite entries as nan instead of raising.
    """
    derivs = system_derivatives(F.expr, order)
    indices = [mi for mi, _ in derivs]
    exprs = tuple(e for _, e in derivs)
    args = (u, y, y1)
    pu, py, py1 = point
    batched = np.ndim(pu) > 0 or np.ndim(py) > 0 or np.ndim(py1) > 0
    if not batched:
        fn = _lambdified(args, exprs, "math")
        try:
            vals = _call_scalar(fn, (pu, py, py1))
        except ZeroDivisionError as exc:
            raise DomainError(f"{F.label}: singular derivative at {tuple(point)}") from exc
        except (ValueError, OverflowError) as exc:
            raise DomainError(f"{F.label}: {exc} at {tuple(point)}") from exc
        vals = [float(v) for v in vals]
        if not all(math.isfinite(v) for v in vals):
            raise DomainError(f"{F.label}: non-finite derivative at {tuple(point)}")
        return JetPoint(float(pu), float(py), float(py1), order, dict(zip(indices, vals)))
    pu, py, py1 = np.broadcast_arrays(*(np.asarray(c, dtype=float) for c in (pu, py, py1)))
    fn = _lambdified(args, exprs, "numpy")
    with np.errstate(all="ignore"):
        raw = fn(pu, py, py1)
    vals = [np.broadcast_to(np.asarray(v, dtype=float), pu.shape).copy() for v in raw]
    for mi, v in zip(indices, vals):
        if strict and not np.all(np.isfinite(v)):
            bad = np.flatnonzero(~np.isfinite(v))[0]
            raise DomainError(f"{F.label}: non-finite {mi} at point index {bad}")
    return JetPoint(pu, py, py1, order, dict(zip(indices, vals)))


def _eval_args(e: sp.Expr, jp: JetPoint) -> tuple[tuple, list]:
    coords = jet_coordinates(e)
    for mi in coords:
        if mi.order > jp.order:
            raise MissingJetError(f"{mi} needs a jet of order {mi.order}, have {jp.order}")
    syms = (u, y, y1) + tuple(jet_symbol(mi) for mi in coords)
    vals = [jp.u, jp.y, jp.y1] + [jp.values[mi] for mi in coords]
    return syms, vals


def _find_zero_denominator(e: sp.Expr, subs: dict) -> sp.Expr | None:
    for node in sp.preorder_traversal(e):
        if isinstance(node, sp.Pow) and node.exp.is_negative:
            try:
                val = complex(node.base.xreplace(subs).evalf())
            except (TypeError, ValueError):
                continue
            if abs(val) == 0.0:
                return node.base
    return None


def evaluate(e: sp.Expr, jp: JetPoint):
    """Numeric value of ``e`` at ``jp`` (array-valued for batched jets)."""
    e = sp.sympify(e)
    syms, vals = _eval_args(e, jp)
    batched = any(np.ndim(v) > 0 for v in vals)
    if not batched:
        fn = _lambdified(syms, (e,), "math")
        try:
            (val,) = _call_scalar(fn, vals)
        except ZeroDivisionError:
            subs = dict(zip(syms, (sp.Float(v) for v in vals)))
            raise DivisionByZeroError(_find_zero_denominator(e, subs) or e) from None
        except (ValueError, OverflowError) as exc:
            raise DomainError(f"{exc} while evaluating {e}") from None
        return float(val)
    fn = _lambdified(syms, (e,), "numpy")
    arrays = np.broadcast_arrays(*(np.asarray(v, dtype=float) for v in vals))
    with np.errstate(all="ignore"):
        (val,) = fn(*arrays)
    return np.broadcast_to(np.asarray(val, dtype=float), arrays[0].shape).copy()


@lru_cache(maxsize=512)
def _coordinates_of(exprs: tuple) -> list:
    return sorted({mi for e in exprs for mi in jet_coordinates(e)})


def evaluate_many(exprs: Sequence[sp.Expr], jp: JetPoint) -> list:
    """Evaluate several expressions sharing one compiled function (batched jets).

    Non-finite entries (zero denominators, domain failures) come back as nan.
    """
    exprs = tuple(sp.sympify(e) for e in exprs)
    coords = _coordinates_of(exprs)
    for mi in coords:
        if mi.order > jp.order:
            raise MissingJetError(f"{mi} needs a jet of order {mi.order}, have {jp.order}")
    syms = (u, y, y1) + tuple(jet_symbol(mi) for mi in coords)
    vals = [jp.u, jp.y, jp.y1] + [jp.values[mi] for mi in coords]
    arrays = np.broadcast_arrays(*(np.asarray(v, dtype=float) for v in vals))
    fn = _lambdified(syms, exprs, "numpy")
    with np.errstate(all="ignore"):
        raw = fn(*arrays)
    out = []
    for r in raw:
        a = np.broadcast_to(np.asarray(r, dtype=float), arrays[0].shape).copy()
        a[~np.isfinite(a)] = np.nan
        out.append(a if a.ndim else float(a))
    return out


def random_jet(rng: np.random.Generator, order: int, size: int | None = None,
               low: float = 0.5, high: float = 1.5) -> JetPoint:
    """A jet with independent random coordinates (no underlying system)."""
    def draw():
        return rng.uniform(low, high, size) * rng.choice([-1.0, 1.0], size)
    base = [draw() for _ in range(3)]
    values = {mi: draw() for mi in multi_indices(order)}
    return JetPoint(*base, order, values)


def substitute_jet(e: sp.Expr, jp: JetPoint) -> sp.Expr:
    """Replace jet coordinates and base variables with exact rational values."""
    subs = {u: sp.nsimplify(jp.u), y: sp.nsimplify(jp.y), y1: sp.nsimplify(jp.y1)}
    for mi in jet_coordinates(e):
        subs[jet_symbol(mi)] = sp.nsimplify(jp.values[mi])
    return e.xreplace(subs)


def free_base(e: sp.Expr) -> set[str]:
    return {name for name, s in BASE_SYMBOLS.items() if s in e.free_symbols}


def as_expression(value: sp.Expr | str | float | int, allow_jets: bool = True) -> sp.Expr:
    if isinstance(value, str):
        from .parser import parse_expression

        return parse_expression(value, allow_jets=allow_jets)
    return sp.sympify(value)


__all__ = [
    "Expression", "MultiIndex", "SystemF", "JetPoint", "ZeroStatus",
    "EvaluationError", "DivisionByZeroError", "DomainError", "MissingJetError",
    "u", "y", "y1", "BASE_SYMBOLS", "jet_symbol", "fsym", "multi_index_of", "multi_indices",
    "jet_coordinates", "expression_order", "partial_derivative", "total_derivative",
    "total_derivative_multi", "simplify", "is_zero", "jet_of_system", "evaluate",
    "evaluate_many", "random_jet", "substitute_jet", "text_of", "as_expression",
]
