"""The invariant frame: basic invariant J, the derivations nabla_u, nabla_y,
nabla_y1, their structure coefficients, and everything generated from them.

Derived invariants are produced by applying the derivations; the third-order
invariants K and L are read off the commutator structure coefficients.  The
closed forms as printed in the literature live in :mod:`feedinv.ledger` and
are only compared against, never used.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import cached_property, lru_cache
from typing import Iterable, Mapping, Sequence

import numpy as np
import sympy as sp

from .jets import (
    JetPoint,
    SystemF,
    evaluate_many,
    fsym,
    jet_of_system,
    simplify,
    text_of,
    total_derivative,
    y1,
)

FRAME = ("u", "y", "y1")

f, f_u, f_y, f_y1 = fsym(), fsym("u"), fsym("y"), fsym("y1")


def basic_invariant_J() -> sp.Expr:
    return (y1 * f_y1 - 2 * f) / y1


@dataclass(frozen=True)
class InvariantDerivation:
    """coeff_u * D_u + coeff_y * D_y + coeff_y1 * D_y1."""

    coeff_u: sp.Expr
    coeff_y: sp.Expr
    coeff_y1: sp.Expr
    name: str = ""

    @property
    def coeffs(self) -> tuple[sp.Expr, sp.Expr, sp.Expr]:
        return (self.coeff_u, self.coeff_y, self.coeff_y1)

    def __call__(self, e: sp.Expr) -> sp.Expr:
        out = sp.Integer(0)
        for c, b in zip(self.coeffs, FRAME):
            if c != 0:
                out += c * total_derivative(e, b)
        return out


def commutator(a: InvariantDerivation, b: InvariantDerivation) -> InvariantDerivation:
    """[a, b] expanded in the commuting total derivatives D_u, D_y, D_y1."""
    coeffs = [a(cb) - b(ca) for ca, cb in zip(a.coeffs, b.coeffs)]
    return InvariantDerivation(*coeffs, name=f"[{a.name},{b.name}]")


@dataclass(frozen=True)
class CatalogEntry:
    expr: sp.Expr
    order: int
    provenance: str  # printed-formula | operator-application | structure-coefficient | literal
    branch: str = "regular"
    note: str = ""

    def to_dict(self) -> dict:
        return {
            "expression": text_of(self.expr),
            "order": self.order,
            "provenance": self.provenance,
            "branch": self.branch,
            "note": self.note,
        }


@dataclass(frozen=True)
class InvariantCatalog:
    entries: Mapping[str, CatalogEntry] = field(default_factory=dict)

    def __getitem__(self, name: str) -> sp.Expr:
        return self.entries[name].expr

    def __contains__(self, name: str) -> bool:
        return name in self.entries

    def names(self, branch: str | None = None) -> list[str]:
        return [n for n, e in self.entries.items() if branch is None or e.branch == branch]

    def extended(self, **new: CatalogEntry) -> "InvariantCatalog":
        return InvariantCatalog({**self.entries, **new})

    def to_json(self) -> str:
        doc = {"invariants": {n: e.to_dict() for n, e in self.entries.items()}}
        return json.dumps(doc, indent=2)

    def evaluate(self, jp: JetPoint, names: Sequence[str] | None = None) -> dict[str, float]:
        names = list(names or self.entries)
        vals = evaluate_many([self[n] for n in names], jp)
        return dict(zip(names, vals))


REGULAR_NAMES = ("J", "J_u", "J_y1", "J_uu", "J_uy1", "J_y1y1", "K", "L")
IRREGULAR_NAMES = ("J", "M", "nabla_u M", "nabla_y1 M", "J_y1")
SIGNATURE_NAMES = ("J", "J_u", "J_y1", "J_uu", "J_uy1", "J_y1y1", "K", "L")


class InvariantFrame:
    """All symbolic objects of the frame, built lazily and cached."""

    @cached_property
    def J(self) -> sp.Expr:
        return basic_invariant_J()

    @cached_property
    def alpha(self) -> sp.Expr:
        # forces nabla_y(J) = 0
        J = self.J
        return simplify(-(y1 * total_derivative(J, "y") + f * total_derivative(J, "y1"))
                        / total_derivative(J, "u"))

    @cached_property
    def nabla_u(self) -> InvariantDerivation:
        return InvariantDerivation(y1 / f_u, sp.Integer(0), sp.Integer(0), "nabla_u")

    @cached_property
    def nabla_y(self) -> InvariantDerivation:
        return InvariantDerivation(self.alpha, y1, f, "nabla_y")

    @cached_property
    def nabla_y1(self) -> InvariantDerivation:
        return InvariantDerivation(sp.Integer(0), sp.Integer(0), y1, "nabla_y1")

    def derivation(self, name: str) -> InvariantDerivation:
        return {"u": self.nabla_u, "y": self.nabla_y, "y1": self.nabla_y1}[name]

    def frame_derivations(self) -> tuple[InvariantDerivation, InvariantDerivation, InvariantDerivation]:
        return (self.nabla_u, self.nabla_y, self.nabla_y1)

    @cached_property
    def J_u(self) -> sp.Expr:
        return simplify(self.nabla_u(self.J))

    @cached_property
    def J_y1(self) -> sp.Expr:
        return simplify(self.nabla_y1(self.J))

    @cached_property
    def J_uu(self) -> sp.Expr:
        return simplify(self.nabla_u(self.J_u))

    @cached_property
    def J_uy1(self) -> sp.Expr:
        # nabla_u applied after nabla_y1
        return simplify(self.nabla_u(self.J_y1))

    @cached_property
    def J_y1u(self) -> sp.Expr:
        return simplify(self.nabla_y1(self.J_u))

    @cached_property
    def J_y1y1(self) -> sp.Expr:
        return simplify(self.nabla_y1(self.J_y1))

    def to_frame_basis(self, d: InvariantDerivation) -> tuple[sp.Expr, sp.Expr, sp.Expr]:
        """Coefficients (c^u, c^y, c^y1) of ``d`` in the basis nabla_u, nabla_y, nabla_y1.

        The frame matrix is triangular: only nabla_y has a D_y component and
        nabla_y1 only contributes to D_y1.
        """
        v_u, v_y, v_y1 = d.coeffs
        c_y = v_y / y1
        c_y1 = (v_y1 - c_y * f) / y1
        c_u = (v_u - c_y * self.alpha) * f_u / y1
        return (c_u, c_y, c_y1)

    @cached_property
    def structure(self) -> dict[tuple[str, str, str], sp.Expr]:
        out = {}
        for a, b in (("u", "y"), ("u", "y1"), ("y", "y1")):
            comm = commutator(self.derivation(a), self.derivation(b))
            for g, c in zip(FRAME, self.to_frame_basis(comm)):
                out[(a, b, g)] = simplify(c)
        return out

    def structure_coefficients(self) -> dict[tuple[str, str, str], sp.Expr]:
        return dict(self.structure)

    @cached_property
    def L(self) -> sp.Expr:
        return simplify(self.J_y1y1 + self.J_u * self.structure[("u", "y", "u")])

    @cached_property
    def K(self) -> sp.Expr:
        J, Ju, Jy1, Jy1y1 = self.J, self.J_u, self.J_y1, self.J_y1y1
        c = self.structure[("y", "y1", "u")]
        return simplify((Ju**2 * c - Jy1 * (Jy1 - Ju + J * Ju) + Jy1y1 * (Jy1 - Ju)) / Ju)

    @cached_property
    def M(self) -> sp.Expr:
        """Third-order invariant of irregular systems (J_u = 0 identically)."""
        g = fsym
        return (y1 * f * g("y1y1y1") + y1**2 * g("yy1y1") - f * g("y1y1") - 2 * y1 * g("yy1")
                + 2 * f * f_y1 / y1 + 2 * g("y") - 2 * f**2 / y1**2)

    @cached_property
    def catalog(self) -> InvariantCatalog:
        op = "operator-application"
        entries = {
            "J": CatalogEntry(self.J, 1, "literal", "both"),
            "J_u": CatalogEntry(self.J_u, 2, op, note="nabla_u(J)"),
            "J_y1": CatalogEntry(self.J_y1, 2, op, "both", "nabla_y1(J)"),
            "J_uu": CatalogEntry(self.J_uu, 3, op, note="nabla_u nabla_u(J)"),
            "J_uy1": CatalogEntry(self.J_uy1, 3, op, note="nabla_u nabla_y1(J)"),
            "J_y1y1": CatalogEntry(self.J_y1y1, 3, op, note="nabla_y1 nabla_y1(J)"),
            "K": CatalogEntry(self.K, 3, "structure-coefficient", note="from [nabla_y, nabla_y1]"),
            "L": CatalogEntry(self.L, 3, "structure-coefficient", note="from [nabla_u, nabla_y]"),
            "M": CatalogEntry(self.M, 3, "printed-formula", "irregular",
                              "printed form with the missing factor f restored in the first term"),
            "nabla_u M": CatalogEntry(self.nabla_u(self.M), 4, op, "irregular"),
            "nabla_y1 M": CatalogEntry(self.nabla_y1(self.M), 4, op, "irregular"),
        }
        return InvariantCatalog(entries)


@lru_cache(maxsize=1)
def default_frame() -> InvariantFrame:
    return InvariantFrame()


def frame_derivations():
    return default_frame().frame_derivations()


def structure_coefficients():
    return default_frame().structure_coefficients()


def third_order_invariants() -> tuple[sp.Expr, sp.Expr]:
    fr = default_frame()
    return fr.K, fr.L


def irregular_invariant_M() -> sp.Expr:
    return default_frame().M


def derived_invariants(catalog: InvariantCatalog | None = None) -> InvariantCatalog:
    """Extend ``catalog`` (default: just J) with J_u, J_y1, J_uu, J_uy1, J_y1y1."""
    fr = default_frame()
    base = catalog or InvariantCatalog({"J": fr.catalog.entries["J"]})
    names = ("J_u", "J_y1", "J_uu", "J_uy1", "J_y1y1")
    return base.extended(**{n: fr.catalog.entries[n] for n in names})


def invariant_catalog() -> InvariantCatalog:
    return default_frame().catalog


# -- regularity ---------------------------------------------------------------


@dataclass(frozen=True)
class Thresholds:
    y1: float = 1e-8
    f_u: float = 1e-8
    J_u: float = 1e-8
    irregular: float = 1e-10


@dataclass
class RegularityReport:
    points: np.ndarray  # (n, 3) rows (u, y, y1)
    singular: np.ndarray
    weakly_regular: np.ndarray
    regular: np.ndarray
    J_u: np.ndarray
    irregular: bool
    max_abs_J_u: float

    @property
    def counts(self) -> dict[str, int]:
        return {
            "points": len(self.points),
            "singular": int(self.singular.sum()),
            "weakly_regular": int(self.weakly_regular.sum()),
            "regular": int(self.regular.sum()),
        }

    def summary(self) -> dict:
        return {**self.counts, "irregular": self.irregular, "max_abs_J_u": self.max_abs_J_u}


def classify_jets(jp: JetPoint, thresholds: Thresholds = Thresholds()) -> dict[str, np.ndarray]:
    """Point flags for a (batched) jet of order >= 2."""
    y1v = np.atleast_1d(np.asarray(jp.y1, dtype=float))
    fu = np.atleast_1d(np.asarray(jp["f_u"], dtype=float))
    singular = np.abs(y1v) <= thresholds.y1
    weak = ~singular & (np.abs(fu) > thresholds.f_u)
    with np.errstate(all="ignore"):
        ju = np.where(weak, np.atleast_1d(_eval_safe(default_frame().J_u, jp)), np.nan)
    regular = weak & (np.abs(np.nan_to_num(ju)) > thresholds.J_u)
    return {"singular": singular, "weakly_regular": weak, "regular": regular, "J_u": ju}


def _eval_safe(e: sp.Expr, jp: JetPoint):
    (v,) = evaluate_many([e], jp)
    return v


def classify(F: SystemF, points: Iterable[Sequence[float]] | np.ndarray,
             thresholds: Thresholds = Thresholds()) -> RegularityReport:
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    jp = jet_of_system(F, (pts[:, 0], pts[:, 1], pts[:, 2]), 2)
    flags = classify_jets(jp, thresholds)
    ju = flags["J_u"]
    finite = np.isfinite(ju)
    max_ju = float(np.max(np.abs(ju[finite]))) if finite.any() else float("nan")
    irregular = bool(finite.any() and max_ju < thresholds.irregular)
    return RegularityReport(pts, flags["singular"], flags["weakly_regular"], flags["regular"],
                            ju, irregular, max_ju)


# -- Tresse derivatives ---------------------------------------------------------


class TresseDerivatives:
    """The derivations D/DJ, D/DJ_u, D/DJ_y1 dual to (J, J_u, J_y1).

    With T[a][b] = nabla_a(J_b), nabla_a = sum_b T[a][b] D/DJ_b, so the Tresse
    derivatives are T^{-1} applied to the frame.  Coefficients are evaluated
    numerically at jets; the symbolic inverse is never expanded.
    """

    CHART = ("J", "J_u", "J_y1")

    def __init__(self, frame: InvariantFrame | None = None):
        self.frame = frame or default_frame()
        fr = self.frame
        # rows nabla_u, nabla_y, nabla_y1; columns J, J_u, J_y1
        self.matrix_exprs = [
            [fr.J_u, fr.J_uu, fr.J_uy1],
            [sp.Integer(0), fr.nabla_y(fr.J_u), fr.nabla_y(fr.J_y1)],
            [fr.J_y1, fr.J_y1u, fr.J_y1y1],
        ]
        self.frame_exprs = [list(d.coeffs) for d in fr.frame_derivations()]

    def tresse_matrix(self, jp: JetPoint) -> np.ndarray:
        flat = evaluate_many([e for row in self.matrix_exprs for e in row], jp)
        return _stack(flat, 3)

    def frame_matrix(self, jp: JetPoint) -> np.ndarray:
        flat = evaluate_many([e for row in self.frame_exprs for e in row], jp)
        return _stack(flat, 3)

    def coefficients(self, jp: JetPoint) -> np.ndarray:
        """Rows D/DJ, D/DJ_u, D/DJ_y1 as coefficients of (D_u, D_y, D_y1)."""
        T = self.tresse_matrix(jp)
        N = self.frame_matrix(jp)
        cond = np.linalg.cond(T)
        if not np.all(np.isfinite(cond)) or np.any(cond > 1e12):
            raise np.linalg.LinAlgError("Tresse matrix singular: (J, J_u, J_y1) fail as chart")
        return np.linalg.solve(T, N)

    def apply(self, e: sp.Expr, jp: JetPoint) -> np.ndarray:
        """Values of (D/DJ e, D/DJ_u e, D/DJ_y1 e) at ``jp``."""
        grads = evaluate_many([total_derivative(e, b) for b in FRAME], jp)
        C = self.coefficients(jp)
        g = np.stack([np.broadcast_to(v, np.shape(C)[:-2]) for v in grads], axis=-1)
        return np.einsum("...ij,...j->...i", C, g)

    def lemma_coefficients(self, jp: JetPoint) -> np.ndarray:
        """The printed decomposition of nabla_u, nabla_y, nabla_y1 over the Tresse derivatives."""
        fr = self.frame
        Ju, Jy1 = fr.J_u, fr.J_y1
        Juu, Juy1, Jy1y1, K, L = fr.J_uu, fr.J_uy1, fr.J_y1y1, fr.K, fr.L
        rows = [
            [Ju, Juu, Juy1],
            [sp.Integer(0), Jy1y1 - Jy1 - L,
             (Ju * K + Jy1 * (Jy1 - Ju) - Jy1y1 * (Jy1 - Ju)) / Ju],
            [Jy1, Juy1 - Ju - Ju**2, Jy1y1],
        ]
        return _stack(evaluate_many([e for r in rows for e in r], jp), 3)

    def decomposition_residual(self, jp: JetPoint) -> np.ndarray:
        """max_ab |nabla_a - sum_b lemma[a][b] D/DJ_b| in the D-basis, relative."""
        C = self.coefficients(jp)
        N = self.frame_matrix(jp)
        P = self.lemma_coefficients(jp)
        R = N - np.einsum("...ab,...bc->...ac", P, C)
        return np.max(np.abs(R), axis=(-2, -1)) / (1 + np.max(np.abs(N), axis=(-2, -1)))


def _stack(flat: Sequence, n: int) -> np.ndarray:
    arrs = [np.asarray(v, dtype=float) for v in flat]
    shape = np.broadcast_shapes(*(a.shape for a in arrs))
    arrs = [np.broadcast_to(a, shape) for a in arrs]
    out = np.stack(arrs, axis=-1)
    return out.reshape(shape + (n, n))


def tresse_derivatives(frame: InvariantFrame | None = None) -> TresseDerivatives:
    return TresseDerivatives(frame)


__all__ = [
    "InvariantDerivation", "InvariantFrame", "InvariantCatalog", "CatalogEntry",
    "RegularityReport", "Thresholds", "TresseDerivatives", "basic_invariant_J", "commutator",
    "default_frame", "frame_derivations", "structure_coefficients", "third_order_invariants",
    "irregular_invariant_M", "derived_invariants", "invariant_catalog", "classify",
    "classify_jets", "tresse_derivatives", "REGULAR_NAMES", "IRREGULAR_NAMES", "SIGNATURE_NAMES",
]
