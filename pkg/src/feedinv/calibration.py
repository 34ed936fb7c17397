"""Randomized invariance oracle, affine-ansatz calibration, and the syzygy probe."""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from functools import lru_cache
from typing import Sequence

import numpy as np
import sympy as sp
from scipy import linalg

from .corpus import DEFAULT_BOX, random_regular_system, well_conditioned_points
from .frame import InvariantFrame, default_frame, f_u
from .jets import (
    JetPoint,
    SystemF,
    evaluate_many,
    expression_order,
    jet_of_system,
    jet_symbol,
    multi_indices,
    random_jet,
    text_of,
    y1,
)
from .pseudogroup import FeedbackMap, apply_feedback, random_feedback, transform_point, transformed_jet


@lru_cache(maxsize=512)
def transformed_system(F: SystemF, phi: FeedbackMap) -> SystemF:
    return apply_feedback(F, phi)


@dataclass
class InvarianceResidual:
    invariant: str
    system: str
    transform_seed: int | None
    point: tuple
    residual: float

    def __post_init__(self):
        if not (self.residual >= 0 and np.isfinite(self.residual)):
            raise ValueError(f"bad residual {self.residual} for {self.invariant} at {self.point}")


def paired_jets(F: SystemF, phi: FeedbackMap, points: np.ndarray, order: int) -> tuple[JetPoint, JetPoint]:
    """Jets of (phi F) at ``points`` and of F at the transformed points."""
    pts = np.atleast_2d(points)
    jg = transformed_jet(F, phi, tuple(pts.T), order)
    q = transform_point(phi, tuple(pts.T))
    jf = jet_of_system(F, q, order)
    return jg, jf


def invariance_residuals(exprs: Sequence[sp.Expr], F: SystemF, phi: FeedbackMap,
                         points: np.ndarray) -> np.ndarray:
    """|I^{phi F}(p) - I^F(phi(p))| / (1 + |I^F(phi(p))|), shape (len(exprs), len(points))."""
    order = max(max(expression_order(e) for e in exprs), 0)
    jg, jf = paired_jets(F, phi, points, order)
    a = np.atleast_2d(np.array(evaluate_many(exprs, jg), dtype=float))
    b = np.atleast_2d(np.array(evaluate_many(exprs, jf), dtype=float))
    return np.abs(a - b) / (1 + np.abs(b))


def invariance_residual(I: sp.Expr, F: SystemF, phi: FeedbackMap, p: Sequence[float]) -> float:
    r = invariance_residuals([I], F, phi, np.asarray([p], dtype=float))[0, 0]
    if not np.isfinite(r):
        raise ArithmeticError(f"invariant not finite at {tuple(p)} for {F.label}")
    return float(r)


def invariance_suite(names: Sequence[str], trials: int = 100, seed: int = 0,
                     catalog=None, system_factory=random_regular_system,
                     require_regular: bool = True) -> list[InvarianceResidual]:
    """One residual per (invariant, trial); trial t uses its own F, phi and point."""
    catalog = catalog or default_frame().catalog
    exprs = [catalog[n] for n in names]
    rng = np.random.default_rng(seed)
    out = []
    for t in range(trials):
        F = system_factory(seed * 1000 + t)
        phi_seed = seed * 1000 + t
        phi = random_feedback(phi_seed)
        p = well_conditioned_points(F, rng, 1, require_regular=require_regular,
                                    jets=lambda pts: transformed_jet(F, phi, tuple(pts.T), 2))
        res = invariance_residuals(exprs, F, phi, p)[:, 0]
        for n, r in zip(names, res):
            out.append(InvarianceResidual(n, F.label, phi_seed, tuple(map(float, p[0])), float(r)))
    return out


# -- affine ansatz ---------------------------------------------------------------


@dataclass
class AnsatzBasis:
    terms: list[sp.Expr]
    labels: list[str]

    @property
    def order3_mask(self) -> np.ndarray:
        return np.array([expression_order(t) >= 3 for t in self.terms])

    def __len__(self) -> int:
        return len(self.terms)

    def values(self, jp: JetPoint) -> np.ndarray:
        """(n_points, n_terms) matrix of term values."""
        return np.atleast_2d(np.array(evaluate_many(self.terms, jp), dtype=float)).T

    def pruned(self, seed: int = 0, rtol: float = 1e-10) -> "AnsatzBasis":
        """Drop terms that are numerically dependent on earlier ones."""
        jp = random_jet(np.random.default_rng(seed), max(expression_order(t) for t in self.terms),
                        size=4 * len(self.terms) + 20)
        A = self.values(jp)
        A = A / np.linalg.norm(A, axis=0)
        keep = []
        for j in range(A.shape[1]):
            cols = keep + [j]
            s = np.linalg.svd(A[:, cols], compute_uv=False)
            if s[-1] > rtol * s[0]:
                keep.append(j)
        return AnsatzBasis([self.terms[j] for j in keep], [self.labels[j] for j in keep])


def _split_terms(e: sp.Expr) -> list[sp.Expr]:
    """Additive terms of the expanded numerator over the common denominator, without numeric factors."""
    num, den = sp.fraction(sp.together(e))
    out = []
    for t in sp.Add.make_args(sp.expand(num)):
        _, rest = t.as_coeff_Mul()
        out.append(rest / den)
    return out


def affine_ansatz_basis(frame: InvariantFrame | None = None, include_order3: bool = True,
                        distractors: bool = True) -> AnsatzBasis:
    """Candidate terms: every additive term of the third-order invariants, products of the
    first/second-order invariants, and non-invariant distractors."""
    fr = frame or default_frame()
    terms: list[sp.Expr] = []
    labels: list[str] = []
    seen = set()

    def add(t: sp.Expr, label: str):
        if t in seen or t == 0:
            return
        seen.add(t)
        terms.append(t)
        labels.append(label)

    low = {"J": fr.J, "J_u": fr.J_u, "J_y1": fr.J_y1}
    add(sp.Integer(1), "1")
    names = list(low)
    for i, a in enumerate(names):
        add(low[a], a)
        for b in names[i:]:
            add(low[a] * low[b], f"{a}*{b}")
    if include_order3:
        for name in ("J_uu", "J_uy1", "J_y1y1", "K", "L"):
            for k, t in enumerate(_split_terms(getattr(fr, name))):
                add(t, f"{name}[{k}]")
        if distractors:
            for mi in multi_indices(3, exact=True):
                add(jet_symbol(mi), mi.name)
                add(y1 * jet_symbol(mi) / f_u, f"y1*{mi.name}/f_u")
    return AnsatzBasis(terms, labels)


@dataclass
class CalibrationResult:
    basis: AnsatzBasis
    nullspace: np.ndarray  # (n_terms, dim), orthonormal in scaled coordinates
    scales: np.ndarray  # column multipliers: coefficients = nullspace * scales
    singular_values: np.ndarray
    condition: float
    pure_order3_dimension: int
    rows: int
    invariants: list[sp.Expr] = field(default_factory=list)

    def coefficient_vectors(self) -> np.ndarray:
        """Nullspace directions as coefficients of the unscaled basis terms."""
        return self.nullspace * self.scales[:, None]

    def projection_residual(self, coeffs: np.ndarray) -> float:
        """Distance of a coefficient vector (unscaled) from the recovered space, relative."""
        v = coeffs / self.scales
        proj = self.nullspace @ (self.nullspace.T @ v)
        return float(np.linalg.norm(v - proj) / np.linalg.norm(v))

    def to_dict(self) -> dict:
        return {
            "terms": len(self.basis),
            "rows": self.rows,
            "nullspace_dimension": int(self.nullspace.shape[1]),
            "pure_order3_dimension": self.pure_order3_dimension,
            "condition": self.condition,
            "smallest_singular_values": [float(s) for s in self.singular_values[-12:]],
            "invariants": [text_of(e) for e in self.invariants],
        }


@dataclass(frozen=True)
class CalibrationSamples:
    """(F, phi, points) triples; each point yields one linear condition."""

    triples: tuple

    @classmethod
    def generate(cls, seed: int, systems: int = 12, points: int = 40) -> "CalibrationSamples":
        rng = np.random.default_rng(seed)
        out = []
        for k in range(systems):
            F = random_regular_system(seed * 100 + k)
            phi = random_feedback(seed * 100 + k)
            pts = well_conditioned_points(F, rng, points,
                                          jets=lambda q, F=F, phi=phi: transformed_jet(F, phi, tuple(q.T), 2))
            out.append((F, phi, pts))
        return cls(tuple(out))


def invariance_matrix(basis: AnsatzBasis, samples: CalibrationSamples) -> np.ndarray:
    """Rows T_a^{phi F}(p) - T_a^F(phi(p)) over all sample points."""
    order = max(expression_order(t) for t in basis.terms)
    blocks = []
    for F, phi, pts in samples.triples:
        jg, jf = paired_jets(F, phi, pts, max(order, 0))
        blocks.append(basis.values(jg) - basis.values(jf))
    return np.vstack(blocks)


def calibrate_affine_invariants(basis: AnsatzBasis, samples: CalibrationSamples,
                                rtol: float = 1e-9, verify: CalibrationSamples | None = None,
                                verify_tol: float = 1e-6) -> CalibrationResult:
    """Numerical nullspace of the invariance conditions over the ansatz terms."""
    A = invariance_matrix(basis, samples)
    if A.shape[0] < A.shape[1]:
        raise ValueError(f"need at least {A.shape[1]} sample rows, have {A.shape[0]}")
    # scale terms by their typical size so the rank threshold is meaningful
    ref = _term_scales(basis, samples)
    As = A * ref
    _, s, vt = linalg.svd(As, full_matrices=True)
    s_full = np.zeros(A.shape[1])
    s_full[: s.size] = s
    rank = int(np.sum(s_full > rtol * s_full[0]))
    null = vt[rank:].T
    if null.shape[1] == 0:
        raise ValueError("empty nullspace: ansatz basis too small")
    cond = float(s_full[0] / s_full[rank - 1]) if rank else float("inf")
    coeffs = null * ref[:, None]
    pure = pure_order3_rank(basis, coeffs)
    invariants = []
    for k in range(coeffs.shape[1]):
        c = coeffs[:, k]
        c = c / np.max(np.abs(c))
        invariants.append(sum(sp.Float(v, 12) * t for v, t in zip(c, basis.terms) if abs(v) > 1e-12))
    result = CalibrationResult(basis, null, ref, s_full, cond, pure, A.shape[0], invariants)
    if verify is not None:
        res = np.abs(invariance_matrix(basis, verify) @ coeffs)
        scale = 1 + np.abs(_values_at_targets(basis, verify) @ coeffs)
        worst = float(np.max(res / scale))
        if worst > verify_tol:
            raise ArithmeticError(f"recovered invariants fail fresh samples: residual {worst:.3e}")
    return result


def pure_order3_rank(basis: AnsatzBasis, coeffs: np.ndarray, jets: int = 3, seed: int = 7,
                     rtol: float = 1e-6) -> int:
    """Number of functionally independent third-order invariants among the combinations.

    Products with lower-order invariants (J_u * J_uu, ...) add nothing: the count
    is the rank of the gradients with respect to the ten order-3 coordinates.
    """
    if coeffs.size == 0:
        return 0
    grads = [[sp.diff(t, jet_symbol(mi)) for mi in multi_indices(3, exact=True)] for t in basis.terms]
    flat = [g for row in grads for g in row]
    if all(g == 0 for g in flat):
        return 0
    rng = np.random.default_rng(seed)
    ranks = []
    for _ in range(jets):
        jp = random_jet(rng, 3)
        vals = np.array(evaluate_many(flat, jp), dtype=float).reshape(len(basis), 10)
        G = coeffs.T @ vals
        s = np.linalg.svd(G, compute_uv=False)
        ranks.append(int(np.sum(s > rtol * s[0])) if s[0] > 0 else 0)
    return max(set(ranks), key=ranks.count)


def _term_scales(basis: AnsatzBasis, samples: CalibrationSamples) -> np.ndarray:
    vals = _values_at_targets(basis, samples)
    rms = np.sqrt(np.mean(vals**2, axis=0))
    rms[rms == 0] = 1.0
    return 1.0 / rms


def _values_at_targets(basis: AnsatzBasis, samples: CalibrationSamples) -> np.ndarray:
    order = max(expression_order(t) for t in basis.terms)
    blocks = []
    for F, phi, pts in samples.triples:
        _, jf = paired_jets(F, phi, pts, max(order, 0))
        blocks.append(basis.values(jf))
    return np.vstack(blocks)


def expression_coefficients(e: sp.Expr, basis: AnsatzBasis, seed: int = 1) -> tuple[np.ndarray, float]:
    """Least-squares coefficients of ``e`` over the basis at random jets, and the fit residual."""
    order = max(expression_order(e), max(expression_order(t) for t in basis.terms))
    jp = random_jet(np.random.default_rng(seed), order, size=3 * len(basis) + 50)
    A = basis.values(jp)
    b = np.asarray(evaluate_many([e], jp)[0], dtype=float)
    c, *_ = np.linalg.lstsq(A, b, rcond=None)
    fit = float(np.linalg.norm(A @ c - b) / np.linalg.norm(b))
    return c, fit


def dump_matrix_csv(path: str, basis: AnsatzBasis, A: np.ndarray) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(basis.labels)
        w.writerows(A.tolist())


# -- second syzygy ---------------------------------------------------------------


def syzygy_expression(candidate: str, frame: InvariantFrame | None = None) -> sp.Expr:
    """K_u - L_y1 + ((J_y1u + J_u - J_x^2)/J_u) L - (J_uu/J_u) K with J_x := ``candidate``."""
    fr = frame or default_frame()
    Jx = {"J_u": fr.J_u, "J_y1": fr.J_y1}[candidate]
    K_u = fr.nabla_u(fr.K)
    L_y1 = fr.nabla_y1(fr.L)
    return K_u - L_y1 + (fr.J_y1u + fr.J_u - Jx**2) / fr.J_u * fr.L - fr.J_uu / fr.J_u * fr.K


@dataclass
class SyzygyCandidateReport:
    candidate: str
    matched: int
    spread: float
    within_system_spread: float
    consistent: bool | None
    pair_spreads: dict = field(default_factory=dict)


@dataclass
class SyzygyReport:
    candidates: list[SyzygyCandidateReport]
    systems: list[str]
    radius: float
    tolerance: float
    note: str = ""

    @property
    def winner(self) -> str | None:
        ok = [c.candidate for c in self.candidates if c.consistent]
        return ok[0] if len(ok) == 1 else None

    def to_dict(self) -> dict:
        d = {
            "systems": self.systems,
            "radius": self.radius,
            "tolerance": self.tolerance,
            "winner": self.winner,
            "note": self.note,
            "candidates": [asdict(c) for c in self.candidates],
        }
        return json.loads(json.dumps(d, default=float))


def syzygy_probe(systems: Sequence[SystemF], candidates: Sequence[str] = ("J_u", "J_y1"),
                 box: Sequence[Sequence[float]] = DEFAULT_BOX, samples: int = 40,
                 radius: float = 1e-3, tolerance: float = 1e-4, min_matches: int = 5,
                 seed: int = 0) -> SyzygyReport:
    """Compare W across systems at points with equal (J, J_u, J_y1).

    For each sample p of system A, the point q of system B with the same chart
    coordinates is found by Newton's method, so matched pairs lie well within
    ``radius`` of each other in chart space.
    """
    from .equivalence import ChartMap

    rng = np.random.default_rng(seed)
    exprs = {c: syzygy_expression(c) for c in candidates}
    charts = [ChartMap(F, box) for F in systems]
    pts = [well_conditioned_points(F, rng, samples, box) for F in systems]
    vals = {}
    for i, F in enumerate(systems):
        jp = jet_of_system(F, tuple(pts[i].T), 4)
        vals[i] = dict(zip(candidates, evaluate_many([exprs[c] for c in candidates], jp)))
    reports = []
    for c in candidates:
        spreads = {}
        matched = 0
        worst = 0.0
        within = 0.0
        for i in range(len(systems)):
            # a system against itself: matched exactly, spread reflects evaluation noise only
            q, ok = charts[i].solve(charts[i].chart_values(pts[i]), pts[i])
            if ok.any():
                jq = jet_of_system(systems[i], tuple(q[ok].T), 4)
                wq = np.asarray(evaluate_many([exprs[c]], jq)[0])
                w0 = np.asarray(vals[i][c])[ok]
                within = max(within, float(np.max(np.abs(wq - w0) / (1 + np.abs(w0)))))
            for j in range(len(systems)):
                if i == j:
                    continue
                target = charts[i].chart_values(pts[i])
                seed_pts = charts[j].nearest_base_points(target)
                q, ok = charts[j].solve(target, seed_pts, radius=radius)
                n = int(ok.sum())
                if n == 0:
                    spreads[f"{systems[i].label}->{systems[j].label}"] = None
                    continue
                jq = jet_of_system(systems[j], tuple(q[ok].T), 4)
                wq = np.asarray(evaluate_many([exprs[c]], jq)[0])
                w0 = np.asarray(vals[i][c])[ok]
                dev = float(np.max(np.abs(wq - w0) / (1 + np.abs(w0))))
                spreads[f"{systems[i].label}->{systems[j].label}"] = dev
                matched += n
                worst = max(worst, dev)
        consistent = None if matched < min_matches else worst <= tolerance
        reports.append(SyzygyCandidateReport(c, matched, worst, within, consistent, spreads))
    note = "" if all(r.matched >= min_matches for r in reports) else "insufficient chart overlap for some candidates"
    return SyzygyReport(reports, [F.label for F in systems], radius, tolerance, note)


__all__ = [
    "InvarianceResidual", "AnsatzBasis", "CalibrationResult", "CalibrationSamples", "SyzygyReport",
    "invariance_residual", "invariance_residuals", "invariance_suite", "paired_jets",
    "transformed_system", "affine_ansatz_basis", "invariance_matrix", "calibrate_affine_invariants",
    "expression_coefficients", "dump_matrix_csv", "syzygy_expression", "syzygy_probe",
]
