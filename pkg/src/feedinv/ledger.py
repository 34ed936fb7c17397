"""Printed-versus-normative formula ledger.

Closed forms as printed in the literature are kept here as fixtures. Each one is
compared with the normative expression that the library derives from the
invariant frame, symbolically where possible, and with the invariance oracle.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from functools import lru_cache
import numpy as np
import sympy as sp

from .corpus import DEFAULT_BOX, random_irregular_system, random_regular_system, well_conditioned_points
from .frame import default_frame
from .jets import fsym, is_zero, simplify, text_of, y1
from .pseudogroup import random_feedback

f = fsym()
z = sp.Symbol("z")


def _g(s: str) -> sp.Symbol:
    return fsym(s)


@lru_cache(maxsize=1)
def printed_fixtures() -> dict[str, sp.Expr]:
    """The printed closed forms, transcribed verbatim (including their defects)."""
    fr = default_frame()
    Ju, Jy1, Jy1y1, Juu, Jy1u = fr.J_u, fr.J_y1, fr.J_y1y1, fr.J_uu, fr.J_y1u
    alpha = -(y1**3 * _g("uy1") - 2 * z**2 * _g("y") + y1**2 * f * _g("y1y1") - 2 * y1 * f * _g("y1")
              + 2 * f**2) / (y1 * (-2 * _g("u") + y1 * _g("uy1")))
    J_u = (y1 * _g("uy1") - 2 * _g("u")) / f
    J_y1 = (y1**2 * _g("y1y1") - 2 * y1 * _g("y1") + 2 * f) / y1**2
    K = (y1**2 * _g("uy1y1") - (3 * y1 * Ju - y1 * Jy1u) / Ju * _g("yy1") - y1 * Ju * _g("yy1")
         + 2 * (Jy1u + 2 * Ju) / Ju * _g("u") + 2 * Ju * _g("y")
         - ((Ju * Jy1 + Jy1 - Jy1y1) * Ju + Jy1 * Jy1u) / (y1 * Ju) * f
         + (Ju - Jy1) * (Jy1y1 + Jy1) / Ju)
    L = (y1**2 / _g("u") * _g("uyy1") - (2 + Ju) * y1 / _g("u") * _g("uy") - y1 * Juu / Ju * _g("yy1")
         + 2 * Juu / Ju * _g("y") + (Jy1u / y1 - Jy1 * Juu / (y1 * Ju)) * f + Jy1 + Jy1y1)
    M = (y1 * _g("y1y1y1") + y1**2 * _g("yy1y1") - f * _g("y1y1") - 2 * y1 * _g("yy1")
         + 2 * f * _g("y1") / y1 + 2 * _g("y") - 2 * f**2 / y1**2)
    return {"nabla_y coefficient": alpha, "J_u": J_u, "J_y1": J_y1, "K": K, "L": L, "M": M}


@dataclass
class LedgerEntry:
    name: str
    printed: str
    normative: str
    difference: str | None  # simplified printed - normative, None when not computed
    symbolic_match: bool
    printed_residual: float | None  # worst invariance residual of the printed form
    normative_residual: float | None
    verdict: str
    note: str = ""
    variants: dict = field(default_factory=dict)


@dataclass
class FormulaLedger:
    entries: list[LedgerEntry]
    syzygy: dict | None = None
    config: dict = field(default_factory=dict)

    def __getitem__(self, name: str) -> LedgerEntry:
        for e in self.entries:
            if e.name == name:
                return e
        raise KeyError(name)

    def to_dict(self) -> dict:
        return {"config": self.config, "entries": [asdict(e) for e in self.entries], "syzygy": self.syzygy}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, default=float)

    def table(self) -> str:
        rows = [("formula", "symbolic match", "printed resid", "normative resid", "verdict")]
        for e in self.entries:
            rows.append((e.name, "yes" if e.symbolic_match else "no", _fmt(e.printed_residual),
                         _fmt(e.normative_residual), e.verdict))
        if self.syzygy:
            for c in self.syzygy["candidates"]:
                rows.append((f"syzygy J_x = {c['candidate']}", "-", "-", _fmt(c["spread"]),
                             {True: "consistent", False: "inconsistent", None: "insufficient data"}[c["consistent"]]))
        widths = [max(len(r[i]) for r in rows) for i in range(5)]
        lines = ["  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip() for r in rows]
        lines.insert(1, "  ".join("-" * w for w in widths))
        return "\n".join(lines)


def _fmt(x) -> str:
    return "-" if x is None else f"{x:.2e}"


def _difference(a: sp.Expr, b: sp.Expr) -> tuple[str, bool]:
    d = simplify(a - b)
    return text_of(d), bool(d == 0 or is_zero(d))


def _residual(e: sp.Expr, irregular: bool, trials: int, seed: int) -> float:
    from .calibration import invariance_residuals

    worst = 0.0
    rng = np.random.default_rng(seed)
    for t in range(trials):
        F = random_irregular_system(seed + t) if irregular else random_regular_system(seed + t)
        phi = random_feedback(seed + t, box=(DEFAULT_BOX[0], DEFAULT_BOX[1]), strength=0.5)
        pts = well_conditioned_points(F, rng, 3, DEFAULT_BOX, require_regular=not irregular)
        (r,) = invariance_residuals([e], F, phi, pts)
        worst = max(worst, float(np.nanmax(r)))
    return worst


def syzygy_order4_dependence(candidate: str, seed: int = 0, jets: int = 3) -> float:
    """Largest |dW/df_sigma| over order-4 coordinates at random jets.

    A function of (J, J_u, J_y1) has order 2, so a nonzero value rules the
    candidate out independently of any chart matching.
    """
    from .calibration import syzygy_expression
    from .jets import jet_symbol, multi_indices, random_jet, evaluate_many

    W = syzygy_expression(candidate)
    ders = [sp.diff(W, jet_symbol(mi)) for mi in multi_indices(4, exact=True)]
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(jets):
        vals = evaluate_many(ders, random_jet(rng, 4))
        worst = max(worst, float(np.nanmax(np.abs(vals))))
    return worst


def build_ledger(trials: int = 6, seed: int = 0, syzygy: bool = True,
                 syzygy_systems: int = 3, syzygy_samples: int = 40) -> FormulaLedger:
    """Compare every printed fixture with its normative counterpart."""
    fr = default_frame()
    printed = printed_fixtures()
    entries = []

    # the nabla_y coefficient contains a stray symbol z; try the readings that remove it
    alpha_p = printed["nabla_y coefficient"]
    variants = {
        "as printed": alpha_p,
        "z -> y1": alpha_p.subs(z, y1),
        "z -> y1, leading f_uy1 -> f_yy1": (alpha_p.subs(z, y1)
                                            + (y1**3 * (_g("uy1") - _g("yy1")))
                                            / (y1 * (-2 * _g("u") + y1 * _g("uy1")))),
    }
    var_report = {}
    match_name = None
    for k, e in variants.items():
        diff, ok = _difference(e, fr.alpha)
        var_report[k] = {"expression": text_of(e), "difference": diff, "match": ok}
        if ok and match_name is None:
            match_name = k
    diff, ok = _difference(alpha_p, fr.alpha)
    entries.append(LedgerEntry(
        "nabla_y coefficient", text_of(alpha_p), text_of(fr.alpha), diff, ok, None, None,
        f"normative matches reading '{match_name}'" if match_name else "no reading matches",
        "the coefficient is fixed by nabla_y(J) = 0; the printed form contains an undefined z",
        var_report))

    for name, norm, irregular, note in (
        ("J_u", fr.J_u, False, "nabla_u(J); printed denominator f should be f_u"),
        ("J_y1", fr.J_y1, False, "nabla_y1(J); printed denominator y1^2 should be y1"),
        ("K", fr.K, False, "printed form read with J_y1u = nabla_y1 nabla_u(J); normative K from [nabla_y, nabla_y1]"),
        ("L", fr.L, False, "printed form read with J_y1u = nabla_y1 nabla_u(J); normative L from [nabla_u, nabla_y]"),
        ("M", fr.M, True, "printed first term y1 f_y1y1y1 lacks the factor f"),
    ):
        p = printed[name]
        diff, ok = _difference(p, norm)
        rp = _residual(p, irregular, trials, seed)
        rn = _residual(norm, irregular, trials, seed)
        inv_p = rp <= 1e-7
        if ok:
            verdict = "printed form confirmed"
        elif inv_p:
            verdict = "printed form differs but is invariant"
        else:
            verdict = "printed form is not invariant; normative form used"
        entries.append(LedgerEntry(name, text_of(p), text_of(norm), diff, ok, rp, rn, verdict, note))

    # the printed nabla_u M happens to be invariant even though M is not
    pM = printed["M"]
    rp = _residual(fr.nabla_u(pM), True, trials, seed)
    rn = _residual(fr.nabla_u(fr.M), True, trials, seed)
    entries.append(LedgerEntry(
        "nabla_u M", "nabla_u(printed M)", "nabla_u(M)", None, False, rp, rn,
        "both invariant" if max(rp, rn) <= 1e-7 else "printed derivative not invariant",
        "the defect of the printed M is annihilated by nabla_u"))

    syz = None
    if syzygy:
        from .calibration import syzygy_probe
        systems = [random_regular_system(seed + 100 + i) for i in range(syzygy_systems)]
        syz = syzygy_probe(systems, samples=syzygy_samples, seed=seed).to_dict()
        syz["order4_dependence"] = {c: syzygy_order4_dependence(c, seed=seed) for c in ("J_u", "J_y1")}
    return FormulaLedger(entries, syz, {"trials": trials, "seed": seed})


__all__ = ["FormulaLedger", "LedgerEntry", "build_ledger", "printed_fixtures"]
