"""Acceptance criteria 1-11 as runnable checks.

Shared by ``tests/test_acceptance.py`` and ``feedinv selftest``. Each check
measures, prints one line, and never decides its own tolerance.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Iterable

import numpy as np
import sympy as sp

from . import equivalence as eq
from .calibration import (CalibrationSamples, affine_ansatz_basis, calibrate_affine_invariants,
                          expression_coefficients, invariance_residuals, invariance_suite)
from .corpus import DEFAULT_BOX, random_irregular_system, random_regular_system, well_conditioned_points
from .frame import REGULAR_NAMES, classify, default_frame
from .jets import evaluate_many, jet_of_system, jet_symbol, multi_indices, random_jet, simplify, u, y
from .pseudogroup import apply_feedback, orbit_report, random_feedback, transform_point, transformed_jet

FEEDBACK_BOX = (DEFAULT_BOX[0], DEFAULT_BOX[1])
FEEDBACK_STRENGTH = 0.5
ROUND_TRIP_DOMAIN = "u=0.5:1.5:15,y=-1:1:15,y1=0.5:1.5:15"
RECOVERY_DOMAIN = "u=0.5:1.5:6,y=-1:1:6,y1=0.5:1.5:6"


@dataclass
class CriterionResult:
    number: int
    title: str
    passed: bool
    detail: str
    seconds: float = 0.0
    data: dict = field(default_factory=dict, repr=False)

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"[{status}] criterion {self.number:2d} {self.title}: {self.detail} ({self.seconds:.1f}s)"


def _pair(seed: int):
    F = random_regular_system(seed)
    phi = random_feedback(seed, box=FEEDBACK_BOX, strength=FEEDBACK_STRENGTH)
    return F, phi, apply_feedback(F, phi)


def criterion_1(seed: int = 0, trials: int = 100) -> CriterionResult:
    rows = invariance_suite(REGULAR_NAMES, trials=trials, seed=seed)
    worst = {}
    for r in rows:
        worst[r.invariant] = max(worst.get(r.invariant, 0.0), r.residual)
    top = max(worst.values())
    return CriterionResult(1, "invariance suite", top <= 1e-7,
                           f"{trials} triples x {len(REGULAR_NAMES)} invariants, worst residual {top:.2e}",
                           data={"worst": worst})


def criterion_2(seed: int = 0, jets: int = 1000) -> CriterionResult:
    fr = default_frame()
    e = simplify(fr.nabla_y(fr.J))
    literal = e == 0
    jp = random_jet(np.random.default_rng(seed), 2, size=jets)
    (vals,) = evaluate_many([fr.nabla_y(fr.J)], jp)
    worst = float(np.max(np.abs(np.broadcast_to(vals, (jets,)))))
    return CriterionResult(2, "first syzygy nabla_y J = 0", bool(literal) and worst <= 1e-12,
                           f"simplifies to {e}; max |value| over {jets} jets {worst:.2e}")


# c^gamma_{alpha,beta} identities, keyed as in InvariantFrame.structure
def _fixed_identities(fr) -> dict:
    return {
        ("u", "y", "y1"): sp.Integer(1),
        ("u", "y", "y"): sp.Integer(0),
        ("u", "y1", "u"): 1 + fr.J_u,
        ("u", "y1", "y"): sp.Integer(0),
        ("u", "y1", "y1"): sp.Integer(0),
        ("y", "y1", "y"): sp.Integer(-1),
        ("y", "y1", "y1"): -fr.J,
    }


def criterion_3(seed: int = 0, jets: int = 100) -> CriterionResult:
    fr = default_frame()
    c = fr.structure
    symbolic = simplify(c[("u", "y1", "u")] - (1 + fr.J_u)) == 0
    ids = _fixed_identities(fr)
    jp = random_jet(np.random.default_rng(seed), 3, size=jets)
    diffs = evaluate_many([c[k] - v for k, v in ids.items()], jp)
    worst = max(float(np.max(np.abs(np.broadcast_to(d, (jets,))))) for d in diffs)
    return CriterionResult(3, "commutation identities", bool(symbolic) and worst <= 1e-9,
                           f"c^u_(u,y1) - (1 + J_u) symbolic zero: {bool(symbolic)}; "
                           f"{len(ids)} identities, worst {worst:.2e} over {jets} jets")


def criterion_4(seed: int = 0, jets: int = 20) -> CriterionResult:
    rng = np.random.default_rng(seed)
    expected = {1: 6, 2: 10, 3: 15}
    bad = []
    increments = set()
    for t in range(jets):
        F = random_regular_system(seed * 1000 + t)
        p = well_conditioned_points(F, rng, 1, require_regular=False)[0]
        jp = jet_of_system(F, tuple(p), 3)
        reps = {k: orbit_report(jp, k) for k in expected}
        if any(reps[k].rank != expected[k] for k in expected) or reps[1].corank != 1:
            bad.append((t, {k: reps[k].rank for k in expected}))
        increments.add((reps[2].corank - reps[1].corank, reps[3].corank - reps[2].corank))
    ok = not bad and increments == {(2, 5)}
    return CriterionResult(4, "orbit dimensions", ok,
                           f"{jets - len(bad)}/{jets} jets give ranks 6/10/15; "
                           f"pure-order corank increments {sorted(increments)}", data={"bad": bad})


def criterion_5(seed: int = 0, jets: int = 100) -> CriterionResult:
    fr = default_frame()
    exprs = [getattr(fr, n) for n in ("J_uu", "J_uy1", "J_y1y1", "K", "L")]
    coords = [jet_symbol(mi) for mi in multi_indices(3, exact=True)]
    grads = [sp.diff(e, s) for e in exprs for s in coords]
    jp = random_jet(np.random.default_rng(seed), 3, size=jets)
    vals = np.array([np.broadcast_to(v, (jets,)) for v in evaluate_many(grads, jp)], dtype=float)
    jac = vals.T.reshape(jets, 5, 10)
    s = np.linalg.svd(jac, compute_uv=False)
    ranks = np.sum(s > 1e-8 * s[:, :1], axis=1)
    n5 = int(np.sum(ranks == 5))
    return CriterionResult(5, "order-3 independence", n5 == jets,
                           f"rank 5 at {n5}/{jets} jets; smallest sigma_5/sigma_1 {float(np.min(s[:, 4] / s[:, 0])):.2e}")


@lru_cache(maxsize=None)
def _round_trip_manifold(system_text: str, label: str, domain: str, threads: int):
    from .jets import SystemF

    return eq.sample_signature(SystemF.parse(system_text, label), eq.Domain.parse(domain), threads=threads)


def _manifold(F, domain, threads):
    return _round_trip_manifold(str(F), F.label, domain, threads)


def criterion_6(pairs: Iterable[int] = range(10), domain: str = ROUND_TRIP_DOMAIN,
                threads: int = 1, seed: int = 0) -> CriterionResult:
    rng = np.random.default_rng(seed)
    devs, overlaps, verdicts, equiv_err = [], [], [], 0.0
    for s in pairs:
        F, phi, G = _pair(s)
        v = eq.compare_signatures(_manifold(F, domain, threads), _manifold(G, domain, threads))
        verdicts.append(v.verdict)
        devs.append(v.max_deviation)
        overlaps.append(v.overlap)
        p = well_conditioned_points(G, rng, 50)
        q = np.array(transform_point(phi, tuple(p.T)), dtype=float).T
        a, b = eq.signature_at(G, p), eq.signature_at(F, q)
        equiv_err = max(equiv_err, float(np.max(np.abs(a - b) / (1 + np.abs(b)))))
    n = sum(v == "equivalent" for v in verdicts)
    ok = n == len(verdicts) and max(devs) <= 1e-4 and equiv_err <= 1e-7
    return CriterionResult(6, "equivalence round trip", ok,
                           f"{n}/{len(verdicts)} equivalent, max deviation {max(devs):.2e}, "
                           f"overlap {min(overlaps):.2f}-{max(overlaps):.2f}, sigma-equivariance {equiv_err:.2e}",
                           data={"verdicts": verdicts, "deviations": devs})


def criterion_7(pairs: Iterable[int] = range(10), domain: str = ROUND_TRIP_DOMAIN,
                threads: int = 1) -> CriterionResult:
    verdicts, devs = [], []
    for s in pairs:
        F, _, G = _pair(s)
        from .jets import SystemF

        H = SystemF(G.expr + sp.Rational(1, 10) * y, f"{G.label} + 0.1*y")
        v = eq.compare_signatures(_manifold(F, domain, threads), _manifold(H, domain, threads))
        verdicts.append(v.verdict)
        devs.append(v.max_deviation)
    n_eq = verdicts.count("equivalent")
    finite = [d for d in devs if np.isfinite(d)]
    return CriterionResult(7, "sensitivity", n_eq == 0,
                           f"verdicts {dict((k, verdicts.count(k)) for k in sorted(set(verdicts)))}; "
                           f"deviation {min(finite):.2e}-{max(finite):.2e}" if finite else "no finite deviation",
                           data={"verdicts": verdicts, "deviations": devs})


def criterion_8(pairs: Iterable[int] = range(5), domain: str = RECOVERY_DOMAIN, threads: int = 1) -> CriterionResult:
    fractions, worst, smooth = [], 0.0, []
    dom = eq.Domain.parse(domain)
    pts = dom.interior()
    for s in pairs:
        F, phi, G = _pair(s)
        truth_fn = sp.lambdify((u, y), [phi.U, phi.Y, phi.dY, phi.ddY], "numpy")
        good = 0
        for p in pts:
            # recover maps the base system F onto G = phi F
            try:
                r = eq.recover_transform(F, G, p)
            except eq.RecoveryError:
                continue
            truth = np.array([float(t) for t in np.broadcast_to(truth_fn(p[0], p[1]), (4,))])
            err = float(np.max(np.abs(r.values - truth)))
            if err <= 1e-6:
                good += 1
            worst = max(worst, err) if err <= 1e-3 else worst
        fractions.append(good / len(pts))
        rep = eq.verify_smoothness_conditions(F, G, dom, threads=threads)
        viol = [v for v in rep.max_violation.values() if v is not None]
        smooth.append((rep.passed, max(viol) if viol else float("nan")))
    ok = min(fractions) >= 0.95 and all(p for p, _ in smooth)
    return CriterionResult(8, "transformation recovery", ok,
                           f"converged within 1e-6 at {min(fractions):.1%}-{max(fractions):.1%} of {len(pts)} points; "
                           f"smoothness passed {sum(p for p, _ in smooth)}/{len(smooth)}, "
                           f"max violation {max(v for _, v in smooth):.2e}",
                           data={"fractions": fractions, "smoothness": smooth})


def criterion_9(systems: int = 10, seed: int = 0) -> CriterionResult:
    rng = np.random.default_rng(seed)
    fr = default_frame()
    cat = fr.catalog
    names = ("M", "nabla_y1 M", "nabla_u M")
    exprs = [cat[n] for n in names]
    irregular, worst = 0, {n: 0.0 for n in names}
    max_ju = 0.0
    for s in range(systems):
        F = random_irregular_system(seed * 1000 + s)
        rep = classify(F, eq.Domain.from_box(DEFAULT_BOX, 6).grid())
        irregular += rep.irregular
        max_ju = max(max_ju, rep.max_abs_J_u)
        phi = random_feedback(seed * 1000 + s, box=FEEDBACK_BOX, strength=FEEDBACK_STRENGTH)
        p = well_conditioned_points(F, rng, 5, require_regular=False,
                                    jets=lambda q: transformed_jet(F, phi, tuple(q.T), 2))
        res = invariance_residuals(exprs, F, phi, p)
        for n, r in zip(names, res):
            worst[n] = max(worst[n], float(np.max(r)))
    top = max(worst.values())
    return CriterionResult(9, "irregular branch", irregular == systems and top <= 1e-7,
                           f"{irregular}/{systems} irregular (max |J_u| {max_ju:.1e}); "
                           + ", ".join(f"{n} {v:.1e}" for n, v in worst.items()))


def criterion_10(seed: int = 1) -> CriterionResult:
    basis = affine_ansatz_basis().pruned()
    samples = CalibrationSamples.generate(seed, systems=12, points=3 * len(basis) // 12 + 10)
    res = calibrate_affine_invariants(basis, samples)
    fr = default_frame()
    proj = {}
    for n in ("K", "L"):
        c, _ = expression_coefficients(getattr(fr, n), basis)
        proj[n] = res.projection_residual(c)
    ok = res.pure_order3_dimension == 5 and max(proj.values()) <= 1e-6
    return CriterionResult(10, "affine-ansatz calibration", ok,
                           f"pure order-3 dimension {res.pure_order3_dimension}; "
                           f"projection residual K {proj['K']:.1e}, L {proj['L']:.1e}")


def criterion_11(seed: int = 0, trials: int = 3) -> CriterionResult:
    from .ledger import build_ledger

    led = build_ledger(trials=trials, seed=seed, syzygy_systems=3, syzygy_samples=30)
    need = ("nabla_y coefficient", "J_u", "J_y1")
    covered = [n for n in need if led[n].difference is not None or led[n].printed_residual is not None]
    cands = {c["candidate"] for c in (led.syzygy or {}).get("candidates", [])}
    syz_ok = cands == {"J_u", "J_y1"} and all(
        c["consistent"] is not None or c["spread"] is not None for c in led.syzygy["candidates"])
    ok = len(covered) == len(need) and syz_ok
    summary = "; ".join(f"{e.name}: {e.verdict}" for e in led.entries if e.name in need)
    syz = ", ".join(f"J_x={c['candidate']} {'consistent' if c['consistent'] else 'inconsistent'}"
                    for c in led.syzygy["candidates"])
    return CriterionResult(11, "formula ledger", ok, f"{summary}; syzygy {syz}", data={"ledger": led.to_dict()})


CRITERIA: dict[int, Callable[..., CriterionResult]] = {
    1: criterion_1, 2: criterion_2, 3: criterion_3, 4: criterion_4, 5: criterion_5, 6: criterion_6,
    7: criterion_7, 8: criterion_8, 9: criterion_9, 10: criterion_10, 11: criterion_11,
}


def run_criterion(n: int, **kw) -> CriterionResult:
    t0 = time.perf_counter()
    fn = CRITERIA[n]
    accepted = fn.__code__.co_varnames[: fn.__code__.co_argcount]
    r = fn(**{k: v for k, v in kw.items() if k in accepted})
    r.seconds = time.perf_counter() - t0
    return r


def run_all(numbers: Iterable[int] | None = None, echo: Callable[[str], None] | None = print,
            **kw) -> list[CriterionResult]:
    out = []
    for n in numbers or CRITERIA:
        r = run_criterion(n, **kw)
        if echo:
            echo(r.line())
        out.append(r)
    return out


__all__ = ["CRITERIA", "CriterionResult", "run_all", "run_criterion"]
