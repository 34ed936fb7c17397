"""Seeded random systems and well-conditioned sample points for property suites."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
import sympy as sp

from .frame import classify_jets
from .jets import JetPoint, SystemF, jet_of_system, u, y, y1

DEFAULT_BOX = ((0.5, 1.5), (-1.0, 1.0), (0.5, 1.5))


def _q(x: float) -> sp.Rational:
    return sp.Rational(str(round(float(x), 3)))


def random_regular_system(seed: int) -> SystemF:
    """Polynomial/trigonometric F with f_u > 0 and u-y1 coupling (so J_u is not constant)
    on the default box."""
    rng = np.random.default_rng(seed)
    c = [_q(v) for v in rng.uniform(0.2, 1.0, 9)]
    s = [_q(v) for v in rng.uniform(-1.0, 1.0, 4)]
    expr = (c[0] * 2 * u + c[1] * u**3 / 3 + c[2] * u * y1**2 + c[3] * u**2 * y1 / 2
            + s[0] * y * y1 + s[1] * y1**3 / 3 + s[2] * sp.sin(c[4] * 2 * y)
            + s[3] * sp.cos(y1) * y + c[5] * u * sp.sin(y) / 4 + c[6] * y**2 * y1 / 2)
    return SystemF(expr, label=f"regular#{seed}")


def random_irregular_system(seed: int) -> SystemF:
    """F = A(y, y1) + B(u, y) y1^2 with B_u > 0 on the default box."""
    rng = np.random.default_rng(seed + 10_000)
    c = [_q(v) for v in rng.uniform(0.2, 1.0, 6)]
    s = [_q(v) for v in rng.uniform(-1.0, 1.0, 5)]
    A = s[0] * sp.sin(y) * y1 + s[1] * y1**3 / 3 + s[2] * y * y1**2 + s[3] * sp.cos(y1) + s[4] * y**2
    B = c[0] * 2 * u + c[1] * u**3 / 3 + c[2] * u * y + c[3] * sp.sin(c[4] * y) + c[5] * u**2 / 2
    return SystemF(A + B * y1**2, label=f"irregular#{seed}")


def sample_box(rng: np.random.Generator, n: int, box: Sequence[Sequence[float]] = DEFAULT_BOX) -> np.ndarray:
    lo = np.array([b[0] for b in box])
    hi = np.array([b[1] for b in box])
    return rng.uniform(lo, hi, size=(n, 3))


@dataclass(frozen=True)
class Margins:
    """Distance from the non-regular locus demanded of well-conditioned sample points."""

    y1: float = 0.1
    f_u: float = 0.1
    J_u: float = 0.05


def well_conditioned_points(F: SystemF, rng: np.random.Generator, n: int,
                            box: Sequence[Sequence[float]] = DEFAULT_BOX,
                            margins: Margins = Margins(), require_regular: bool = True,
                            max_tries: int = 50,
                            jets: Callable[[np.ndarray], JetPoint] | None = None) -> np.ndarray:
    """Draw ``n`` points in ``box`` at which F is (weakly) regular with margin.

    ``jets`` maps an (m, 3) array to the order-2 jets of F there, when F is only
    available implicitly.
    """
    out = []
    for _ in range(max_tries):
        pts = sample_box(rng, 4 * n, box)
        jp = jets(pts) if jets is not None else jet_of_system(F, tuple(pts.T), 2)
        keep = _margin_mask(jp, margins, require_regular)
        out.extend(pts[keep])
        if len(out) >= n:
            return np.array(out[:n])
    raise RuntimeError(f"{F.label}: could not find {n} well-conditioned points in {box}")


def _margin_mask(jp: JetPoint, margins: Margins, require_regular: bool) -> np.ndarray:
    flags = classify_jets(jp)
    keep = (np.abs(jp.y1) > margins.y1) & (np.abs(jp["f_u"]) > margins.f_u)
    if require_regular:
        ju = np.nan_to_num(flags["J_u"])
        keep &= np.abs(ju) > margins.J_u
    return keep


__all__ = [
    "DEFAULT_BOX", "Margins", "random_regular_system", "random_irregular_system",
    "sample_box", "well_conditioned_points",
]
