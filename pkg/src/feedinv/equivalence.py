"""Signature manifolds, equivalence verdicts and pointwise recovery of the feedback map.

A regular system F has eight basic invariants. Their values over a base domain
form the signature manifold, a 3-dimensional cloud in R^8 that is a graph over the
chart coordinates (j, j1, j3) = (J, J_u, J_y1). Two regular systems are locally
equivalent exactly when their signature manifolds agree, which is tested here by
comparing graph values of one system against the other at equal chart coordinates.
"""

from __future__ import annotations

import csv
import io
import itertools
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import cached_property, lru_cache
from typing import Callable, Sequence

import numpy as np
import sympy as sp
from scipy.spatial import cKDTree

from .frame import IRREGULAR_NAMES, SIGNATURE_NAMES, classify_jets, invariant_catalog
from .jets import (
    JetPoint, MultiIndex, SystemF, evaluate_many, expression_order, jet_of_system, text_of,
    total_derivative,
)

SIGNATURE_COLUMNS = ("j", "j1", "j3", "j11", "j13", "j33", "k", "l")
IRREGULAR_COLUMNS = ("j", "m", "j3", "m1", "m3")
CHART_COLUMNS = ("j", "j1", "j3")
IRREGULAR_CHART_CANDIDATES = ("j", "j3", "m1")
# on the irregular family m1 is a function of (j, j3), so M and nabla_y1 M back it up
IRREGULAR_CHART_FALLBACK = ("m", "m3")

_COLUMN_TO_INVARIANT = {
    **dict(zip(SIGNATURE_COLUMNS, SIGNATURE_NAMES)),
    "m": "M", "m1": "nabla_u M", "m3": "nabla_y1 M",
}
assert tuple(_COLUMN_TO_INVARIANT[c] for c in IRREGULAR_COLUMNS) == (
    "J", "M", "J_y1", "nabla_u M", "nabla_y1 M") and set(IRREGULAR_NAMES) <= set(_COLUMN_TO_INVARIANT.values())


class SignatureError(ValueError):
    """No usable samples on the requested domain."""


class RecoveryError(ArithmeticError):
    def __init__(self, message: str, result: "RecoveryResult | None" = None):
        super().__init__(message)
        self.result = result


class NonConvergenceError(RecoveryError):
    pass


class SingularJacobianError(RecoveryError):
    pass


# -- domains ------------------------------------------------------------------


@dataclass(frozen=True)
class Domain:
    """Axis-aligned box over (u, y, y1) with a grid count per variable."""

    u: tuple[float, float, int]
    y: tuple[float, float, int]
    y1: tuple[float, float, int]

    def __post_init__(self):
        for name in ("u", "y", "y1"):
            lo, hi, n = getattr(self, name)
            if not (np.isfinite(lo) and np.isfinite(hi) and lo < hi):
                raise ValueError(f"domain {name}: need lo < hi, got {lo}:{hi}")
            if int(n) != n or n < 2:
                raise ValueError(f"domain {name}: grid count must be an integer >= 2, got {n}")
            object.__setattr__(self, name, (float(lo), float(hi), int(n)))

    @classmethod
    def parse(cls, text: str) -> "Domain":
        """``"u=0.5:1.5:15,y=-1:1:15,y1=0.5:1.5:15"``"""
        parts = {}
        for item in filter(None, (s.strip() for s in text.split(","))):
            name, sep, spec = item.partition("=")
            name = name.strip()
            if not sep or name not in ("u", "y", "y1"):
                raise ValueError(f"bad domain item {item!r}; expected var=lo:hi:count with var in u, y, y1")
            if name in parts:
                raise ValueError(f"domain variable {name} given twice")
            fields = spec.split(":")
            if len(fields) != 3:
                raise ValueError(f"bad range {spec!r} for {name}; expected lo:hi:count")
            try:
                lo, hi = float(fields[0]), float(fields[1])
                n = int(fields[2])
            except ValueError as exc:
                raise ValueError(f"bad range {spec!r} for {name}") from exc
            parts[name] = (lo, hi, n)
        missing = {"u", "y", "y1"} - parts.keys()
        if missing:
            raise ValueError(f"domain is missing {', '.join(sorted(missing))}")
        return cls(**parts)

    @classmethod
    def from_box(cls, box: Sequence[Sequence[float]], counts: int | Sequence[int] = 15) -> "Domain":
        counts = [counts] * 3 if isinstance(counts, int) else list(counts)
        return cls(*((b[0], b[1], n) for b, n in zip(box, counts)))

    @property
    def box(self) -> tuple[tuple[float, float], ...]:
        return tuple((lo, hi) for lo, hi, _ in (self.u, self.y, self.y1))

    @property
    def spacing(self) -> np.ndarray:
        return np.array([(hi - lo) / (n - 1) for lo, hi, n in (self.u, self.y, self.y1)])

    def axes(self) -> list[np.ndarray]:
        return [np.linspace(lo, hi, n) for lo, hi, n in (self.u, self.y, self.y1)]

    def grid(self) -> np.ndarray:
        mesh = np.meshgrid(*self.axes(), indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)

    def interior(self) -> np.ndarray:
        mesh = np.meshgrid(*(a[1:-1] for a in self.axes()), indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)

    def contains(self, pts: np.ndarray, slack: float = 1e-9) -> np.ndarray:
        pts = np.atleast_2d(pts)
        ok = np.ones(len(pts), dtype=bool)
        for i, (lo, hi) in enumerate(self.box):
            pad = slack * (hi - lo)
            ok &= (pts[:, i] >= lo - pad) & (pts[:, i] <= hi + pad)
        return ok

    def __str__(self) -> str:
        return ",".join(f"{n}={lo:g}:{hi:g}:{k}" for n, (lo, hi, k) in zip(("u", "y", "y1"), (self.u, self.y, self.y1)))


def _as_domain(domain) -> Domain:
    if isinstance(domain, Domain):
        return domain
    if isinstance(domain, str):
        return Domain.parse(domain)
    return Domain.from_box(domain)


# -- invariant evaluation on base points ----------------------------------------


@lru_cache(maxsize=None)
def _column_exprs(columns: tuple[str, ...]) -> tuple[tuple[sp.Expr, ...], int]:
    cat = invariant_catalog()
    exprs = tuple(cat[_COLUMN_TO_INVARIANT[c]] for c in columns)
    return exprs, max(expression_order(e) for e in exprs)


@lru_cache(maxsize=None)
def _gradient_exprs(columns: tuple[str, ...]) -> tuple[tuple[sp.Expr, ...], int]:
    exprs, _ = _column_exprs(columns)
    grads = tuple(total_derivative(e, b) for e in exprs for b in ("u", "y", "y1"))
    return grads, max(expression_order(g) for g in grads)


def _jets(F: SystemF, pts: np.ndarray, order: int):
    pts = np.atleast_2d(np.asarray(pts, dtype=float))
    return jet_of_system(F, (pts[:, 0], pts[:, 1], pts[:, 2]), order, strict=False)


def invariant_values(F: SystemF, pts: np.ndarray, columns: Sequence[str] = SIGNATURE_COLUMNS) -> np.ndarray:
    """Rows of invariant values at base points; nan where undefined."""
    exprs, order = _column_exprs(tuple(columns))
    pts = np.atleast_2d(np.asarray(pts, dtype=float))
    if len(pts) == 0:
        return np.empty((0, len(exprs)))
    vals = evaluate_many(exprs, _jets(F, pts, order))
    return np.stack([np.broadcast_to(v, (len(pts),)) for v in vals], axis=1)


def signature_at(F: SystemF, pts: np.ndarray) -> np.ndarray:
    """The map sigma_F evaluated at base points, shape (n, 8)."""
    return invariant_values(F, pts, SIGNATURE_COLUMNS)


def chart_jacobian(F: SystemF, pts: np.ndarray, columns: Sequence[str] = CHART_COLUMNS) -> np.ndarray:
    """d(chart)/d(u, y, y1) via total derivatives, shape (n, len(columns), 3)."""
    grads, order = _gradient_exprs(tuple(columns))
    pts = np.atleast_2d(np.asarray(pts, dtype=float))
    vals = evaluate_many(grads, _jets(F, pts, order))
    flat = np.stack([np.broadcast_to(v, (len(pts),)) for v in vals], axis=1)
    return flat.reshape(len(pts), len(columns), 3)


def _ranks(jac: np.ndarray, rtol: float = 1e-8) -> np.ndarray:
    out = np.zeros(len(jac), dtype=int)
    good = np.all(np.isfinite(jac), axis=(1, 2))
    if good.any():
        s = np.linalg.svd(jac[good], compute_uv=False)
        out[good] = np.sum(s > rtol * np.maximum(s[:, :1], 1e-300), axis=1)
    return out


# -- chart maps -------------------------------------------------------------------


def _batched_solve(jac: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    """Solve jac x = rhs per row; least squares where a matrix is singular or not square."""
    if jac.shape[1] == jac.shape[2]:
        try:
            return np.linalg.solve(jac, rhs[:, :, None])[:, :, 0]
        except np.linalg.LinAlgError:
            pass
    return np.einsum("nij,nj->ni", np.linalg.pinv(jac), rhs)


class ChartMap:
    """Chart coordinates of one system over a box, with Newton inversion.

    ``solve`` finds base points q with chart(q) equal to given targets. Seeds come
    from a coarse grid indexed by chart value.
    """

    def __init__(self, F: SystemF, box: Sequence[Sequence[float]], columns: Sequence[str] = CHART_COLUMNS,
                 seeds_per_axis: int = 9):
        self.F = F
        self.columns = tuple(columns)
        self.domain = Domain.from_box(box, seeds_per_axis)
        grid = self.domain.grid()
        vals = self.chart_values(grid)
        ok = np.all(np.isfinite(vals), axis=1)
        self._seed_base = grid[ok]
        self._seed_chart = vals[ok]
        self._scale = np.maximum(np.std(vals[ok], axis=0), 1e-12) if ok.any() else np.ones(len(self.columns))
        self._tree = cKDTree(self._seed_chart / self._scale) if ok.any() else None

    @property
    def box(self):
        return self.domain.box

    def chart_values(self, pts: np.ndarray) -> np.ndarray:
        return invariant_values(self.F, pts, self.columns)

    def jacobian(self, pts: np.ndarray) -> np.ndarray:
        return chart_jacobian(self.F, pts, self.columns)

    def nearest_base_points(self, target: np.ndarray, k: int = 1) -> np.ndarray:
        """Base points of the seed grid nearest in chart space; shape (n, 3) or (n, k, 3)."""
        target = np.atleast_2d(target)
        if self._tree is None:
            raise SignatureError(f"{self.F.label}: chart undefined on the whole box")
        k = min(k, len(self._seed_base))
        _, idx = self._tree.query(np.nan_to_num(target / self._scale), k=k)
        return self._seed_base[idx]

    def solve(self, target: np.ndarray, seed_pts: np.ndarray, tol: float = 1e-10, max_iter: int = 40,
              radius: float | None = None) -> tuple[np.ndarray, np.ndarray]:
        """Newton for chart(q) = target from ``seed_pts``; returns (q, ok).

        ok marks converged points inside the box. ``radius`` optionally caps the
        accepted chart-space residual from above (it never loosens ``tol``).
        """
        target = np.atleast_2d(np.asarray(target, dtype=float))
        q = np.array(np.atleast_2d(seed_pts), dtype=float)
        widths = np.array([hi - lo for lo, hi in self.box])
        thresh = tol * (1 + np.max(np.abs(target), axis=1))
        if radius is not None:
            thresh = np.minimum(thresh, radius)
        active = np.all(np.isfinite(target), axis=1)
        done = np.zeros(len(q), dtype=bool)
        for _ in range(max_iter):
            idx = np.flatnonzero(active & ~done)
            if len(idx) == 0:
                break
            r = self.chart_values(q[idx]) - target[idx]
            bad = ~np.all(np.isfinite(r), axis=1)
            res = np.max(np.abs(r), axis=1)
            conv = ~bad & (res <= thresh[idx])
            done[idx[conv]] = True
            active[idx[bad]] = False
            step_idx = ~bad & ~conv
            if not step_idx.any():
                continue
            sub = idx[step_idx]
            jac = self.jacobian(q[sub])
            fin = np.all(np.isfinite(jac), axis=(1, 2))
            active[sub[~fin]] = False
            sub, jac, rr = sub[fin], jac[fin], r[step_idx][fin]
            step = -_batched_solve(jac, rr)
            # damping: no step longer than a quarter of the box in any direction
            ratio = np.max(np.abs(step) / (0.25 * widths), axis=1)
            step /= np.maximum(ratio, 1.0)[:, None]
            q[sub] += step
            # points drifting far outside the box will not come back
            far = ~Domain.from_box(self.box, 2).contains(q[sub], slack=1.0)
            active[sub[far]] = False
        ok = done & self.domain.contains(q)
        return q, ok

    def project(self, target: np.ndarray, seeds: Sequence[np.ndarray], tol: float = 1e-10) -> list[tuple[np.ndarray, np.ndarray]]:
        """Run ``solve`` from each seed array; returns the list of (q, ok)."""
        return [self.solve(target, s, tol=tol) for s in seeds]


# -- signature manifolds -------------------------------------------------------------


@dataclass
class SignatureSample:
    base: tuple[float, float, float]
    values: tuple[float, ...]


@dataclass
class SignatureManifold:
    """Sampled signature of one system: base points, invariant rows and chart metadata."""

    base: np.ndarray  # (n, 3)
    values: np.ndarray  # (n, len(columns))
    columns: tuple[str, ...] = SIGNATURE_COLUMNS
    chart: tuple[str, ...] = CHART_COLUMNS
    chart_ranks: np.ndarray | None = None
    mode: str = "regular"
    system: SystemF | None = None
    domain: Domain | None = None
    skipped: dict = field(default_factory=dict)
    metadata: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.base)

    def __getitem__(self, i: int) -> SignatureSample:
        return SignatureSample(tuple(self.base[i]), tuple(self.values[i]))

    @property
    def samples(self) -> list[SignatureSample]:
        return [self[i] for i in range(len(self))]

    @property
    def graph(self) -> tuple[str, ...]:
        return tuple(c for c in self.columns if c not in self.chart)

    def column(self, name: str) -> np.ndarray:
        return self.values[:, self.columns.index(name)]

    def chart_values(self) -> np.ndarray:
        return np.stack([self.column(c) for c in self.chart], axis=1)

    def graph_values(self) -> np.ndarray:
        return np.stack([self.column(c) for c in self.graph], axis=1)

    @cached_property
    def chart_scale(self) -> np.ndarray:
        return np.maximum(np.std(self.chart_values(), axis=0), 1e-12)

    @cached_property
    def tree(self) -> cKDTree:
        """Spatial index over standardized chart coordinates."""
        return cKDTree(self.chart_values() / self.chart_scale)

    @property
    def rank_stats(self) -> dict:
        if self.chart_ranks is None or len(self.chart_ranks) == 0:
            return {"full_rank_fraction": None, "histogram": {}}
        full = len(self.chart)
        hist = {int(r): int(c) for r, c in zip(*np.unique(self.chart_ranks, return_counts=True))}
        return {"full_rank_fraction": float(np.mean(self.chart_ranks == 3)), "chart_dimension": full,
                "histogram": hist}

    @property
    def chart_regular(self) -> bool:
        """Jacobian of the chart has rank 3 at >= 99% of samples."""
        if self.chart_ranks is None or len(self.chart_ranks) == 0 or len(self.chart) != 3:
            return False
        return bool(np.mean(self.chart_ranks == 3) >= 0.99)

    # persistence

    def to_csv(self, path_or_buf=None) -> str | None:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(("u", "y", "y1") + self.columns)
        for b, v in zip(self.base, self.values):
            w.writerow([repr(float(x)) for x in (*b, *v)])
        text = buf.getvalue()
        if path_or_buf is None:
            return text
        if isinstance(path_or_buf, str):
            with open(path_or_buf, "w") as fh:
                fh.write(text)
        else:
            path_or_buf.write(text)
        return None

    @classmethod
    def from_csv(cls, path: str, system: SystemF | None = None) -> "SignatureManifold":
        with open(path) as fh:
            rows = list(csv.reader(fh))
        header, body = tuple(rows[0]), np.array(rows[1:], dtype=float).reshape(-1, len(rows[0]))
        if header[:3] != ("u", "y", "y1"):
            raise ValueError(f"{path}: first columns must be u, y, y1")
        columns = header[3:]
        mode = "regular" if columns == SIGNATURE_COLUMNS else "irregular"
        chart = CHART_COLUMNS if mode == "regular" else IRREGULAR_CHART_CANDIDATES
        m = cls(body[:, :3], body[:, 3:], columns, chart, mode=mode, system=system)
        if system is not None:
            m.chart_ranks = _ranks(chart_jacobian(system, m.base, chart))
        return m

    def to_dict(self, include_samples: bool = True) -> dict:
        d = {
            "mode": self.mode,
            "system": text_of(self.system.expr) if self.system is not None else None,
            "label": self.system.label if self.system is not None else None,
            "domain": str(self.domain) if self.domain is not None else None,
            "columns": list(self.columns),
            "chart": list(self.chart),
            "chart_regular": self.chart_regular,
            "chart_rank_stats": self.rank_stats,
            "samples_count": len(self),
            "skipped": self.skipped,
            **self.metadata,
        }
        if include_samples:
            d["samples"] = [{"base": list(map(float, b)), "values": list(map(float, v))}
                            for b, v in zip(self.base, self.values)]
            d["chart_ranks"] = [int(r) for r in self.chart_ranks] if self.chart_ranks is not None else None
        return d

    def to_json(self, include_samples: bool = True) -> str:
        return json.dumps(self.to_dict(include_samples), indent=2)

    @classmethod
    def from_json(cls, text: str) -> "SignatureManifold":
        d = json.loads(text)
        system = SystemF.parse(d["system"]) if d.get("system") else None
        base = np.array([s["base"] for s in d["samples"]], dtype=float).reshape(-1, 3)
        vals = np.array([s["values"] for s in d["samples"]], dtype=float).reshape(len(base), -1)
        ranks = np.array(d["chart_ranks"], dtype=int) if d.get("chart_ranks") is not None else None
        extra = {k: v for k, v in d.items() if k in ("seed", "tolerances")}
        return cls(base, vals, tuple(d["columns"]), tuple(d["chart"]), ranks, d["mode"], system,
                   Domain.parse(d["domain"]) if d.get("domain") else None, d.get("skipped", {}), extra)


def _chunks(n: int, parts: int) -> list[slice]:
    parts = max(1, min(parts, n))
    edges = np.linspace(0, n, parts + 1).astype(int)
    return [slice(a, b) for a, b in zip(edges[:-1], edges[1:]) if b > a]


def _parallel_rows(fn: Callable[[np.ndarray], np.ndarray], pts: np.ndarray, threads: int) -> np.ndarray:
    if threads <= 1 or len(pts) < 64:
        return fn(pts)
    with ThreadPoolExecutor(max_workers=threads) as pool:
        parts = list(pool.map(lambda s: fn(pts[s]), _chunks(len(pts), threads)))
    return np.concatenate(parts, axis=0)


def sample_signature(F: SystemF, domain, mode: str = "regular", threads: int = 1,
                     rank_rtol: float = 1e-8) -> SignatureManifold:
    """One sample per (regular) grid point of ``domain``; skipped points are counted.

    ``mode="irregular"`` samples (J, M, nabla_y1 J, nabla_u M, nabla_y1 M) at weakly
    regular points and picks chart coordinates by numeric rank among
    (J, nabla_y1 J, nabla_u M). That mode is heuristic.
    """
    if mode not in ("regular", "irregular"):
        raise ValueError(f"unknown mode {mode!r}")
    dom = _as_domain(domain)
    grid = dom.grid()
    jp = _jets(F, grid, 2)
    flags = classify_jets(jp)
    usable = flags["regular"] if mode == "regular" else flags["weakly_regular"]
    skipped = {
        "singular": int(flags["singular"].sum()),
        "not_weakly_regular": int((~flags["weakly_regular"] & ~flags["singular"]).sum()),
        "not_regular": int((flags["weakly_regular"] & ~flags["regular"]).sum()) if mode == "regular" else 0,
    }
    pts = grid[usable]
    columns = SIGNATURE_COLUMNS if mode == "regular" else IRREGULAR_COLUMNS
    vals = _parallel_rows(lambda p: invariant_values(F, p, columns), pts, threads)
    finite = np.all(np.isfinite(vals), axis=1)
    skipped["undefined"] = int((~finite).sum())
    pts, vals = pts[finite], vals[finite]
    if len(pts) == 0:
        raise SignatureError(f"{F.label}: no {mode} grid points on {dom} (skipped {skipped})")
    if mode == "regular":
        chart = CHART_COLUMNS
    else:
        chart = _pick_irregular_chart(F, pts, rank_rtol)
    ranks = _ranks(_parallel_rows(lambda p: chart_jacobian(F, p, chart), pts, threads), rank_rtol)
    meta = {"tolerances": {"rank_rtol": rank_rtol}}
    if mode == "irregular":
        meta["heuristic"] = True
    return SignatureManifold(pts, vals, columns, chart, ranks, mode, F, dom, skipped, meta)


def _pick_irregular_chart(F: SystemF, pts: np.ndarray, rtol: float) -> tuple[str, ...]:
    pool = IRREGULAR_CHART_CANDIDATES + IRREGULAR_CHART_FALLBACK
    jac = chart_jacobian(F, pts, pool)
    for r in (3, 2, 1):
        best, best_score = None, -1.0
        for combo in itertools.combinations(range(len(pool)), r):
            full = float(np.mean(_ranks(jac[:, combo, :], rtol) == r))
            # strict > keeps the earliest combination, i.e. the preferred candidates
            if full >= 0.99 and full > best_score:
                best, best_score = tuple(pool[i] for i in combo), full
        if best is not None:
            return best
    return pool[:1]


# -- comparison ------------------------------------------------------------------------


@dataclass
class EquivalenceVerdict:
    verdict: str  # equivalent | inequivalent | inconclusive
    max_deviation: float
    overlap: float
    reason: str | None = None  # chart-failure | no-overlap | sparse-data | mixed-deviation
    diagnostics: str = ""
    tolerance: float = 1e-4
    exceed_fraction: float = 0.0
    method: str = "newton"
    mode: str = "regular"
    deviations: np.ndarray | None = field(default=None, repr=False)

    def to_dict(self) -> dict:
        return {
            "verdict": self.verdict,
            "max_deviation": _finite_or_none(self.max_deviation),
            "overlap": self.overlap,
            "reason": self.reason,
            "diagnostics": self.diagnostics,
            "tolerance": self.tolerance,
            "exceed_fraction": self.exceed_fraction,
            "method": self.method,
            "mode": self.mode,
            "heuristic": self.mode == "irregular",
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def _finite_or_none(x: float):
    return float(x) if np.isfinite(x) else None


def _mls_fit(B: SignatureManifold, target: np.ndarray, n_neighbors: int):
    """Weighted linear fit of B's base points and graph values over the chart at each target.

    Returns (base_fit, graph_fit, nearest_distance, inside) where ``inside`` tests the
    target against the bounding box of its neighbours and B's sample spacing.
    """
    k = min(n_neighbors, len(B))
    z = target / B.chart_scale
    dist, idx = B.tree.query(z, k=k)
    dist, idx = dist.reshape(len(z), k), idx.reshape(len(z), k)
    cz = B.chart_values()[idx] / B.chart_scale  # (n, k, d)
    rhs = np.concatenate([B.base[idx], B.graph_values()[idx]], axis=2)
    h = np.maximum(dist[:, -1:], 1e-300)
    w = np.exp(-(dist / h) ** 2)
    X = np.concatenate([np.ones(cz.shape[:2] + (1,)), cz - z[:, None, :]], axis=2)
    Xw = X * w[:, :, None]
    beta = np.einsum("nij,njk->nik", np.linalg.pinv(Xw), rhs * w[:, :, None])
    fit = beta[:, 0, :]
    spacing = _typical_spacing(B)
    lo, hi = cz.min(axis=1), cz.max(axis=1)
    inside = np.all((z >= lo) & (z <= hi), axis=1) & (dist[:, 0] <= 3 * spacing)
    return fit[:, :3], fit[:, 3:], dist[:, 0], idx[:, 0], inside


def _typical_spacing(B: SignatureManifold) -> float:
    if len(B) < 2:
        return np.inf
    d, _ = B.tree.query(B.chart_values() / B.chart_scale, k=2)
    return float(np.median(d[:, 1]))


def _relative_deviation(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.max(np.abs(a - b) / (1 + np.abs(a)), axis=1)


def _grid_neighbours(A: SignatureManifold) -> list[np.ndarray]:
    """Indices of the axis neighbours of each sample on A's grid (k nearest without a grid)."""
    if A.domain is not None:
        z = A.base / A.domain.spacing
        tree = cKDTree(z)
        return [np.array([j for j in nb if j != i], dtype=int)
                for i, nb in enumerate(tree.query_ball_point(z, r=1.01))]
    tree = cKDTree(A.base)
    _, idx = tree.query(A.base, k=min(7, len(A)))
    return [row[1:] for row in np.atleast_2d(idx)]


def _continuation_match(A: SignatureManifold, B: SignatureManifold, target: np.ndarray, a_graph: np.ndarray,
                        seed_sets: list[np.ndarray], seeds: int, anchor_tol: float, max_components: int = 25):
    """Match A's samples to one sheet of B by Newton continuation along A's grid.

    The chart of a regular system is a local diffeomorphism but may fold over a
    box, so a chart value can have preimages in B on several sheets. Starting from
    the best-matching anchor, each newly matched sample seeds Newton at its grid
    neighbours, which keeps the whole overlap on the anchor's sheet. Samples whose
    tracked preimage leaves B's box are outside the coverage. Continuation can stall
    near folds of the chart, so further components are grown from samples whose
    direct match is already credible (deviation <= ``anchor_tol``) and whose
    orientation agrees with the first component.
    """
    cm = ChartMap(B.system, B.domain.box, B.chart)
    extra = cm.nearest_base_points(target, k=max(1, seeds - 2))
    if extra.ndim == 2:
        extra = extra[:, None, :]
    candidates = list(seed_sets) + [extra[:, i] for i in range(extra.shape[1])]
    best_dev = np.full(len(A), np.inf)
    best_q = np.full((len(A), 3), np.nan)
    for s in candidates:
        q, ok = cm.solve(target, s)
        if not ok.any():
            continue
        sel = np.flatnonzero(ok)
        d = _relative_deviation(a_graph[sel], invariant_values(B.system, q[sel], B.graph))
        d[~np.isfinite(d)] = np.inf
        better = d < best_dev[sel]
        best_dev[sel[better]] = d[better]
        best_q[sel[better]] = q[sel[better]]

    neighbours = _grid_neighbours(A)
    dev = np.full(len(A), np.inf)
    cov = np.zeros(len(A), dtype=bool)
    orient_a = _orientation(A)
    orientation = None
    components = 0
    for anchor in np.argsort(best_dev):
        if components >= max_components or not np.isfinite(best_dev[anchor]):
            break
        if cov[anchor] or (components > 0 and best_dev[anchor] > anchor_tol):
            continue
        o = None
        if orient_a is not None:
            o = orient_a[anchor] * np.sign(np.linalg.det(cm.jacobian(best_q[anchor][None, :])[0]))
            if orientation is not None and o != orientation:
                continue
            orientation = o
        d, c = _grow_sheet(A, B, cm, target, a_graph, neighbours, anchor, best_q[anchor], best_dev[anchor],
                           cov, orient_a, o, anchor_tol)
        cov |= c
        dev = np.where(c, d, dev)
        components += 1
    return dev, cov, components


def _orientation(M: SignatureManifold) -> np.ndarray | None:
    """Sign of the chart Jacobian determinant at each sample (None without a system)."""
    if M.system is None or len(M.chart) != 3:
        return None
    with np.errstate(invalid="ignore"):
        return np.sign(np.linalg.det(chart_jacobian(M.system, M.base, M.chart)))


def _grow_sheet(A, B, cm: ChartMap, target, a_graph, neighbours, anchor: int, q0: np.ndarray, d0: float,
                taken: np.ndarray | None = None, orient_a: np.ndarray | None = None, orientation=None,
                polish_tol: float = 1e-6):
    n = len(A)
    q = np.full((n, 3), np.nan)
    dev = np.full(n, np.inf)
    cov = np.zeros(n, dtype=bool)
    failed_from: dict[int, set] = {}
    q[anchor], dev[anchor], cov[anchor] = q0, d0, True
    frontier = [anchor]
    while frontier:
        pairs = {}
        for v in frontier:
            for w in neighbours[v]:
                if cov[w] or (taken is not None and taken[w]):
                    continue
                if w not in pairs and v not in failed_from.get(w, ()):
                    pairs[w] = v
        if not pairs:
            break
        ws = np.fromiter(pairs.keys(), dtype=int)
        vs = np.fromiter(pairs.values(), dtype=int)
        qs, ok = cm.solve(target[ws], q[vs])
        # a tracked preimage leaving the box must not jump to another sheet: the
        # Newton result has to stay close to the linear prediction from the neighbour
        jac = cm.jacobian(q[vs])
        pred = _batched_solve(jac, target[ws] - target[vs])
        moved = np.max(np.abs(qs - q[vs]), axis=1)
        ok &= moved <= 3 * np.max(np.abs(pred), axis=1) + 1e-12
        if orient_a is not None:
            # across a fold of B's chart the orientation of the match flips
            with np.errstate(invalid="ignore"):
                ob = np.sign(np.linalg.det(cm.jacobian(np.where(ok[:, None], qs, q[vs]))))
            ok &= orient_a[ws] * ob == orientation
        new = []
        for w, v, qq, good in zip(ws, vs, qs, ok):
            if good:
                q[w], cov[w] = qq, True
                new.append(w)
            else:
                failed_from.setdefault(int(w), set()).add(int(v))
        if new:
            idx = np.array(new)
            d = _relative_deviation(a_graph[idx], invariant_values(B.system, q[idx], B.graph))
            d[~np.isfinite(d)] = np.inf
            dev[idx] = d
        frontier = new
    # a continuation step can still land on a nearby root; re-solve doubtful samples
    # from every matched neighbour and keep the closest local match
    pairs = [(w, v) for w in np.flatnonzero(cov & (dev > polish_tol)) for v in neighbours[w] if cov[v]]
    if pairs:
        ws, vs = np.array(pairs, dtype=int).T
        qs, ok = cm.solve(target[ws], q[vs])
        if ok.any():
            ws, qs = ws[ok], qs[ok]
            d = _relative_deviation(a_graph[ws], invariant_values(B.system, qs, B.graph))
            d[~np.isfinite(d)] = np.inf
            for w, dd, qq in zip(ws, d, qs):
                if dd < dev[w]:
                    dev[w], q[w] = dd, qq
    return dev, cov


def compare_signatures(A: SignatureManifold, B: SignatureManifold, tol: float = 1e-4,
                       n_neighbors: int = 12, min_overlap: float = 0.2, exceed_fraction: float = 0.05,
                       method: str = "auto", seeds: int = 4, anchor_tol: float = 1e-2) -> EquivalenceVerdict:
    """Graph-over-chart comparison of A against B.

    Each sample of A is located in B's chart. With ``method="mls"`` B's graph values
    there come from a moving least squares fit over ``n_neighbors`` samples. With
    ``method="newton"`` (the default when B knows its system) the MLS fit of B's base
    point only seeds Newton's method for chart_B(q) = chart_A(p), B's graph is then
    evaluated exactly at q, and matches are continued along A's grid on one sheet of
    B (see ``_continuation_match``).
    """
    mode = A.mode
    if A.mode != B.mode or A.columns != B.columns:
        return EquivalenceVerdict("inconclusive", np.nan, 0.0, "chart-failure",
                                  "signatures were sampled in different modes", tol, mode=mode)
    if mode == "regular" and not (A.chart_regular and B.chart_regular):
        bad = [n for n, m in (("A", A), ("B", B)) if not m.chart_regular]
        stats = {n: m.rank_stats for n, m in (("A", A), ("B", B))}
        return EquivalenceVerdict("inconclusive", np.nan, 0.0, "chart-failure",
                                  f"chart (j, j1, j3) not of rank 3 on {', '.join(bad)}: {stats}", tol, mode=mode)
    if mode == "irregular" and A.chart != B.chart:
        return EquivalenceVerdict("inconclusive", np.nan, 0.0, "chart-failure",
                                  f"different chart choices {A.chart} vs {B.chart}", tol, mode=mode)
    if method == "auto":
        method = "newton" if B.system is not None and B.domain is not None else "mls"
    if method == "newton" and (B.system is None or B.domain is None):
        raise ValueError("newton comparison needs B's system and domain")

    target = A.chart_values()
    a_graph = A.graph_values()
    base_fit, graph_fit, nearest, nearest_idx, inside = _mls_fit(B, target, n_neighbors)
    dev = np.full(len(A), np.inf)
    if method == "mls":
        dev[inside] = _relative_deviation(a_graph[inside], graph_fit[inside])
        covered = inside.copy()
        components = None
    else:
        dev, covered, components = _continuation_match(A, B, target, a_graph, [base_fit, B.base[nearest_idx]],
                                                       seeds, anchor_tol * tol)
    # exact chart coincidences (e.g. the same manifold) need no fit
    exact = nearest == 0.0
    dev[exact] = _relative_deviation(a_graph[exact], B.graph_values()[nearest_idx[exact]])
    covered |= exact
    overlap = float(np.mean(covered)) if len(A) else 0.0
    dcov = dev[covered]
    max_dev = float(np.max(dcov)) if len(dcov) else np.nan
    exceed = float(np.mean(dcov > 10 * tol)) if len(dcov) else 0.0
    diag = (f"{int(covered.sum())}/{len(A)} samples of A inside B's chart coverage; "
            f"max deviation {max_dev:.3e}; {exceed:.1%} above {10 * tol:g}; method {method}"
            + (f"; {components} sheet component(s)" if components is not None else ""))
    kw = dict(tolerance=tol, exceed_fraction=exceed, method=method, mode=mode, deviations=dev)
    if not covered.any():
        return EquivalenceVerdict("inconclusive", max_dev, overlap, "no-overlap", diag, **kw)
    if exceed >= exceed_fraction:
        return EquivalenceVerdict("inequivalent", max_dev, overlap, None, diag, **kw)
    if overlap < min_overlap:
        return EquivalenceVerdict("inconclusive", max_dev, overlap, "sparse-data", diag, **kw)
    if max_dev <= tol:
        return EquivalenceVerdict("equivalent", max_dev, overlap, None, diag, **kw)
    return EquivalenceVerdict("inconclusive", max_dev, overlap, "mixed-deviation", diag, **kw)


# -- recovery of the transformation ----------------------------------------------------

UNKNOWNS = ("U", "Y", "dY", "ddY")
_S = (lambda t: t**2, lambda t: 2 * t, lambda t: 2.0 + 0 * t, lambda t: 0.0 * t)  # (y1^2)^(k)


class HSystem:
    """H = F(Y, Y' y1, U)/Y' - Y'' y1^2/Y' - G(u, y, y1) and its first three y1-derivatives.

    The unknowns (U, Y, Y', Y'') do not depend on y1, so
    d^k/dy1^k F(Y, Y' y1, U) = Y'^k F_{y1^k}(Y, Y' y1, U). All derivatives of F and G
    come from their symbolic jets; the chain rule is applied numerically.
    """

    def __init__(self, F: SystemF, G: SystemF):
        self.F, self.G = F, G
        self._mi = {(a, k): MultiIndex(*a, k) for a in ((0, 0), (1, 0), (0, 1)) for k in range(5)}

    def _g(self, p) -> np.ndarray:
        jp = jet_of_system(self.G, tuple(float(v) for v in p), 3)
        return np.array([jp.values[self._mi[(0, 0), k]] for k in range(4)])

    def _f(self, p, x) -> JetPoint:
        U, Y, P = (np.asarray(x[i], dtype=float) for i in range(3))
        return jet_of_system(self.F, (U, Y, P * float(p[2])), 4, strict=False)

    def solve_ddY(self, p, U, Y, P):
        """Y'' from H = 0 at given (U, Y, Y')."""
        fp = self._f(p, (U, Y, P))
        return (fp.values[self._mi[(0, 0), 0]] - np.asarray(P) * self._g(p)[0]) / float(p[2]) ** 2

    def equations(self, p, x) -> np.ndarray:
        U, Y, P, Q = (np.asarray(v, dtype=float) for v in x)
        t = float(p[2])
        fv = self._f(p, x).values
        g = self._g(p)
        with np.errstate(all="ignore"):
            return np.array([P ** (k - 1) * fv[self._mi[(0, 0), k]] - Q * _S[k](t) / P - g[k] for k in range(4)])

    def jacobian(self, p, x) -> np.ndarray:
        U, Y, P, Q = (float(v) for v in x)
        t = float(p[2])
        fv = self._f(p, x).values
        out = np.empty((4, 4))
        with np.errstate(all="ignore"):
            for k in range(4):
                s = _S[k](t)
                out[k] = (
                    P ** (k - 1) * fv[self._mi[(1, 0), k]],
                    P ** (k - 1) * fv[self._mi[(0, 1), k]],
                    (k - 1) * P ** (k - 2) * fv[self._mi[(0, 0), k]] + P ** (k - 1) * t * fv[self._mi[(0, 0), k + 1]]
                    + Q * s / P**2,
                    -s / P,
                )
        return out


@lru_cache(maxsize=64)
def _h_system(F: SystemF, G: SystemF) -> HSystem:
    return HSystem(F, G)


@dataclass
class RecoveryResult:
    point: tuple[float, float, float]
    values: tuple[float, float, float, float]  # U, Y, Y', Y''
    residual: float
    iterations: int
    converged: bool
    condition: float

    def to_dict(self) -> dict:
        U, Y, dY, ddY = self.values
        return {"point": list(self.point), "U": U, "Y": Y, "dY": dY, "ddY": ddY,
                "residual": self.residual, "iterations": self.iterations,
                "converged": self.converged, "jacobian_condition": self.condition}


def h_residual(F: SystemF, G: SystemF, p: Sequence[float], x: Sequence[float]) -> np.ndarray:
    return _h_system(F, G).equations(p, x)


def _newton(F: SystemF, G: SystemF, p, x0, tol: float, max_iter: int) -> RecoveryResult:
    hs = _h_system(F, G)
    x = np.array(x0, dtype=float)
    p = tuple(float(v) for v in p)

    def resid(x):
        try:
            return hs.equations(p, x)
        except ArithmeticError:
            return np.full(4, np.nan)

    r = resid(x)
    cond = np.inf
    it = 0
    for it in range(1, max_iter + 1):
        if not np.all(np.isfinite(r)):
            break
        try:
            J = hs.jacobian(p, x)
        except ArithmeticError:
            break
        if not np.all(np.isfinite(J)):
            break
        cond = float(np.linalg.cond(J))
        if np.max(np.abs(r)) <= tol:
            break
        try:
            step = np.linalg.solve(J, -r)
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(J, -r, rcond=None)[0]
        norm0 = float(np.linalg.norm(r))
        lam = 1.0
        while lam > 1e-6:
            xn = x + lam * step
            rn = resid(xn)
            if np.all(np.isfinite(rn)) and np.linalg.norm(rn) < norm0 * (1 - 1e-4 * lam):
                break
            lam /= 2
        else:
            x, r = x + lam * step, resid(x + lam * step)
            break
        x, r = xn, rn
        if np.max(np.abs(lam * step)) <= 1e-15 * (1 + np.max(np.abs(x))):
            break
    res = float(np.max(np.abs(r))) if np.all(np.isfinite(r)) else np.inf
    return RecoveryResult(p, tuple(map(float, x)), res, it, res <= tol, cond)


def initial_guesses(F: SystemF, G: SystemF, p: Sequence[float], box: Sequence[Sequence[float]] | None = None,
                    count: int = 4) -> list[np.ndarray]:
    """Newton seeds for the H-system at p.

    The identity when F and G are the same expression. Otherwise (U, Y, Y') come from
    the point q of F's chart with chart_F(q) = chart_G(p), since the point map sends p
    to q = (U, Y, Y' y1); Y'' then solves H = 0. A coarse grid search is the fallback.
    """
    pu, py, py1 = map(float, p)
    hs = _h_system(F, G)
    if F.expr == G.expr:
        return [np.array([pu, py, 1.0, 0.0])]
    if box is None:
        box = ((pu - 1.5, pu + 1.5), (py - 1.5, py + 1.5), tuple(sorted((py1 / 4, py1 * 3))))
    else:
        # the image of p need not lie in the working box; search a padded copy
        box = tuple((lo - (hi - lo) / 2, hi + (hi - lo) / 2) for lo, hi in box)
    out = []
    try:
        chart_g = invariant_values(G, np.array([p]), CHART_COLUMNS)
        sig_g = signature_at(G, np.array([p]))[0]
        if np.all(np.isfinite(chart_g)):
            cm = _chart_map_cached(F, tuple(map(tuple, box)))
            seeds = cm.nearest_base_points(chart_g, k=count)[0]
            found = []
            for s in seeds:
                q, ok = cm.solve(chart_g, s[None, :])
                if ok[0]:
                    dev = _relative_deviation(sig_g[None, :], signature_at(F, q))[0]
                    found.append((dev, q[0]))
            found.sort(key=lambda t: t[0])
            for _, q in found:
                P = q[2] / py1
                with np.errstate(all="ignore"):
                    Q = float(hs.solve_ddY(p, q[0], q[1], P))
                if np.isfinite(Q):
                    out.append(np.array([q[0], q[1], P, Q]))
    except (SignatureError, ArithmeticError, ValueError):
        pass
    out.extend(_grid_guesses(F, G, p, box, count))
    return out


@lru_cache(maxsize=32)
def _chart_map_cached(F: SystemF, box) -> ChartMap:
    return ChartMap(F, box)


def _grid_guesses(F: SystemF, G: SystemF, p, box, count: int, n: int = 9) -> list[np.ndarray]:
    hs = _h_system(F, G)
    Us = np.linspace(*box[0], n)
    Ys = np.linspace(*box[1], n)
    Ps = np.concatenate([-np.geomspace(0.25, 4, n), np.geomspace(0.25, 4, n)])
    U, Y, P = (a.ravel() for a in np.meshgrid(Us, Ys, Ps, indexing="ij"))
    with np.errstate(all="ignore"):
        Q = np.broadcast_to(hs.solve_ddY(p, U, Y, P), U.shape)
        r = np.array([np.broadcast_to(v, U.shape) for v in hs.equations(p, (U, Y, P, Q))])
    score = np.linalg.norm(r, axis=0)
    score[~np.isfinite(score)] = np.inf
    best = np.argsort(score)[:count]
    return [np.array([U[i], Y[i], P[i], Q[i]]) for i in best if np.isfinite(score[i])]


def recover_transform(F: SystemF, G: SystemF, p: Sequence[float], guess: Sequence[float] | None = None,
                      tol: float = 1e-11, max_iter: int = 60,
                      box: Sequence[Sequence[float]] | None = None) -> RecoveryResult:
    """Solve H = H_y1 = H_y1y1 = H_y1y1y1 = 0 for (U, Y, Y', Y'') at the point p.

    Damped Newton from ``guess``, or from ``initial_guesses`` when none is given.
    Raises NonConvergenceError (carrying the best attempt) or SingularJacobianError.
    """
    seeds = [np.asarray(guess, dtype=float)] if guess is not None else initial_guesses(F, G, p, box)
    if not seeds:
        raise NonConvergenceError(f"no initial guess found at {tuple(p)}")
    best = None
    for x0 in seeds:
        res = _newton(F, G, p, x0, tol, max_iter)
        if res.converged:
            if res.condition > 1e14:
                raise SingularJacobianError(f"H-system Jacobian singular at {tuple(p)} (cond {res.condition:.2e})", res)
            return res
        if best is None or res.residual < best.residual:
            best = res
    if best is not None and best.condition > 1e14:
        raise SingularJacobianError(f"H-system Jacobian singular at {tuple(p)} (cond {best.condition:.2e})", best)
    raise NonConvergenceError(f"no convergence at {tuple(p)}: residual {best.residual:.3e} "
                              f"after {best.iterations} iterations", best)


# -- smoothness conditions ---------------------------------------------------------------

CONDITIONS = ("A_y1", "B_y1", "C_y1", "D_y1", "B_u", "C_u", "D_u", "C-B_y", "D-C_y")


@dataclass
class SmoothnessReport:
    points: np.ndarray  # (n, 3)
    values: np.ndarray  # (n, 4) recovered (A, B, C, D) = (U, Y, Y', Y'') at the points
    conditions: np.ndarray  # (n, 9) relative violations, nan where recovery failed
    recovered: np.ndarray  # (n,) bool, all 7 stencil points converged
    errors: list[str]
    tolerance: float
    h: float

    @property
    def flagged(self) -> np.ndarray:
        """Points where some condition exceeds the tolerance or recovery failed."""
        with np.errstate(invalid="ignore"):
            bad = np.any(self.conditions > self.tolerance, axis=1)
        return bad | ~self.recovered

    @property
    def passed(self) -> bool:
        return bool(self.recovered.any() and not self.flagged.any())

    @property
    def max_violation(self) -> dict[str, float]:
        return {c: _finite_or_none(np.nanmax(self.conditions[:, i])) if self.recovered.any() else None
                for i, c in enumerate(CONDITIONS)}

    def to_dict(self) -> dict:
        return {
            "passed": self.passed,
            "tolerance": self.tolerance,
            "h": self.h,
            "points": len(self.points),
            "recovered": int(self.recovered.sum()),
            "flagged": int(self.flagged.sum()),
            "max_violation": self.max_violation,
            "errors": self.errors,
            "table": [{"point": list(map(float, p)), "U": v[0], "Y": v[1], "dY": v[2], "ddY": v[3]}
                      for p, v in zip(self.points, self.values.tolist())],
        }


def recovery_stencils(F: SystemF, G: SystemF, points: np.ndarray, h: float = 1e-3,
                      guess: Callable[[np.ndarray], Sequence[float]] | None = None,
                      box: Sequence[Sequence[float]] | None = None,
                      threads: int = 1) -> tuple[np.ndarray, np.ndarray, list[str]]:
    """Recovered (U, Y, Y', Y'') at each point and its six axis neighbours at distance h.

    The centre is solved from ``guess(p)`` (or the default seeds); its neighbours are
    seeded with the centre's solution so that all seven stay on one branch. Returns
    (values of shape (n, 7, 4), converged mask of shape (n, 7), error messages).
    """
    points = np.atleast_2d(np.asarray(points, dtype=float))
    offsets = np.vstack([np.zeros(3), *(s * h * np.eye(3)[i] for i in range(3) for s in (1, -1))])

    def one(p):
        vals = np.full((7, 4), np.nan)
        ok = np.zeros(7, dtype=bool)
        errs = []
        try:
            centre = recover_transform(F, G, p, None if guess is None else guess(p), box=box)
        except RecoveryError as exc:
            return vals, ok, [f"{tuple(map(float, p))}: {exc}"]
        vals[0], ok[0] = centre.values, True
        for j in range(1, 7):
            try:
                r = recover_transform(F, G, p + offsets[j], centre.values)
                vals[j], ok[j] = r.values, True
            except RecoveryError as exc:
                errs.append(f"{tuple(map(float, p + offsets[j]))}: {exc}")
        return vals, ok, errs

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(one, points))
    else:
        results = [one(p) for p in points]
    vals = np.array([r[0] for r in results]).reshape(len(points), 7, 4)
    ok = np.array([r[1] for r in results]).reshape(len(points), 7)
    errors = [e for r in results for e in r[2]]
    return vals, ok, errors


def smoothness_from_stencils(points: np.ndarray, vals: np.ndarray, ok: np.ndarray, h: float,
                             tol: float = 1e-5, errors: Sequence[str] = ()) -> SmoothnessReport:
    """Central-difference checks of the smoothness conditions on stencil tables."""
    def d(field_i: int, axis: int) -> np.ndarray:
        return (vals[:, 1 + 2 * axis, field_i] - vals[:, 2 + 2 * axis, field_i]) / (2 * h)

    A, B, C, D = (vals[:, 0, i] for i in range(4))
    raw = [
        (d(0, 2), A), (d(1, 2), B), (d(2, 2), C), (d(3, 2), D),
        (d(1, 0), B), (d(2, 0), C), (d(3, 0), D),
        (C - d(1, 1), C), (D - d(2, 1), D),
    ]
    cond = np.stack([np.abs(v) / (1 + np.abs(ref)) for v, ref in raw], axis=1)
    recovered = np.all(ok, axis=1)
    cond[~recovered] = np.nan
    return SmoothnessReport(np.asarray(points), vals[:, 0, :], cond, recovered, list(errors), tol, h)


def verify_smoothness_conditions(F: SystemF, G: SystemF, domain, h: float = 1e-3, tol: float = 1e-5,
                                 guess: Callable[[np.ndarray], Sequence[float]] | None = None,
                                 interior: bool = True, threads: int = 1,
                                 box: Sequence[Sequence[float]] | None = None) -> SmoothnessReport:
    """Recover (U, Y, Y', Y'') over the grid of ``domain`` and check the smoothness conditions

    A_y1 = B_y1 = C_y1 = D_y1 = 0, B_u = C_u = D_u = 0, C = B_y, D = C_y

    with O(h^2) central stencils of width h around every grid point.
    """
    dom = _as_domain(domain)
    pts = dom.interior() if interior else dom.grid()
    vals, ok, errors = recovery_stencils(F, G, pts, h, guess, box, threads)
    return smoothness_from_stencils(pts, vals, ok, h, tol, errors)


__all__ = [
    "Domain", "ChartMap", "SignatureSample", "SignatureManifold", "EquivalenceVerdict", "RecoveryResult",
    "SmoothnessReport", "SignatureError", "RecoveryError", "NonConvergenceError", "SingularJacobianError",
    "SIGNATURE_COLUMNS", "IRREGULAR_COLUMNS", "CHART_COLUMNS", "CONDITIONS", "UNKNOWNS",
    "invariant_values", "signature_at", "chart_jacobian", "sample_signature", "compare_signatures",
    "recover_transform", "initial_guesses", "h_residual", "recovery_stencils", "smoothness_from_stencils",
    "verify_smoothness_conditions",
]
