"""Command-line interface: ``feedinv <command> ...``.

Thin adapters over the library. Exit codes: 0 success, 1 usage or parse error,
2 domain error or singular point, 3 non-convergence, 4 inconclusive verdict
when ``--require-decision`` is set (also any failed selftest criterion).
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
from typing import Sequence

import numpy as np

from . import equivalence as eq
from .jets import (DomainError, EvaluationError, SystemF, jet_of_system, text_of)
from .parser import ParseError
from .pseudogroup import FeedbackError, FeedbackMap, apply_feedback, orbit_report

EXIT_USAGE, EXIT_DOMAIN, EXIT_NONCONVERGENCE, EXIT_INCONCLUSIVE = 1, 2, 3, 4
DEFAULT_SEED = 0


class UsageError(Exception):
    pass


class SingularPointError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# -- argument helpers ------------------------------------------------------------------


def parse_point(text: str) -> tuple[float, float, float]:
    """``"u=1,y=0,y1=2"`` -> (1.0, 0.0, 2.0)"""
    vals = {}
    for item in filter(None, (s.strip() for s in text.split(","))):
        k, sep, v = item.partition("=")
        k = k.strip()
        if not sep or k not in ("u", "y", "y1") or k in vals:
            raise UsageError(f"bad point item {item!r}; expected u=..,y=..,y1=..")
        try:
            vals[k] = float(v)
        except ValueError:
            raise UsageError(f"bad number {v!r} for {k}") from None
    if len(vals) != 3:
        raise UsageError(f"point {text!r} must set u, y and y1")
    return vals["u"], vals["y"], vals["y1"]


def _system(text: str | None, flag: str = "--system") -> SystemF:
    if not text:
        raise UsageError(f"{flag} is required")
    return SystemF.parse(text)


def _domain(text: str | None) -> eq.Domain:
    if not text:
        raise UsageError("--domain is required")
    try:
        return eq.Domain.parse(text)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _check_point(F: SystemF, p) -> None:
    if p[2] == 0:
        raise SingularPointError(f"singular point {p}: y1 = 0")


def _emit(args, doc: dict, human: str, rows: list[dict] | None = None) -> None:
    doc = {**doc, "config": _config_of(args)}
    if args.json:
        text = json.dumps(doc, indent=2, default=_jsonable)
        if args.json == "-":
            print(text)
        else:
            with open(args.json, "w") as fh:
                fh.write(text + "\n")
    out_csv = getattr(args, "csv", None)
    if out_csv and rows:
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=list(rows[0]))
        w.writeheader()
        w.writerows(rows)
        if out_csv == "-":
            print(buf.getvalue(), end="")
        else:
            with open(out_csv, "w", newline="") as fh:
                fh.write(buf.getvalue())
    if "-" not in (args.json, out_csv):
        print(human)


def _jsonable(x):
    if isinstance(x, (np.floating, np.integer)):
        return x.item()
    if isinstance(x, np.ndarray):
        return x.tolist()
    return str(x)


def _config_of(args) -> dict:
    return {k: v for k, v in vars(args).items() if k not in ("func",) and not k.startswith("_")}


def _table(rows: Sequence[Sequence[str]]) -> str:
    widths = [max(len(str(r[i])) for r in rows) for i in range(len(rows[0]))]
    return "\n".join("  ".join(str(c).ljust(w) for c, w in zip(r, widths)).rstrip() for r in rows)


def _num(x) -> str:
    if x is None or (isinstance(x, float) and not np.isfinite(x)):
        return "nan"
    return f"{float(x):.10g}"


# -- commands ----------------------------------------------------------------------------


def cmd_invariants(args) -> int:
    from .frame import default_frame

    F = _system(args.system)
    cat = default_frame().catalog
    points = [parse_point(a) for a in (args.at or [])]
    names = args.names.split(",") if args.names else None
    results = []
    for p in points:
        _check_point(F, p)
        rep = _classify_point(F, p)
        sel = names or [n for n in cat.names() if cat.entries[n].branch in ("both", "regular")] + (
            ["M", "nabla_u M", "nabla_y1 M"] if not rep["regular"] else [])
        unknown = [n for n in sel if n not in cat]
        if unknown:
            raise UsageError(f"unknown invariants: {', '.join(unknown)}")
        order = max(cat.entries[n].order for n in sel)
        jp = jet_of_system(F, p, order)
        vals = cat.evaluate(jp, sel)
        results.append({"point": dict(zip(("u", "y", "y1"), p)), "flags": rep,
                        "values": {n: float(v) for n, v in vals.items()}})
    doc = {"system": text_of(F.expr), "catalog": json.loads(cat.to_json())["invariants"], "points": results}
    lines = [f"system: {text_of(F.expr)}"]
    for r in results:
        p = r["point"]
        lines.append(f"\nat u={p['u']:g}, y={p['y']:g}, y1={p['y1']:g} "
                     f"({'regular' if r['flags']['regular'] else 'weakly regular' if r['flags']['weakly_regular'] else 'not regular'})")
        lines.append(_table([("invariant", "value")] + [(n, _num(v)) for n, v in r["values"].items()]))
    if not args.no_ledger:
        from .ledger import build_ledger

        led = build_ledger(trials=args.ledger_trials, seed=args.seed, syzygy=args.full_ledger)
        doc["ledger"] = led.to_dict()
        lines += ["", "formula ledger (printed vs normative):", led.table()]
    rows = [{**r["point"], **r["values"]} for r in results]
    _emit(args, doc, "\n".join(lines), rows)
    return 0


def _classify_point(F: SystemF, p) -> dict:
    from .frame import classify

    rep = classify(F, [p])
    return {"singular": bool(rep.singular[0]), "weakly_regular": bool(rep.weakly_regular[0]),
            "regular": bool(rep.regular[0]), "J_u": _finite(rep.J_u[0])}


def _finite(x):
    x = float(x)
    return x if np.isfinite(x) else None


def cmd_classify(args) -> int:
    from .frame import classify

    F = _system(args.system)
    if args.at:
        pts = np.array([parse_point(a) for a in args.at])
    else:
        pts = _domain(args.domain).grid()
    rep = classify(F, pts)
    doc = {"system": text_of(F.expr), **rep.summary()}
    rows = [{"u": p[0], "y": p[1], "y1": p[2], "singular": bool(s), "weakly_regular": bool(w),
             "regular": bool(r), "J_u": _finite(j)}
            for p, s, w, r, j in zip(rep.points, rep.singular, rep.weakly_regular, rep.regular, rep.J_u)]
    if args.at:
        doc["points"] = rows
    human = _table([("points", "singular", "weakly regular", "regular", "irregular system", "max |J_u|")]
                   + [(str(doc["points"] if not args.at else len(rows)), str(rep.counts["singular"]),
                       str(rep.counts["weakly_regular"]), str(rep.counts["regular"]),
                       "yes" if rep.irregular else "no", _num(rep.max_abs_J_u))])
    _emit(args, doc, human, rows)
    return 0


def cmd_orbitdim(args) -> int:
    F = _system(args.system)
    if not args.at:
        raise UsageError("--at is required")
    p = parse_point(args.at)
    _check_point(F, p)
    rep = _classify_point(F, p)
    if not rep["weakly_regular"]:
        raise SingularPointError(f"singular point {p}: orbit dimension is stated for weakly regular jets")
    jp = jet_of_system(F, p, args.order)
    r = orbit_report(jp, args.order, rtol=args.rtol)
    doc = r.to_dict()
    _emit(args, {"system": text_of(F.expr), **doc}, str(r.rank))
    return 0


def cmd_apply(args) -> int:
    F = _system(args.system)
    phi = FeedbackMap.parse(args.Y or "y", args.U or "u")
    G = apply_feedback(F, phi)
    _emit(args, {"system": text_of(F.expr), "map": phi.to_dict(), "result": text_of(G.expr)}, text_of(G.expr))
    return 0


def cmd_signature(args) -> int:
    F = _system(args.system)
    M = eq.sample_signature(F, _domain(args.domain), mode=args.mode, threads=args.threads)
    if args.csv and args.csv != "-":
        M.to_csv(args.csv)
    elif args.csv == "-":
        print(M.to_csv(), end="")
    if args.json:
        doc = {**M.to_dict(), "config": _config_of(args)}
        text = json.dumps(doc, indent=2, default=_jsonable)
        if args.json == "-":
            print(text)
        else:
            with open(args.json, "w") as fh:
                fh.write(text + "\n")
    if "-" not in (args.json, args.csv):
        st = M.rank_stats
        print(f"{len(M)} samples ({M.skipped} skipped), chart {','.join(M.chart)}, "
              f"rank-3 fraction {st['full_rank_fraction']:.3f}, mode {M.mode}")
    return 0


def cmd_equiv(args) -> int:
    F = _system(args.system_f, "--system-f")
    G = _system(args.system_g, "--system-g")
    dom = _domain(args.domain)
    A = eq.sample_signature(F, dom, mode=args.mode, threads=args.threads)
    B = eq.sample_signature(G, dom, mode=args.mode, threads=args.threads)
    v = eq.compare_signatures(A, B, tol=args.tol)
    d = v.to_dict()
    human = _table([("verdict", v.verdict), ("max deviation", _num(v.max_deviation)),
                    ("overlap", f"{v.overlap:.3f}"), ("reason", v.reason or "-"),
                    ("mode", v.mode + (" (heuristic)" if v.mode == "irregular" else ""))])
    _emit(args, d, human + "\n" + v.diagnostics)
    if v.verdict == "inconclusive" and args.require_decision:
        return EXIT_INCONCLUSIVE
    return 0


def cmd_recover(args) -> int:
    F = _system(args.system_f, "--system-f")
    G = _system(args.system_g, "--system-g")
    guess = [float(x) for x in args.guess.split(",")] if args.guess else None
    if guess is not None and len(guess) != 4:
        raise UsageError("--guess takes U,Y,dY,ddY")
    box = _domain(args.domain).box if args.domain else None
    if args.smoothness:
        dom = _domain(args.domain)
        rep = eq.verify_smoothness_conditions(F, G, dom, h=args.h, tol=args.tol, threads=args.threads,
                                              guess=(lambda p: guess) if guess else None)
        d = rep.to_dict()
        human = _table([("condition", "max violation")]
                       + [(c, _num(v)) for c, v in rep.max_violation.items()])
        human += f"\nrecovered {d['recovered']}/{d['points']}, flagged {d['flagged']}, " \
                 f"{'passed' if rep.passed else 'FAILED'} at tolerance {args.tol:g}"
        rows = [{"u": r["point"][0], "y": r["point"][1], "y1": r["point"][2],
                 **{k: r[k] for k in ("U", "Y", "dY", "ddY")}} for r in d["table"]]
        _emit(args, d, human, rows)
        return 0 if rep.passed else EXIT_NONCONVERGENCE
    if not args.at:
        raise UsageError("recover needs --at (or --domain with --smoothness)")
    results = []
    for a in args.at:
        p = parse_point(a)
        _check_point(F, p)
        results.append(eq.recover_transform(F, G, p, guess=guess, box=box).to_dict())
    human = _table([("u", "y", "y1", "U", "Y", "dY", "ddY", "residual", "cond")]
                   + [tuple(_num(x) for x in (*r["point"], r["U"], r["Y"], r["dY"], r["ddY"],
                                                r["residual"], r["jacobian_condition"])) for r in results])
    rows = [{"u": r["point"][0], "y": r["point"][1], "y1": r["point"][2],
             **{k: r[k] for k in ("U", "Y", "dY", "ddY", "residual")}} for r in results]
    _emit(args, {"results": results}, human, rows)
    return 0


def cmd_calibrate(args) -> int:
    from .calibration import (CalibrationSamples, affine_ansatz_basis, calibrate_affine_invariants,
                              dump_matrix_csv, expression_coefficients, invariance_matrix)
    from .frame import default_frame

    basis = affine_ansatz_basis().pruned(seed=args.seed)
    points = args.points or 3 * len(basis) // args.systems + 10
    samples = CalibrationSamples.generate(args.seed, systems=args.systems, points=points)
    res = calibrate_affine_invariants(basis, samples)
    fr = default_frame()
    proj = {}
    for n in ("K", "L"):
        c, _ = expression_coefficients(getattr(fr, n), basis)
        proj[n] = res.projection_residual(c)
    d = {**res.to_dict(), "projection_residual": proj}
    if args.matrix:
        dump_matrix_csv(args.matrix, basis, invariance_matrix(basis, samples))
    human = _table([("terms", str(len(basis))), ("rows", str(res.rows)),
                    ("nullspace dimension", str(res.nullspace.shape[1])),
                    ("pure order-3 dimension", str(res.pure_order3_dimension)),
                    ("K projection residual", f"{proj['K']:.2e}"),
                    ("L projection residual", f"{proj['L']:.2e}")])
    _emit(args, d, human)
    return 0


def cmd_selftest(args) -> int:
    from .acceptance import CRITERIA, run_all

    nums = [int(x) for x in args.criteria.split(",")] if args.criteria else list(CRITERIA)
    bad = [n for n in nums if n not in CRITERIA]
    if bad:
        raise UsageError(f"unknown criteria {bad}")
    results = run_all(nums, seed=args.seed, threads=args.threads)
    failed = [r.number for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} criteria passed")
    if args.json:
        doc = {"results": [{"criterion": r.number, "title": r.title, "passed": r.passed,
                            "detail": r.detail, "seconds": r.seconds} for r in results],
               "config": _config_of(args)}
        with open(args.json, "w") as fh:
            json.dump(doc, fh, indent=2)
    return EXIT_INCONCLUSIVE if failed else 0


# -- parser -------------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=DEFAULT_SEED)
    common.add_argument("--threads", type=int, default=os.cpu_count() or 1)
    common.add_argument("--json", metavar="PATH", help="write a JSON report ('-' for stdout)")
    common.add_argument("--config", metavar="TOML", help="defaults from a TOML file; flags win")

    p = _Parser(prog="feedinv", description="Feedback differential invariants of y'' = F(y, y', u).")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("invariants", parents=[common], help="evaluate the invariant catalog")
    s.add_argument("--system")
    s.add_argument("--at", action="append", help="u=..,y=..,y1=.. (repeatable)")
    s.add_argument("--names", help="comma-separated invariant names")
    s.add_argument("--csv", metavar="PATH")
    s.add_argument("--no-ledger", action="store_true", help="skip the printed-vs-normative ledger")
    s.add_argument("--full-ledger", action="store_true", help="include the second-syzygy probe")
    s.add_argument("--ledger-trials", type=int, default=2)
    s.set_defaults(func=cmd_invariants)

    s = sub.add_parser("classify", parents=[common], help="regularity flags")
    s.add_argument("--system")
    s.add_argument("--domain")
    s.add_argument("--at", action="append")
    s.add_argument("--csv", metavar="PATH")
    s.set_defaults(func=cmd_classify)

    s = sub.add_parser("orbit-dim", parents=[common], help="orbit dimension in J^k")
    s.add_argument("--system")
    s.add_argument("--order", type=int, default=3)
    s.add_argument("--at")
    s.add_argument("--rtol", type=float, default=1e-8)
    s.set_defaults(func=cmd_orbitdim)

    s = sub.add_parser("apply", parents=[common], help="transform a system by (Y, U)")
    s.add_argument("--system")
    s.add_argument("--Y")
    s.add_argument("--U")
    s.set_defaults(func=cmd_apply)

    s = sub.add_parser("signature", parents=[common], help="sample a signature manifold")
    s.add_argument("--system")
    s.add_argument("--domain")
    s.add_argument("--mode", choices=("regular", "irregular"), default="regular")
    s.add_argument("--csv", metavar="PATH")
    s.set_defaults(func=cmd_signature)

    s = sub.add_parser("equiv", parents=[common], help="decide local feedback equivalence")
    s.add_argument("--system-f")
    s.add_argument("--system-g")
    s.add_argument("--domain")
    s.add_argument("--mode", choices=("regular", "irregular"), default="regular")
    s.add_argument("--tol", type=float, default=1e-4)
    s.add_argument("--require-decision", action="store_true", help="exit 4 on an inconclusive verdict")
    s.set_defaults(func=cmd_equiv)

    s = sub.add_parser("recover", parents=[common], help="recover (U, Y, Y', Y'') pointwise")
    s.add_argument("--system-f")
    s.add_argument("--system-g")
    s.add_argument("--at", action="append")
    s.add_argument("--domain")
    s.add_argument("--guess", help="U,Y,dY,ddY")
    s.add_argument("--smoothness", action="store_true", help="certify the smoothness conditions on --domain")
    s.add_argument("--h", type=float, default=1e-3)
    s.add_argument("--tol", type=float, default=1e-5)
    s.add_argument("--csv", metavar="PATH")
    s.set_defaults(func=cmd_recover)

    s = sub.add_parser("calibrate", parents=[common], help="affine-ansatz recovery of order-3 invariants")
    s.add_argument("--systems", type=int, default=12)
    s.add_argument("--points", type=int)
    s.add_argument("--matrix", metavar="CSV", help="dump the invariance matrix")
    s.set_defaults(func=cmd_calibrate, seed=1)

    s = sub.add_parser("selftest", parents=[common], help="run the acceptance criteria")
    s.add_argument("--criteria", help="comma-separated subset, e.g. 1,2,6")
    s.set_defaults(func=cmd_selftest)
    return p


def _load_config(path: str, command: str) -> dict:
    import tomli

    with open(path, "rb") as fh:
        data = tomli.load(fh)
    flat = {k: v for k, v in data.items() if not isinstance(v, dict)}
    flat.update(data.get(command, {}))
    return {k.replace("-", "_"): v for k, v in flat.items()}


def main(argv: Sequence[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.config:
        try:
            cfg = _load_config(args.config, args.command)
        except (OSError, ValueError) as exc:
            print(f"feedinv: error: config {args.config}: {exc}", file=sys.stderr)
            return EXIT_USAGE
        sub = parser._subparsers._group_actions[0].choices[args.command]
        known = {a.dest for a in sub._actions}
        unknown = set(cfg) - known
        if unknown:
            print(f"feedinv: error: unknown config keys {sorted(unknown)}", file=sys.stderr)
            return EXIT_USAGE
        sub.set_defaults(**cfg)
        args = parser.parse_args(argv)
    for name in ("threads",):
        if getattr(args, name, 1) < 1:
            print("feedinv: error: --threads must be >= 1", file=sys.stderr)
            return EXIT_USAGE
    try:
        return args.func(args)
    except (UsageError, ParseError, FeedbackError) as exc:
        print(f"feedinv: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SingularPointError as exc:
        print(f"feedinv: {exc}", file=sys.stderr)
        return EXIT_DOMAIN
    except eq.NonConvergenceError as exc:
        print(f"feedinv: {exc}", file=sys.stderr)
        return EXIT_NONCONVERGENCE
    except (eq.SingularJacobianError, eq.SignatureError, DomainError, EvaluationError) as exc:
        print(f"feedinv: singular point or domain error: {exc}", file=sys.stderr)
        return EXIT_DOMAIN
    except ValueError as exc:
        print(f"feedinv: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
