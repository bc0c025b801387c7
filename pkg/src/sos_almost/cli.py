"""Command-line front end.

Exit codes: 0 success, 1 verification failed, 2 bad input (parse error,
malformed file, negative polynomial), 3 solver failure, 4 certificate
schedule exhausted, 5 convexity rejected.
"""
from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

from . import __version__
from .certificate import (
    CertificateError,
    NegativePolynomialError,
    ScheduleExhausted,
    certificate_from_dict,
    certificate_to_dict,
    find_r_eps,
    verify,
)
from .convex_kkt import (
    ConvexityError,
    ConvexProgram,
    KktError,
    NegativeOnSetError,
    build_representation,
    representation_from_dict,
    representation_to_dict,
    verify_representation,
)
from .poly import PolynomialError, parse
from .relaxation import RelaxationConfig, RelaxationError, build_primal, feasible_start, min_order
from .sdp import SdpError, solve

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_INPUT = 2
EXIT_SOLVER = 3
EXIT_EXHAUSTED = 4
EXIT_NONCONVEX = 5

DEFAULT_RADII = (1.0, 1.5, 2.0)
DEFAULT_TOL = 1e-8
MONOTONE_SLACK = 2.0

log = logging.getLogger("sos_almost")


@dataclass
class SweepRow:
    r: int
    M: float
    status: str
    primal_value: float
    dual_value: float
    gap: float
    iterations: int
    wall_time: float
    message: str = ""


@dataclass
class SweepReport:
    f: str
    n: int
    tol: float
    rows: list[SweepRow] = field(default_factory=list)

    def monotone_flags(self) -> dict[float, bool]:
        """Per radius: primal values nondecreasing in r up to ``2 tol`` (relative)."""
        flags = {}
        for M in dict.fromkeys(row.M for row in self.rows):
            col = sorted((row for row in self.rows if row.M == M and row.status == "optimal"),
                         key=lambda row: row.r)
            ok = True
            for a, b in zip(col, col[1:]):
                if a.primal_value > b.primal_value + MONOTONE_SLACK * self.tol * (1 + abs(b.primal_value)):
                    ok = False
            flags[M] = ok
        return flags

    def all_optimal(self) -> bool:
        return all(row.status == "optimal" for row in self.rows)

    def as_dict(self) -> dict:
        return {
            "f": self.f, "n": self.n, "tol": self.tol,
            "rows": [row.__dict__ for row in self.rows],
            "monotone": {str(k): v for k, v in self.monotone_flags().items()},
        }


def _g9(v: float) -> str:
    return f"{v:.9g}"


def format_table(report: SweepReport) -> str:
    header = f"{'r':>3} {'M':>6} {'status':>14} {'primal':>16} {'dual':>16} {'gap':>9} {'iters':>5}"
    lines = [header]
    for row in report.rows:
        lines.append(
            f"{row.r:>3} {_g9(row.M):>6} {row.status:>14} {_g9(row.primal_value):>16} "
            f"{_g9(row.dual_value):>16} {row.gap:>9.2e} {row.iterations:>5}")
    for M, ok in report.monotone_flags().items():
        lines.append(f"M={_g9(M)}: nondecreasing in r: {'yes' if ok else 'NO'}")
    return "\n".join(lines)


def _thread_count() -> int:
    try:
        return max(1, int(os.environ.get("SOS_ALMOST_THREADS", "1")))
    except ValueError:
        return 1


def _float_list(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def _int_list(text: str) -> list[int]:
    out = []
    try:
        for part in text.split(","):
            part = part.strip()
            if not part:
                continue
            if ".." in part:
                lo, hi = part.split("..")
                out.extend(range(int(lo), int(hi) + 1))
            else:
                out.append(int(part))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")
    return out


def _err(msg: str) -> None:
    print(f"error: {msg}", file=sys.stderr)


def _write_json(path: str, data: dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(data, fh, indent=1)
        fh.write("\n")


def run_sweep(f, rs, radii, tol, threads=1) -> SweepReport:
    cells = [(r, M) for M in radii for r in rs]

    def one(cell):
        r, M = cell
        t0 = time.perf_counter()
        try:
            cfg = RelaxationConfig(r=r, M=M, tol=tol)
            prob = build_primal(f, cfg)
            sol = solve(prob, feasible_start(cfg, f.n), tol)
        except (SdpError, RelaxationError) as exc:
            return SweepRow(r, M, "error", math.nan, math.nan, math.nan, 0,
                            time.perf_counter() - t0, str(exc))
        return SweepRow(r, M, sol.status, sol.primal_value, sol.dual_value, sol.gap,
                        sol.iterations, time.perf_counter() - t0, sol.message)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            rows = list(pool.map(one, cells))
    else:
        rows = [one(c) for c in cells]
    return SweepReport(str(f), f.n, tol, rows)


def cmd_minimize(args) -> int:
    f = parse(args.f, args.n)
    rs = args.r or list(range(min_order(f), min_order(f) + 5))
    radii = args.M or list(DEFAULT_RADII)
    report = run_sweep(f, rs, radii, args.tol, _thread_count())
    if args.json:
        print(json.dumps(report.as_dict(), indent=1))
    else:
        print(format_table(report))
    if args.out:
        _write_json(args.out, report.as_dict())
    for row in report.rows:
        if row.status != "optimal":
            _err(f"cell r={row.r} M={row.M}: {row.status} {row.message}")
    return EXIT_OK if report.all_optimal() else EXIT_SOLVER


def _schedule(f, radii, rs, rmax):
    r0 = min_order(f)
    if rs is None:
        top = rmax if rmax is not None else r0 + 4
        rs = list(range(r0, top + 1))
    return [(M, r) for M in radii for r in rs]


def cmd_approximate(args) -> int:
    f = parse(args.f, args.n)
    if not args.eps > 0:
        _err("--eps must be positive")
        return EXIT_INPUT
    schedule = _schedule(f, args.M or list(DEFAULT_RADII), args.r, args.rmax)
    try:
        cert = find_r_eps(f, args.eps, schedule, tol=args.tol, workers=_thread_count())
    except NegativePolynomialError as exc:
        _err(f"rejected: {exc}")
        return EXIT_INPUT
    except ScheduleExhausted as exc:
        _err(str(exc))
        print(f"best lambda_M: {exc.best_lambda}")
        return EXIT_EXHAUSTED
    data = certificate_to_dict(cert)
    out = args.out or "certificate.json"
    _write_json(out, data)
    prov = cert.provenance
    summary = {
        "epsilon": cert.epsilon, "r_eps": cert.r_eps, "M": prov.get("M"),
        "lambda_M": prov.get("lambda_M"), "residual": cert.identity_residual,
        "l1_gap": cert.l1_gap, "squares": len(cert.squares), "out": out,
    }
    if args.json:
        print(json.dumps(summary, indent=1))
    else:
        for k, v in summary.items():
            print(f"{k}: {v}")
    return EXIT_OK


def cmd_verify(args) -> int:
    try:
        with open(args.path, encoding="utf-8") as fh:
            data = json.load(fh)
        if not isinstance(data, dict):
            raise CertificateError("top level must be an object")
        if "g" in data or data.get("kind") == "kkt-representation":
            rep = representation_from_dict(data)
            result = verify_representation(rep)
            report = result.__dict__
        else:
            cert = certificate_from_dict(data)
            result = verify(cert.f, cert)
            report = result.as_dict()
    except (OSError, json.JSONDecodeError, CertificateError, PolynomialError) as exc:
        _err(f"malformed file: {exc}")
        return EXIT_INPUT
    if args.json:
        print(json.dumps(report, indent=1, default=float))
    else:
        for k, v in report.items():
            print(f"{k}: {v}")
        print("PASS" if result.passed else "FAIL")
    return EXIT_OK if result.passed else EXIT_FAILED


def cmd_kkt(args) -> int:
    f = parse(args.f, args.n)
    gs = [parse(g, args.n) for g in (args.g or [])]
    x0 = args.x0 if args.x0 is not None else [0.0] * args.n
    try:
        prog = ConvexProgram(f, gs, x0)
    except ValueError as exc:
        _err(str(exc))
        return EXIT_INPUT
    schedule = _schedule(f, args.M or list(DEFAULT_RADII), args.r, args.rmax)
    try:
        rep = build_representation(prog, args.eps, schedule, sdp_tol=args.tol)
    except ConvexityError as exc:
        _err(f"convexity rejected: {exc}")
        print(f"witness: {exc.witness.tolist()} ({exc.which}, eigenvalue {exc.eigenvalue:.6g})")
        return EXIT_NONCONVEX
    except (NegativeOnSetError, NegativePolynomialError) as exc:
        _err(f"rejected: {exc}")
        return EXIT_INPUT
    except KktError as exc:
        _err(f"{exc} {exc.residuals}")
        return EXIT_SOLVER
    except ScheduleExhausted as exc:
        _err(str(exc))
        print(f"best lambda_M: {exc.best_lambda}")
        return EXIT_EXHAUSTED
    out = args.out or "representation.json"
    _write_json(out, representation_to_dict(rep))
    summary = {
        "lambda": rep.multipliers.tolist(), "x_star": rep.x_star.tolist(), "f_star": rep.f_star,
        "epsilon": rep.epsilon, "r_eps": rep.r_eps, "residual": rep.residual, "out": out,
    }
    if args.json:
        print(json.dumps(summary, indent=1))
    else:
        for k, v in summary.items():
            print(f"{k}: {v}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="sos-almost", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def poly_args(sp):
        sp.add_argument("-f", required=True, help='polynomial, e.g. "x1^2 - 2*x1 + 1"')
        sp.add_argument("-n", type=int, required=True, help="number of variables")
        sp.add_argument("--tol", type=float, default=DEFAULT_TOL)
        sp.add_argument("--out", help="write a JSON report/certificate here")
        sp.add_argument("--json", action="store_true", help="print JSON instead of text")

    sp = sub.add_parser("minimize", help="lower bounds from the moment relaxations over an (r, M) grid")
    poly_args(sp)
    sp.add_argument("--r", type=_int_list, help="orders, e.g. 3,4,5 or 3..5")
    sp.add_argument("--M", type=_float_list, help="box radii, e.g. 1,1.5,2")
    sp.set_defaults(func=cmd_minimize)

    sp = sub.add_parser("approximate", help="SOS certificate for f + eps*Theta")
    poly_args(sp)
    sp.add_argument("--eps", type=float, required=True)
    sp.add_argument("--M", type=_float_list)
    sp.add_argument("--r", type=_int_list)
    sp.add_argument("--rmax", type=int)
    sp.set_defaults(func=cmd_approximate)

    sp = sub.add_parser("verify", help="check a certificate or representation file")
    sp.add_argument("path")
    sp.add_argument("--json", action="store_true")
    sp.set_defaults(func=cmd_verify)

    sp = sub.add_parser("kkt", help="scalar-multiplier representation for a convex program")
    poly_args(sp)
    sp.add_argument("-g", action="append", help="concave constraint g >= 0 (repeatable)")
    sp.add_argument("--x0", type=_float_list, help="Slater point, comma-separated")
    sp.add_argument("--eps", type=float, default=0.5)
    sp.add_argument("--M", type=_float_list)
    sp.add_argument("--r", type=_int_list)
    sp.add_argument("--rmax", type=int)
    sp.set_defaults(func=cmd_kkt)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INPUT if exc.code else EXIT_OK
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(name)s: %(message)s")
    try:
        return args.func(args)
    except PolynomialError as exc:
        _err(f"parse error: {exc}")
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
