"""``mz`` command line entry point.

Exit codes: 0 success, 2 bad input (schema, missing file, invalid
argument), 3 numeric divergence, 4 invariant violation.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from ..errors import MZError
from ..euler import (
    apply_A_euler,
    apply_B_euler,
    euler_A,
    euler_B,
    exactness_check,
    matrix_to_state,
    potential_size,
    random_trig_potential,
    state_size,
    state_to_matrix,
    symgrad_pair,
)
from ..field import Grid, write_fld
from ..truncation.profile import make_profile
from .runner import EXIT_INVARIANT, EXIT_OK, EXIT_SCHEMA, run_config

EULER_RTOL = 1e-10


def _emit(obj, path=None):
    text = json.dumps(obj, indent=1, sort_keys=True, default=float)
    if path:
        Path(path).write_text(text)
    else:
        print(text)


def cmd_truncate(args) -> int:
    code, report = run_config(args.config, args.out_dir)
    if isinstance(report, str):
        print(f"mz truncate: {report}", file=sys.stderr)
    else:
        for row in report["runs"]:
            print(json.dumps({k: row[k] for k in row if k != "checks"}, default=float))
        for v in report["violations"]:
            print(f"violation: {v}", file=sys.stderr)
    return code


def cmd_euler_potential(args) -> int:
    d = args.dim
    n = args.grid
    grid = Grid((n,) * (d + 1), 2 * np.pi / n, boundary="periodic")
    psi = random_trig_potential(grid, d, args.seed, kmax=args.kmax)
    z = apply_B_euler(psi, method=args.method)
    div = apply_A_euler(z, method=args.method)
    U = state_to_matrix(z.data, d)
    u_sup = float(np.abs(U).max())
    resid = float(np.abs(div.data).max())
    roundtrip = float(np.abs(matrix_to_state(U) - z.data).max())
    report = {
        "dim": d,
        "grid": n,
        "seed": args.seed,
        "method": args.method,
        "inputs": potential_size(d),
        "state_components": state_size(d),
        "U_sup": u_sup,
        "divergence_sup": resid,
        "relative_divergence": resid / u_sup if u_sup else 0.0,
        "state_roundtrip": roundtrip,
    }
    report["ok"] = report["relative_divergence"] <= EULER_RTOL
    if args.out:
        write_fld(args.out, z)
    _emit(report, args.report)
    return EXIT_OK if report["ok"] else EXIT_INVARIANT


def cmd_symbol_check(args) -> int:
    if args.pair == "euler":
        A, B = euler_A(args.dim), euler_B(args.dim, args.index_mode)
    else:
        B, A = symgrad_pair(args.dim)
    rep = exactness_check(A, B, trials=args.trials, tol=args.tol, seed=args.seed)
    out = {"pair": args.pair, "dim": args.dim, **rep.to_json()}
    _emit(out)
    return EXIT_OK if rep.ok else EXIT_INVARIANT


def cmd_profile_cert(args) -> int:
    cert = make_profile(args.epsilon, 1.0).certificate()
    _emit(cert)
    return EXIT_OK if all(v for v in cert.values() if isinstance(v, bool)) else EXIT_INVARIANT


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mz", description="Truncation experiments and potential checks.")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("truncate", help="run a truncation experiment from a JSON config")
    t.add_argument("--config", required=True)
    t.add_argument("--out-dir", default=None)
    t.set_defaults(func=cmd_truncate)

    e = sub.add_parser("euler-potential", help="apply the Euler potential to random trigonometric input")
    e.add_argument("--dim", type=int, default=3)
    e.add_argument("--grid", type=int, default=16)
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--kmax", type=int, default=2)
    e.add_argument("--method", choices=["spectral", "fd"], default="spectral")
    e.add_argument("--out", default=None)
    e.add_argument("--report", default=None)
    e.set_defaults(func=cmd_euler_potential)

    s = sub.add_parser("symbol-check", help="sample symbols and test exactness")
    s.add_argument("--pair", choices=["euler", "symgrad"], required=True)
    s.add_argument("--dim", type=int, required=True)
    s.add_argument("--trials", type=int, default=100)
    s.add_argument("--tol", type=float, default=1e-12)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--index-mode", choices=["full", "spatial"], default="full")
    s.set_defaults(func=cmd_symbol_check)

    c = sub.add_parser("profile-cert", help="slope and curvature certificate of the radial profile")
    c.add_argument("--epsilon", type=float, required=True)
    c.set_defaults(func=cmd_profile_cert)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_SCHEMA if exc.code else EXIT_OK
    try:
        return args.func(args)
    except MZError as exc:
        print(f"mz {args.command}: {exc}", file=sys.stderr)
        return EXIT_SCHEMA


if __name__ == "__main__":
    sys.exit(main())
