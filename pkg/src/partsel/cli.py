"""Command-line entry point; every command writes CSV.

Exit codes: 0 success, 1 computation failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import csv
import io
import os
import sys
import tempfile
from pathlib import Path

import numpy as np

from . import __version__
from .accounting import DpBudget
from .additive import GAP_TOL, compare_privacy, noise_rows
from .divergence import RenyiBudget
from .pipeline import (EmptyCorpus, bound_and_weight, compare_curves, gaussian_select,
                       ingest, snaps_select_pipeline)
from .primitive import pi_star
from .snaps import SnapsParams, psi_table, table_rows

SCHEMA_VERSION = 1


class UsageError(Exception):
    pass


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.12g}"
    return str(v)


def write_csv(path, name, columns, rows):
    """Write rows atomically under a one-line schema comment."""
    buf = io.StringIO()
    buf.write(f"# schema: {name} v{SCHEMA_VERSION}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    w.writerows([_fmt(v) for v in row] for row in rows)
    text = buf.getvalue()
    if str(path) == "-":
        sys.stdout.write(text)
        return
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent if str(path.parent) else ".", prefix=".tmp-", suffix=".csv")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _float_list(s):
    s = s.strip()
    if not s:
        return []
    try:
        return [float(v) for v in s.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {s!r}")


def _budget(eps, delta, alpha):
    try:
        return RenyiBudget(delta, alpha, eps)
    except ValueError as e:
        raise UsageError(str(e))


def _dp_target(args):
    if not (args.eps_hat >= 0 and 0 < args.delta_hat < 1):
        raise UsageError("need eps_hat >= 0 and delta_hat in (0, 1)")
    if args.l0 < 1:
        raise UsageError("l0 must be >= 1")
    return DpBudget(args.eps_hat, args.delta_hat)


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_pi_star(args):
    b = _budget(args.eps, args.delta, args.alpha)
    if args.n_max < 0:
        raise UsageError("n_max must be >= 0")
    t = pi_star(args.n_max, b)
    write_csv(args.out, "pi_star", ["n", "pi"], ((n, float(p)) for n, p in enumerate(t.probs)))


def _snaps_params(args):
    try:
        if args.target_eps is not None:
            target = DpBudget(args.target_eps, args.target_delta)
            return SnapsParams.for_target(target, args.l0, alpha=args.alpha, r=args.r,
                                          delta_disc=args.delta_disc, delta_cap=args.delta_cap)
        missing = [k for k in ("eps0", "delta0", "eps1", "delta1") if getattr(args, k) is None]
        if missing:
            raise UsageError("missing " + ", ".join(missing) + " (or pass --target-eps)")
        return SnapsParams(args.eps0, args.delta0, args.eps1, args.delta1, args.r,
                           args.delta_disc, args.delta_cap, args.alpha)
    except ValueError as e:
        raise UsageError(str(e))


def _target_params(target, args):
    try:
        return SnapsParams.for_target(target, args.l0, delta_disc=args.delta_disc)
    except ValueError as e:
        raise UsageError(str(e))


def cmd_snaps_table(args):
    params = _snaps_params(args)
    if args.n_max < 0:
        raise UsageError("n_max must be >= 0")
    t = psi_table(params, args.n_max)
    write_csv(args.out, "snaps_table", ["n", "weight", "psi"], table_rows(params, t))


def cmd_optimal_additive(args):
    if args.n_d < 2 or not 0 < args.delta < 1:
        raise UsageError("need n_d >= 2 and delta in (0, 1)")
    for a in args.alphas:
        if not a > 1:
            raise UsageError("alpha must be > 1")
    rows = list(noise_rows(args.n_d, args.delta, args.alphas))
    for a in args.alphas:
        gaps = {r[4] for r in rows if r[0] == a}
        eps = {r[3] for r in rows if r[0] == a}
        gap = max(gaps) if gaps else 0.0
        print(f"alpha={a:g} epsilon={min(eps):.12g} gap={gap:.3g}", file=sys.stderr)
        if gap > GAP_TOL:
            print(f"warning: alpha={a:g} not certified (gap {gap:.3g} > {GAP_TOL:g})", file=sys.stderr)
    write_csv(args.out, "optimal_additive", ["alpha", "x", "p", "epsilon", "gap"], rows)


def cmd_fig3(args):
    if args.n_d < 3 or not 0 < args.delta < 1 / args.n_d:
        raise UsageError("need n_d >= 3 and delta in (0, 1/n_d)")
    rows = []
    for a in args.alphas:
        if not a > 1:
            raise UsageError("alpha must be > 1")
        c = compare_privacy(args.n_d, args.delta, a)
        rows.append((a, c.eps_pistar, c.eps_opt_additive, c.eps_pi,
                     c.eps_trunc_laplace, c.eps_trunc_gauss, c.gap))
    write_csv(args.out, "fig3",
              ["alpha", "eps_pistar", "eps_opt_additive", "eps_pi", "eps_trunc_laplace",
               "eps_trunc_gauss", "gap"], rows)


def cmd_select(args):
    target = _dp_target(args)
    try:
        ds = ingest(args.corpus, user_column=args.user_column)
    except EmptyCorpus:
        write_csv(args.out, "selection", ["item", "weight"], [])
        print("selected=0 expected=0", file=sys.stderr)
        return
    except OSError as e:
        raise UsageError(f"cannot read corpus: {e}")
    ds = bound_and_weight(ds, args.l0, args.seed, mode=args.bounding)
    if args.mode == "snaps":
        params = _target_params(target, args)
        sel = snaps_select_pipeline(ds, target, params, args.l0, args.seed)
        items = sel.items
        print(f"selected={len(items)} expected={sel.expected_size:.6f} "
              f"guarantee=({sel.guarantee.epsilon:g},{sel.guarantee.delta:.6g})-DP", file=sys.stderr)
    else:
        items = gaussian_select(ds, target, args.l0, args.seed)
        print(f"selected={len(items)}", file=sys.stderr)
    rows = [(k, ds.aggregated[k]) for k in sorted(items)]
    write_csv(args.out, "selection", ["item", "weight"], rows)


def cmd_compare_curves(args):
    target = _dp_target(args)
    if not (0 <= args.w_min <= args.w_max and args.w_step > 0):
        raise UsageError("need 0 <= w_min <= w_max and w_step > 0")
    n = int(np.floor((args.w_max - args.w_min) / args.w_step + 1e-9)) + 1
    grid = args.w_min + args.w_step * np.arange(n)
    rows = compare_curves(target, args.l0, grid, params=_target_params(target, args))
    write_csv(args.out, "compare_curves", ["w", "p_gauss", "p_snaps"], rows)


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def build_parser():
    p = argparse.ArgumentParser(prog="partsel", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, func, help):
        sp = sub.add_parser(name, help=help)
        sp.add_argument("--config", help="flat key=value file supplying defaults")
        sp.add_argument("--out", default="-", help="output CSV path ('-' for stdout)")
        sp.set_defaults(func=func)
        return sp

    sp = add("pi-star", cmd_pi_star, "optimal unweighted selection probabilities")
    sp.add_argument("--eps", type=float, default=1.0)
    sp.add_argument("--delta", type=float, default=1e-5)
    sp.add_argument("--alpha", type=float, default=18.5)
    sp.add_argument("--n-max", type=int, default=1000)

    sp = add("snaps-table", cmd_snaps_table, "weighted selection table psi")
    for k in ("eps0", "delta0", "eps1", "delta1"):
        sp.add_argument(f"--{k}", type=float)
    sp.add_argument("--target-eps", type=float, help="derive rates from a DP target instead")
    sp.add_argument("--target-delta", type=float, default=1e-5)
    sp.add_argument("--l0", type=int, default=100)
    sp.add_argument("--r", type=float, default=2.0)
    sp.add_argument("--delta-disc", type=float, default=5e-4)
    sp.add_argument("--delta-cap", type=float, default=1.0)
    sp.add_argument("--alpha", type=float, default=18.5)
    sp.add_argument("--n-max", type=int, default=2000)

    sp = add("optimal-additive", cmd_optimal_additive, "optimal bounded additive noise")
    sp.add_argument("--n-d", type=int, default=61)
    sp.add_argument("--delta", type=float, default=1e-5)
    sp.add_argument("--alphas", type=_float_list, default=[2.0, 8.0, 18.5, 64.0, 1000.0])

    sp = add("fig3", cmd_fig3, "epsilon of each mechanism forced to release at n_d")
    sp.add_argument("--n-d", type=int, default=61)
    sp.add_argument("--delta", type=float, default=1e-5)
    sp.add_argument("--alphas", type=_float_list, default=[2.0, 4.0, 8.0, 18.5, 64.0])

    def add_target(sp):
        sp.add_argument("--eps-hat", type=float, default=1.0)
        sp.add_argument("--delta-hat", type=float, default=1e-5)
        sp.add_argument("--l0", type=int, default=100)
        sp.add_argument("--delta-disc", type=float, default=5e-4, help="SNAPS weight grid width")

    sp = add("select", cmd_select, "select items from a corpus")
    sp.add_argument("--corpus", required=True)
    sp.add_argument("--mode", choices=("snaps", "gaussian"), default="snaps")
    add_target(sp)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--user-column", action="store_true")
    sp.add_argument("--bounding", choices=("sample", "first"), default="sample")

    sp = add("compare-curves", cmd_compare_curves, "release probability curves")
    add_target(sp)
    sp.add_argument("--w-min", type=float, default=0.0)
    sp.add_argument("--w-max", type=float, default=40.0)
    sp.add_argument("--w-step", type=float, default=0.25)
    return p


def _apply_config(parser, args, argv):
    """Fill defaults from a key=value file; explicit flags win."""
    if not getattr(args, "config", None):
        return args
    sub = parser._subparsers._group_actions[0].choices[args.command]
    known = {a.dest: a for a in sub._actions if a.dest not in ("help", "config", "func")}
    given = {a.dest for a in sub._actions for s in a.option_strings
             if any(x == s or x.startswith(s + "=") for x in argv)}
    try:
        text = Path(args.config).read_text(encoding="utf-8")
    except OSError as e:
        raise UsageError(f"cannot read config: {e}")
    for ln, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"config line {ln}: expected key=value")
        key, val = (s.strip() for s in line.split("=", 1))
        dest = key.replace("-", "_")
        if dest not in known:
            raise UsageError(f"config line {ln}: unknown key {key!r}")
        if dest in given:
            continue
        act = known[dest]
        try:
            if isinstance(act, argparse._StoreTrueAction):
                v = val.lower() in ("1", "true", "yes", "on")
            elif act.type is not None:
                v = act.type(val)
            else:
                v = val
        except (ValueError, argparse.ArgumentTypeError) as e:
            raise UsageError(f"config line {ln}: {e}")
        if act.choices is not None and v not in act.choices:
            raise UsageError(f"config line {ln}: {key} must be one of {sorted(act.choices)}")
        setattr(args, dest, v)
    return args


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code) if e.code is not None else 0
    try:
        args = _apply_config(parser, args, argv)
        args.func(args)
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except (ArithmeticError, ValueError, IndexError) as e:
        print(f"computation failed: {e}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
