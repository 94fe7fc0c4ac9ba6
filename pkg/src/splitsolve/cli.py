"""``splitsolve`` command-line entry point.

Subcommands::

    sample     sweep schemes x steps x seeds on a mixture problem -> CSV
    stability  minimal stable step counts on the test equation -> CSV
    toy        endpoint errors on the stiff toy ODE -> CSV (+ JSON trajectories)
    order      empirical convergence order -> CSV
    coeffs     PLMS / GLMS coefficient tables
    bench      per-step wall time per scheme, and numba vs numpy kernels

Results are computed in full before anything is written, so a failing run
leaves no partial output. Exit status is 0 unless a cell errored; diverged
solves are ordinary data.
"""

from __future__ import annotations

import argparse
import csv
import io
import math
import os
import sys
from pathlib import Path
from typing import Sequence

__all__ = ["main", "build_parser", "parse_seeds", "parse_int_list", "parse_float_list"]


class CliError(Exception):
    """A user-facing error tied to one command-line field."""

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


def parse_seeds(text: str) -> list[int]:
    """``"0..31"`` (inclusive), ``"1,5,9"`` or a mix such as ``"0..3,10"``."""
    out: list[int] = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            raise ValueError(f"empty item in {text!r}")
        if ".." in part:
            lo, hi = part.split("..", 1)
            a, b = int(lo), int(hi)
            if b < a:
                raise ValueError(f"range {part!r} runs backwards")
            out.extend(range(a, b + 1))
        else:
            out.append(int(part))
    if any(s < 0 for s in out):
        raise ValueError("seeds must be non-negative")
    if len(set(out)) != len(out):
        raise ValueError("seeds repeat")
    return out


def parse_int_list(text: str) -> list[int]:
    vals = [int(t) for t in text.replace(" ", ",").split(",") if t]
    if not vals:
        raise ValueError("empty list")
    if any(v < 1 for v in vals):
        raise ValueError("values must be positive")
    return vals


def parse_float_list(text: str) -> list[float]:
    vals = [float(t) for t in text.replace(" ", ",").split(",") if t]
    if not vals:
        raise ValueError("empty list")
    if not all(math.isfinite(v) and v > 0 for v in vals):
        raise ValueError("values must be finite and positive")
    return vals


def parse_log_ratios(text: str) -> list[float]:
    vals = [float(t) for t in text.replace(" ", ",").split(",") if t]
    if not vals:
        raise ValueError("empty list")
    if not all(math.isfinite(v) and v < 0 for v in vals):
        raise ValueError("log step ratios must be finite and negative")
    return vals


def _field(name: str, parser, raw):
    try:
        return parser(raw)
    except (ValueError, TypeError) as exc:
        raise CliError(name, str(exc)) from None


def _schemes(raw: Sequence[str]):
    from .splitting import parse_scheme

    return [_field("--scheme", parse_scheme, s) for s in raw]


def _problem(args):
    from .sampler import load_problem, standard_problem

    if args.problem is None:
        prob = standard_problem()
    else:
        try:
            prob = load_problem(args.problem)
        except FileNotFoundError:
            raise CliError("--problem", f"no such file {args.problem!r}") from None
        except ValueError as exc:
            raise CliError("--problem", str(exc)) from None
    overrides = {}
    if getattr(args, "field_cost", None):
        overrides["field_cost"] = args.field_cost
    if getattr(args, "guidance_scale", None) is not None:
        overrides["guidance_scale"] = args.guidance_scale
    if overrides:
        from dataclasses import replace

        prob = replace(prob, **overrides)
    return prob


def _emit(path, header: Sequence[str], rows: Sequence[Sequence]) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    text = buf.getvalue()
    if path is None or str(path) == "-":
        sys.stdout.write(text)
        return
    p = Path(path)
    try:
        p.parent.mkdir(parents=True, exist_ok=True)
        tmp = p.with_name(p.name + ".tmp")
        tmp.write_text(text)
        os.replace(tmp, p)
    except OSError as exc:
        raise CliError("--out", str(exc)) from None


# ----------------------------------------------------------------------------
# subcommands


def cmd_sample(args) -> int:
    from .sampler import CSV_COLUMNS, aggregate, sweep

    schemes = _schemes(args.scheme)
    steps = _field("--steps", parse_int_list, args.steps)
    seeds = _field("--seeds", parse_seeds, args.seeds)
    if args.reference_steps < 1:
        raise CliError("--reference-steps", "must be positive")
    if args.jobs is not None and args.jobs < 1:
        raise CliError("--jobs", "must be positive")
    prob = _problem(args)
    reports = sweep(prob, schemes, steps, seeds, reference_steps=args.reference_steps, jobs=args.jobs)
    rows = [[r.as_row()[c] for c in CSV_COLUMNS] for r in reports]
    _emit(args.out, CSV_COLUMNS, rows)
    if args.summary:
        for cell in aggregate(reports):
            print(
                f"{cell.scheme:>24s} N={cell.steps:<5d} mean_err={cell.mean_error:.6g} "
                f"std={cell.std_error:.3g} diverged={cell.diverged}/{cell.n}",
                file=sys.stderr,
            )
    return 0


def cmd_stability(args) -> int:
    from .stability import empirical_divergence_scan, stability_table

    s_values = _field("--s-values", parse_float_list, args.s_values)
    table = stability_table(s_values)
    fmt = lambda s: f"{s:g}"  # noqa: E731
    rows = [[r.method, fmt(r.s), r.min_stable_N, repr(r.root1_mod), repr(r.root2_mod)] for r in table]
    scan_rows = None
    if args.scan:
        scan_rows = []
        for r in table:
            emp = empirical_divergence_scan(r.method, r.s, args.n_max)
            scan_rows.append([r.method, fmt(r.s), r.min_stable_N, "" if emp is None else emp])
    _emit(args.out, ("method", "s", "min_stable_N", "root1_mod", "root2_mod"), rows)
    if scan_rows is not None:
        if args.scan_out:
            _emit(args.scan_out, ("method", "s", "min_stable_N", "empirical_N"), scan_rows)
        agree = sum(1 for m, s, a, e in scan_rows if e != "" and abs(a - e) <= 1)
        print(f"empirical scan within +-1 of analytic: {agree}/{len(scan_rows)}", file=sys.stderr)
    return 0


def cmd_toy(args) -> int:
    from .analysis import TOY_CSV_COLUMNS, toy_error_study

    schemes = _schemes(args.scheme)
    s_values = _field("--s-values", parse_float_list, args.s_values)
    steps = _field("--steps", parse_int_list, args.steps)
    cells = toy_error_study(schemes, s_values, steps, dump_dir=args.dump_dir)
    rows = [
        [c.scheme, f"{c.s:g}", c.steps, repr(c.endpoint_error), "" if c.diverged_at is None else c.diverged_at]
        for c in cells
    ]
    _emit(args.out, TOY_CSV_COLUMNS, rows)
    return 0


def cmd_order(args) -> int:
    import warnings

    from .analysis import ORDER_CSV_COLUMNS, GaussianFlowProblem, ToyProblem, estimate_order

    schemes = _schemes(args.scheme)
    steps = _field("--steps", parse_int_list, args.steps)
    if args.problem == "toy":
        if not args.s > 0:
            raise CliError("--s", "must be positive")
        prob = ToyProblem(args.s)
    else:
        prob = GaussianFlowProblem(guidance=args.guidance)
    rows = []
    status = 0
    for sch in schemes:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            try:
                est = estimate_order(sch, prob, steps)
            except ValueError as exc:
                raise CliError("--steps", str(exc)) from None
            except ArithmeticError as exc:
                print(f"error: {exc}", file=sys.stderr)
                status = 1
                continue
        print(f"{est.label:>24s} slope={est.slope:.4f} residual={est.residual:.2g}", file=sys.stderr)
        for n, e in zip(est.step_counts, est.errors):
            rows.append([est.label, n, repr(e), repr(est.slope), repr(est.residual)])
    _emit(args.out, ORDER_CSV_COLUMNS, rows)
    return status


def cmd_coeffs(args) -> int:
    from .solvers import glms_coefficients, plms_coefficients

    order = args.order
    if order not in (1, 2, 3, 4):
        raise CliError("--order", "must be 1..4")
    rows = []
    for avail in range(1, order + 1):
        w = plms_coefficients(order, avail)
        label = "steady" if avail == order else f"startup{avail}"
        rows.append(["plms", label, ""] + [f"{v:.{args.digits}f}" for v in w])
    if args.glms_b is not None:
        for b in _field("--glms-b", parse_log_ratios, args.glms_b):
            for mode in ("corrected", "verbatim"):
                w = glms_coefficients(b, order, mode) if order > 1 else []
                rows.append([f"glms:{mode}", "steady", f"{b:g}"] + [f"{v:.{args.digits}f}" for v in w])
    width = max(len(r) for r in rows) - 3
    header = ["family", "row", "b"] + [f"w{k}" for k in range(width)]
    _emit(args.out, header, [r + [""] * (width + 3 - len(r)) for r in rows])
    return 0


def cmd_bench(args) -> int:
    from .bench import BENCH_CSV_COLUMNS, KERNEL_CSV_COLUMNS, time_kernels, time_schemes
    from .kernels import BACKEND

    schemes = _schemes(args.scheme)
    if args.steps < 1:
        raise CliError("--steps", "must be positive")
    if args.repeats < 1:
        raise CliError("--repeats", "must be positive")
    prob = _problem(args)
    timings = time_schemes(prob, schemes, args.steps, args.repeats)
    rows = [
        [t.scheme, t.steps, t.repeats, repr(t.seconds_per_step), t.field_nfe, t.potential_nfe] for t in timings
    ]
    krows = None
    if not args.no_kernels:
        krows = [[k.kernel, k.backend, k.calls, repr(k.seconds_per_call)] for k in time_kernels()]
    _emit(args.out, BENCH_CSV_COLUMNS, rows)
    if krows is not None:
        _emit(args.kernel_out, KERNEL_CSV_COLUMNS, krows)
    print(f"active kernel backend: {BACKEND}", file=sys.stderr)
    return 0


# ----------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="splitsolve", description="Splitting and multistep solvers for guided ODEs.")
    sub = p.add_subparsers(dest="command", required=True)

    def add_problem(sp):
        sp.add_argument("--problem", help="problem JSON file (default: built-in 8-D four-component mixture)")
        sp.add_argument("--field-cost", type=float, default=0.0, help="seconds of busy-wait per field evaluation")
        sp.add_argument("--guidance-scale", type=float, default=None)

    sp = sub.add_parser("sample", help="endpoint-error sweep on a mixture problem")
    add_problem(sp)
    sp.add_argument("--scheme", action="append", required=True, help="repeatable, e.g. stsp4 or ltsp:plms4,plms1")
    sp.add_argument("--steps", required=True, help="comma-separated step counts")
    sp.add_argument("--seeds", default="0..31", help="e.g. 0..31 or 1,2,3")
    sp.add_argument("--reference-steps", type=int, default=1000)
    sp.add_argument("--jobs", type=int, default=None, help="worker processes (env SPLITSOLVE_JOBS)")
    sp.add_argument("--out", default=None, help="CSV path (default stdout)")
    sp.add_argument("--summary", action="store_true", help="print per-cell means to stderr")
    sp.set_defaults(func=cmd_sample)

    sp = sub.add_parser("stability", help="minimal stable N on the test equation")
    sp.add_argument("--s-values", default="5,10,15,20,30,40,60,80")
    sp.add_argument("--out", default=None)
    sp.add_argument("--scan", action=argparse.BooleanOptionalAction, default=True, help="also run the empirical scan")
    sp.add_argument("--n-max", type=int, default=200)
    sp.add_argument("--scan-out", default=None)
    sp.set_defaults(func=cmd_stability)

    sp = sub.add_parser("toy", help="endpoint errors on the stiff toy ODE")
    sp.add_argument("--scheme", action="append", required=True)
    sp.add_argument("--s-values", default="3,5,10")
    sp.add_argument("--steps", default="10,20,50,100,1000")
    sp.add_argument("--out", default=None)
    sp.add_argument("--dump-dir", default=None, help="write one JSON trajectory per cell here")
    sp.set_defaults(func=cmd_toy)

    sp = sub.add_parser("order", help="empirical convergence order")
    sp.add_argument("--scheme", action="append", required=True)
    sp.add_argument("--problem", choices=("toy", "gaussian"), default="toy")
    sp.add_argument("--s", type=float, default=1.0, help="toy stiffness")
    sp.add_argument("--guidance", type=float, default=0.0, help="gaussian problem guidance strength")
    sp.add_argument("--steps", default="40,80,160,320")
    sp.add_argument("--out", default=None)
    sp.set_defaults(func=cmd_order)

    sp = sub.add_parser("coeffs", help="PLMS / GLMS coefficient tables")
    sp.add_argument("--order", type=int, default=4)
    sp.add_argument("--glms-b", default=None, help="comma-separated log step ratios, e.g. --glms-b=-0.05,-0.33")
    sp.add_argument("--digits", type=int, default=4)
    sp.add_argument("--out", default=None)
    sp.set_defaults(func=cmd_coeffs)

    sp = sub.add_parser("bench", help="per-step wall time (always serial)")
    add_problem(sp)
    sp.add_argument("--scheme", action="append", required=True)
    sp.add_argument("--steps", type=int, default=50)
    sp.add_argument("--repeats", type=int, default=3)
    sp.add_argument("--no-kernels", action="store_true", help="skip the numba vs numpy kernel timing")
    sp.add_argument("--out", default=None)
    sp.add_argument("--kernel-out", default=None)
    sp.set_defaults(func=cmd_bench)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return int(args.func(args))
    except CliError as exc:
        print(f"splitsolve {args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
