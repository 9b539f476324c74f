"""Command-line interface: compile, check, bench, assemble, trends.

Exit codes: 0 on success, 2 when a form is rejected by the requested
representation, 3 when a cross-check exceeds its tolerance.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import dsl, harness, lowering, tensorrep
from .kernel import count_flops, emit_source, kernel_to_json

CHECK_TOLERANCE = 1e-10
CHECK_TOLERANCE_DIVISION = 1e-8

EXIT_OK = 0
EXIT_REJECTED = 2
EXIT_CHECK_FAILED = 3


def _load(path: str) -> harness.CompiledForm:
    text = Path(path).read_text()
    return harness.compile_source(text, name=Path(path).stem)


def _build(cf: harness.CompiledForm, args) -> object:
    if args.representation == "tensor":
        return harness.tensor_kernel(cf)
    return harness.quadrature_kernel(
        cf,
        points_override=args.points,
        zero_elimination=not args.no_tabulate_zeros,
        hoisting=not args.no_hoist,
    )


def cmd_compile(args) -> int:
    try:
        cf = _load(args.form)
    except dsl.FormError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_REJECTED
    if args.dump_monomials:
        sys.stdout.write(lowering.format_monomial_sum(cf.monomials))
    try:
        kernel = _build(cf, args)
    except (tensorrep.UnsupportedDivision, MemoryError) as exc:
        print(f"rejected ({args.representation}): {exc}", file=sys.stderr)
        return EXIT_REJECTED
    if args.dump_ir:
        print(kernel_to_json(kernel))
    if args.emit:
        out = Path(args.emit)
        out.mkdir(parents=True, exist_ok=True)
        path = out / f"{cf.name}_{args.representation}.kernel.c"
        path.write_text(emit_source(kernel))
        print(f"wrote {path}")
    print(
        f"{cf.name}: representation={args.representation}"
        f" degree={cf.degree} flops={count_flops(kernel)}"
    )
    return EXIT_OK


def cmd_check(args) -> int:
    try:
        cf = _load(args.form)
    except dsl.FormError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_REJECTED
    check = harness.cross_check(
        cf, n_cells=args.cells, seed=args.seed, points_override=args.points
    )
    tol = (
        CHECK_TOLERANCE_DIVISION
        if check.mode == "quadrature-two-degrees"
        else CHECK_TOLERANCE
    )
    status = "ok" if check.max_relative_difference <= tol else "FAILED"
    print(
        f"{cf.name}: {check.mode} max relative difference"
        f" {check.max_relative_difference:.3e} (tolerance {tol:g}) {status}"
    )
    return EXIT_OK if status == "ok" else EXIT_CHECK_FAILED


def cmd_bench(args) -> int:
    try:
        report = harness.compare(
            Path(args.form).read_text(),
            name=Path(args.form).stem,
            bench_n=args.count,
        )
    except dsl.FormError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_REJECTED
    print(harness.CSV_HEADER)
    print(report.csv_row())
    for note in report.notes:
        print(f"# {note}")
    if report.tensor_error:
        print(f"# tensor representation unavailable: {report.tensor_error}")
    return EXIT_OK


def cmd_assemble(args) -> int:
    try:
        cf = _load(args.form)
    except dsl.FormError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_REJECTED
    try:
        kernel = _build(cf, args)
    except (tensorrep.UnsupportedDivision, MemoryError) as exc:
        print(f"rejected ({args.representation}): {exc}", file=sys.stderr)
        return EXIT_REJECTED
    mesh = harness.unit_square_mesh(args.mesh_n)
    matrix, timings = harness.assemble(cf, kernel, mesh, seed=args.seed)
    nnz = len(matrix.indices)
    print(
        f"{cf.name}: {matrix.n_rows}x{matrix.n_cols} matrix, nnz={nnz},"
        f" sum={matrix.total():.12g}"
    )
    print(
        f"timings[s]: structure={timings['structure']:.4g}"
        f" compute={timings['compute']:.4g} insertion={timings['insertion']:.4g}"
        f" (insertion {timings['insertion_mode']})"
    )
    return EXIT_OK


def cmd_trends(args) -> int:
    rows = harness.trend_suite(
        quick=args.quick, include_3d=args.include_3d, bench_n=args.bench_n
    )
    print(harness.render_trend_table(rows))
    print(harness.CSV_HEADER)
    for cell, report, error in rows:
        if report is not None:
            print(report.csv_row())
        else:
            print(f"{cell.label()},{error}")
    return EXIT_OK


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="formc", description="miniature variational-form compiler"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_rep(p):
        p.add_argument(
            "-r",
            "--representation",
            choices=("quadrature", "tensor"),
            default="quadrature",
        )
        p.add_argument("--points", type=int, default=None, help="points per direction")
        p.add_argument("--no-tabulate-zeros", action="store_true")
        p.add_argument("--no-hoist", action="store_true")

    p = sub.add_parser("compile", help="compile a form to a kernel")
    p.add_argument("form")
    add_rep(p)
    p.add_argument("--dump-ir", action="store_true")
    p.add_argument("--dump-monomials", action="store_true")
    p.add_argument("--emit", metavar="DIR", default=None)
    p.set_defaults(func=cmd_compile)

    p = sub.add_parser("check", help="cross-check the two representations")
    p.add_argument("form")
    p.add_argument("--cells", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--points", type=int, default=None, help="points per direction")
    p.set_defaults(func=cmd_check)

    p = sub.add_parser("bench", help="benchmark N-fold element-tensor evaluation")
    p.add_argument("form")
    p.add_argument("-N", "--count", type=int, default=harness.DEFAULT_BENCH_N)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("assemble", help="assemble the global matrix on a unit square")
    p.add_argument("form")
    add_rep(p)
    p.add_argument("--mesh-n", type=int, default=8)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_assemble)

    p = sub.add_parser("trends", help="sweep the benchmark families")
    p.add_argument("--quick", action="store_true")
    p.add_argument("--include-3d", action="store_true")
    p.add_argument("--bench-n", type=int, default=0)
    p.set_defaults(func=cmd_trends)

    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
