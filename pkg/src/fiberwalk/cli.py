"""Command-line front end.

Subcommands cover the pipeline end to end: ``encode`` writes the CNF
and layout files for a fiber, ``enumerate`` lists/counts fiber
elements (directly or by CNF model enumeration), ``test`` runs the
conditional goodness-of-fit test on an observed table, ``bench`` runs
a config-driven evaluation, and ``diagnose`` measures how uniform a
sampler actually is.

Exit codes: 0 success, 1 usage error, 2 runtime failure.  All
randomness flows from --seed.
"""

from __future__ import annotations

import argparse
import dataclasses
import sys
from pathlib import Path

from .bench import export_results, parse_config, run_evaluation
from .dpll import Solver
from .encode import encode_fiber, parse_dimacs, write_layout
from .enumeration import enumerate_fiber, exact_p_from_enumeration
from .mle import ChiSquare, fit_loglinear
from .models import (
    FiberSpec,
    Independence,
    NoThreeWay,
    QuasiIndependence,
    Table,
    fiber_spec_from_observation,
    model_matrix,
    model_structural_zeros,
    read_table,
    unflatten_index,
    write_table,
)
from .moves import basic_moves_n3f, basic_moves_two_way, cycle_moves, load_basis
from .sampling import (
    SamplerConfig,
    build_sampler,
    sample_external,
    sample_internal_biased,
    sample_internal_uniform,
    tv_distance_to_uniform,
)
from .walk import Alternating, MovesOnly, ParallelStarts, SatOnly, run_walk

__all__ = ["main", "build_parser"]


class _Parser(argparse.ArgumentParser):
    # usage problems exit 1; runtime failures exit 2 (see main)
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _add_spec_args(p: argparse.ArgumentParser, with_table: bool = True) -> None:
    g = p.add_argument_group("fiber specification")
    g.add_argument(
        "--model",
        choices=["independence", "n3f"],
        default="independence",
        help="log-linear model (zeros turn independence into quasi-independence)",
    )
    g.add_argument(
        "--shape", type=int, nargs="+", help="table dimensions, e.g. --shape 3 3"
    )
    g.add_argument(
        "--margins",
        type=int,
        nargs="+",
        help="margin vector in constraint-row order (axis by axis for "
        "independence; (i,j),(i,k),(j,k) blocks for n3f)",
    )
    g.add_argument(
        "--zeros",
        nargs="*",
        default=[],
        help="structural-zero cells, as comma-separated multi-indices "
        "(e.g. 0,1) or flat indices",
    )
    if with_table:
        g.add_argument(
            "--table", help="observation file; its margins define the fiber"
        )


def _add_walk_args(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("walk")
    g.add_argument(
        "--schedule",
        choices=["moves-only", "sat-only", "alternating", "parallel-starts"],
        default="moves-only",
    )
    g.add_argument(
        "--period", type=int, default=10, help="n for alternating/parallel-starts"
    )
    g.add_argument("--walks", type=int, default=1, help="k for parallel-starts")
    g.add_argument("--moves", choices=["basic", "cycle", "file"], default="basic")
    g.add_argument("--moves-file", help="move basis file (with --moves file)")


def _add_sampler_args(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("sampler")
    g.add_argument(
        "--sampler",
        choices=["internal-uniform", "internal-biased", "external"],
        default="internal-uniform",
    )
    g.add_argument(
        "--sampler-command",
        help="external command template with {cnf} {count} {seed} placeholders",
    )
    g.add_argument("--bias-strength", type=float, default=1.0)
    g.add_argument("--timeout", type=float, default=None)


def _parse_zeros(tokens, shape) -> tuple[tuple[int, ...], ...]:
    out = []
    for tok in tokens:
        if "," in tok:
            out.append(tuple(int(t) for t in tok.split(",")))
        else:
            out.append(unflatten_index(int(tok), shape))
    return tuple(out)


def _make_model(name: str, shape, zeros_multi):
    if name == "n3f":
        if zeros_multi:
            raise ValueError("structural zeros are not supported for the n3f model")
        if len(shape) != 3 or len(set(shape)) != 1:
            raise ValueError("the n3f model needs a cubic shape (d, d, d)")
        return NoThreeWay(shape[0])
    if len(shape) != 2:
        raise ValueError("the independence model on the CLI is two-way")
    if zeros_multi:
        return QuasiIndependence(tuple(shape), tuple(zeros_multi))
    return Independence(tuple(shape))


def _build_spec(args) -> tuple[FiberSpec, Table | None]:
    """Fiber from either an observation file or explicit margins."""
    table_path = getattr(args, "table", None)
    if table_path:
        with open(table_path) as f:
            u, file_zeros = read_table(f)
        if args.shape and tuple(args.shape) != u.shape:
            raise ValueError(
                f"--shape {tuple(args.shape)} contradicts table shape {u.shape}"
            )
        zeros_multi = file_zeros + _parse_zeros(args.zeros, u.shape)
        model = _make_model(args.model, u.shape, zeros_multi)
        return fiber_spec_from_observation(model, u), u
    if not args.shape or args.margins is None:
        raise ValueError("need either --table or both --shape and --margins")
    shape = tuple(args.shape)
    zeros_multi = _parse_zeros(args.zeros, shape)
    model = _make_model(args.model, shape, zeros_multi)
    A = model_matrix(model)
    if len(args.margins) != A.rows:
        raise ValueError(
            f"model has {A.rows} constraint rows, got {len(args.margins)} margins"
        )
    if any(b < 0 for b in args.margins):
        raise ValueError("margins must be nonnegative")
    return (
        FiberSpec(
            matrix=A,
            margins=tuple(args.margins),
            structural_zeros=model_structural_zeros(model),
            shape=shape,
        ),
        None,
    )


def _build_moves(args, spec: FiberSpec):
    if args.moves == "file":
        if not args.moves_file:
            raise ValueError("--moves file needs --moves-file PATH")
        return load_basis(args.moves_file, spec.matrix)
    if len(spec.shape) == 3:
        return basic_moves_n3f(spec.shape[0])
    if args.moves == "cycle":
        return cycle_moves(spec.shape, spec.zero_set())
    return basic_moves_two_way(spec.shape, spec.zero_set())


def _build_sampler_config(args) -> SamplerConfig:
    if args.sampler == "external":
        if not args.sampler_command:
            raise ValueError("--sampler external needs --sampler-command")
        return SamplerConfig(
            kind="external",
            command_template=args.sampler_command,
            timeout=args.timeout,
        )
    if args.sampler == "internal-biased":
        return SamplerConfig(kind="internal-biased", bias_strength=args.bias_strength)
    return SamplerConfig()


def _build_schedule(args):
    if args.schedule == "moves-only":
        return MovesOnly()
    if args.schedule == "sat-only":
        return SatOnly()
    if args.schedule == "alternating":
        return Alternating(args.period)
    return ParallelStarts(args.period, args.walks)


def cmd_encode(args) -> int:
    spec, _ = _build_spec(args)
    enc = encode_fiber(spec)
    cnf_path = Path(str(args.out) + ".cnf")
    layout_path = Path(str(args.out) + ".layout")
    with open(cnf_path, "w") as f:
        enc.to_dimacs(f)
    with open(layout_path, "w") as f:
        write_layout(enc, f)
    print(f"cnf: {cnf_path}")
    print(f"layout: {layout_path}")
    print(f"variables: {enc.num_vars}")
    print(f"clauses: {len(enc.clauses)}")
    print(f"bits per cell: {enc.bits_per_cell}")
    if enc.trivially_unsat:
        print("note: trivially unsatisfiable (a margin exceeds its row capacity)")
    return 0


def _count_cnf_models(path: str, cap: int) -> tuple[int, bool]:
    with open(path) as f:
        num_vars, clauses, sampling = parse_dimacs(f)
    if not sampling:
        sampling = tuple(range(1, num_vars + 1))
    sampling_set = set(sampling)
    solver = Solver(num_vars, [list(c) for c in clauses], decision_vars=sampling)
    count = 0
    while True:
        model = solver.next_model()
        if model is None:
            return count, False
        count += 1
        if count > cap:
            return cap, True
        solver.add_clause([-lit for lit in model if abs(lit) in sampling_set])


def cmd_enumerate(args) -> int:
    if args.cnf:
        count, incomplete = _count_cnf_models(args.cnf, args.cap)
        marker = " (incomplete: cap reached)" if incomplete else ""
        print(f"count: {count}{marker}")
        return 0
    spec, _ = _build_spec(args)
    enum = enumerate_fiber(spec, cap=args.cap)
    if not args.count_only:
        for u in enum:
            write_table(u, sys.stdout)
            print()
    marker = "" if enum.complete else " (incomplete: cap reached)"
    print(f"count: {len(enum)}{marker}")
    return 0


def cmd_test(args) -> int:
    with open(args.table) as f:
        u, file_zeros = read_table(f)
    zeros_multi = file_zeros + _parse_zeros(args.zeros, u.shape)
    model = _make_model(args.model, u.shape, zeros_multi)
    spec = fiber_spec_from_observation(model, u)
    fit = fit_loglinear(spec.matrix, u, zeros=spec.structural_zeros)
    if not fit.converged:
        print(
            f"warning: MLE stopped at discrepancy {fit.discrepancy:.3g} "
            f"after {fit.iterations} iterations",
            file=sys.stderr,
        )
    stat = ChiSquare(fit.pi, u.n, spec.structural_zeros)
    threshold = stat(u.cells)

    enum = enumerate_fiber(spec, cap=args.exact_cap)
    exact = exact_p_from_enumeration(enum, threshold, stat) if enum.complete else None

    moves = _build_moves(args, spec)
    sampler = build_sampler(_build_sampler_config(args))
    rec = run_walk(
        spec, u, _build_schedule(args), moves, sampler, args.steps, stat, args.seed
    )
    print(f"statistic: {threshold!r}")
    print(f"steps: {rec.steps} (sat {rec.sat_steps}, move {rec.move_steps})")
    if rec.aborted:
        print(f"error: walk aborted: {rec.abort_reason}", file=sys.stderr)
        return 2
    print(f"mcmc p: {rec.p_final!r}")
    if exact is not None:
        print(f"exact p: {exact!r}")
        print(f"difference: {abs(rec.p_final - exact)!r}")
    else:
        print(f"exact p: unavailable (fiber exceeds {args.exact_cap} elements)")
    return 0


def cmd_bench(args) -> int:
    config = parse_config(args.config)
    if args.seed is not None:
        config = dataclasses.replace(config, seed=args.seed)
    records = run_evaluation(config)
    paths = export_results(records, args.out)
    ok = sum(1 for r in records if r.ok)
    print(f"runs: {len(records)} ({ok} ok, {len(records) - ok} failed)")
    for rec in records:
        if not rec.ok:
            print(f"run {rec.run_id} failed: {rec.error}", file=sys.stderr)
    print(f"wrote {len(paths)} files to {args.out}")
    return 0


def cmd_diagnose(args) -> int:
    spec, _ = _build_spec(args)
    config = _build_sampler_config(args)
    if config.kind == "external":
        batch = sample_external(encode_fiber(spec), config, args.draws, args.seed)
    elif config.kind == "internal-biased":
        batch = sample_internal_biased(
            spec, args.draws, args.seed, bias_strength=config.bias_strength
        )
    else:
        batch = sample_internal_uniform(spec, args.draws, args.seed)
    tv = tv_distance_to_uniform(batch, spec)
    size = len(enumerate_fiber(spec).elements)
    print(f"source: {batch.source}")
    print(f"fiber size: {size}")
    print(f"draws: {len(batch)}")
    print(f"tv distance to uniform: {tv!r}")
    print(f"l1 deviation (2*tv): {2 * tv!r}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="fiberwalk", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("encode", help="write DIMACS CNF + layout for a fiber")
    _add_spec_args(p)
    p.add_argument("--out", required=True, help="output path prefix")
    p.set_defaults(func=cmd_encode)

    p = sub.add_parser("enumerate", help="list/count fiber elements")
    _add_spec_args(p)
    p.add_argument("--cnf", help="count projected models of a DIMACS file instead")
    p.add_argument("--cap", type=int, default=10_000_000)
    p.add_argument("--count-only", action="store_true", help="suppress the listing")
    p.set_defaults(func=cmd_enumerate)

    p = sub.add_parser("test", help="conditional goodness-of-fit test")
    p.add_argument("--table", required=True, help="observation file")
    _add_spec_args(p, with_table=False)
    p.add_argument("--steps", type=int, default=10_000)
    p.add_argument("--exact-cap", type=int, default=100_000)
    p.add_argument("--seed", type=int, default=0)
    _add_walk_args(p)
    _add_sampler_args(p)
    p.set_defaults(func=cmd_test)

    p = sub.add_parser("bench", help="run a config-driven evaluation")
    p.add_argument("--config", required=True, help="INI experiment config")
    p.add_argument("--out", required=True, help="results directory")
    p.add_argument("--seed", type=int, default=None, help="override the config seed")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("diagnose", help="sampler uniformity report")
    _add_spec_args(p)
    p.add_argument("--draws", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    _add_sampler_args(p)
    p.set_defaults(func=cmd_diagnose)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except Exception as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
