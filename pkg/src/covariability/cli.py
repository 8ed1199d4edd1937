"""
Command-line entry point.

Exit codes: 0 success (or a true boolean query), 1 false boolean query,
2 usage or input error, 3 numerical failure (including a non-converged fit).
All randomness flows from ``--seed``; ``--threads`` never changes results.
"""

from __future__ import annotations

import argparse
import hashlib
import logging
import sys
from dataclasses import replace
from fractions import Fraction

import numpy as np

from . import binary_example as bx
from .empirics import IngestError, ingest, moment_curve, overlay, write_panels
from .graph import CausalDag, GraphError, backdoor_blocked, backdoor_paths, d_separated, enumerate_paths, is_blocked
from .linear_model import WEIGHT_LEVELS, LinearModelParams, NotPositiveDefiniteError, simulate, uniform_levels
from .mle import FitConfig, FitError, bootstrap, fit, fit_pair, likelihood_ratio_test, lrt_from_loglik
from .scm import ScmError, ScmSpec, sample_population
from .streams import derive_seed

EXIT_OK, EXIT_FALSE, EXIT_USAGE, EXIT_NUMERIC = 0, 1, 2, 3

# sub-stream keys under --seed
_KEY_Z_LEVELS = 1
_KEY_BOOTSTRAP = 2


class _UsageError(Exception):
    pass


def _emit(text: str, out=None) -> None:
    (out or sys.stdout).write(text)


def _nodes(arg: str) -> list[str]:
    return [s for s in (t.strip() for t in arg.split(",")) if s]


def _filter(arg: str) -> tuple[str, float, float]:
    try:
        col, lo, hi = arg.rsplit(":", 2)
        return col, float(lo), float(hi)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected COLUMN:MIN:MAX, got {arg!r}") from None


def _levels(arg: str) -> list[float]:
    try:
        if ":" in arg:
            lo, hi = (int(v) for v in arg.split(":"))
            return [float(v) for v in range(lo, hi + 1)]
        return [float(v) for v in arg.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected LO:HI or a comma list, got {arg!r}") from None


def _positive_int(arg: str) -> int:
    v = int(arg)
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be a positive integer, got {arg}")
    return v


# demo-example


def _fmt(v: Fraction, mode: str) -> str:
    return f"{float(v):.5f}" if mode == "exact" else f"{float(v):.2f}"


def cmd_demo_example(args) -> int:
    spec = bx.MixtureExampleSpec()
    m = bx.summary_measures(spec, args.mode)
    units = [(a, z, bx.unit_table(spec, a, z)) for a in spec.alpha_values for z in (0, 1)]
    if args.format == "machine":
        lines = [f"mode={args.mode}"]
        for a, z, t in units:
            for name, c in zip(("p00", "p01", "p10", "p11"), t.cells()):
                lines.append(f"unit_alpha{float(a)!r}_z{z}_{name}={float(c)!r}")
        for z, t in m.tables.items():
            for name, c in zip(("p00", "p01", "p10", "p11"), t.cells()):
                lines.append(f"population_z{z}_{name}={float(c)!r}")
        for z, v in m.stratum_or.items():
            lines += [f"stratum_or_z{z}={float(v)!r}", f"stratum_or_z{z}_exact={v}"]
        lines += [
            f"average_or={float(m.average_or)!r}",
            f"average_or_exact={m.average_or}",
            f"marginal_or={float(m.marginal_or)!r}",
            f"marginal_or_exact={m.marginal_or}",
            f"causal_rr={float(m.causal_rr)!r}",
            f"causal_rr_exact={m.causal_rr}",
        ]
        _emit("\n".join(lines) + "\n")
    elif args.format == "csv":
        lines = ["table,alpha,z,x,y,p"]
        for a, z, t in units:
            for x in (0, 1):
                for y in (0, 1):
                    lines.append(f"unit,{float(a)!r},{z},{x},{y},{float(t.p[x][y])!r}")
        for z, t in m.tables.items():
            for x in (0, 1):
                for y in (0, 1):
                    lines.append(f"population,,{z},{x},{y},{float(t.p[x][y])!r}")
        _emit("\n".join(lines) + "\n")
    else:
        out = ["P(X, Y | Z, alpha) per unit type", "  alpha  z   x=0,y=0  x=0,y=1  x=1,y=0  x=1,y=1"]
        for a, z, t in units:
            out.append(f"  {float(a):5.2f}  {z}  " + "  ".join(f"{float(c):7.4f}" for c in t.cells()))
        label = "exact" if args.mode == "exact" else "rounded to 2 decimals"
        out += ["", f"P(X, Y | Z), alpha averaged out ({label})", "  z   x=0,y=0  x=0,y=1  x=1,y=0  x=1,y=1"]
        for z, t in m.tables.items():
            out.append(f"  {z}  " + "  ".join(f"{float(c):7.4f}" for c in t.cells()))
        out += [
            "",
            f"odds ratio given Z=0   {_fmt(m.stratum_or[0], args.mode)}",
            f"odds ratio given Z=1   {_fmt(m.stratum_or[1], args.mode)}",
            f"average over Z         {_fmt(m.average_or, args.mode)}",
            f"marginal (Z ignored)   {_fmt(m.marginal_or, args.mode)}",
            f"causal relative risk   {m.causal_rr}",
        ]
        _emit("\n".join(out) + "\n")
    return EXIT_OK


# graph


def cmd_graph(args) -> int:
    g = CausalDag.read(args.file)
    given = _nodes(args.given) if args.given else []
    if args.query == "paths":
        paths = enumerate_paths(g, args.a, args.b)
        for p in paths:
            status = ""
            if args.given is not None:
                status = "  blocked" if is_blocked(g, p, given) else "  open"
            _emit(f"{p}{status}\n")
        _emit(f"{len(paths)} path(s)\n")
        return EXIT_OK
    if args.query == "dsep":
        result = d_separated(g, _nodes(args.a), _nodes(args.b), given)
        _emit(f"d_separated={str(result).lower()}\n")
        return EXIT_OK if result else EXIT_FALSE
    paths = backdoor_paths(g, args.a, args.b)
    for p in paths:
        _emit(f"{p}  {'blocked' if is_blocked(g, p, given) else 'open'}\n")
    result = backdoor_blocked(g, args.a, args.b, given)
    vacuous = " (no backdoor path)" if not paths and result else ""
    _emit(f"backdoor_blocked={str(result).lower()}{vacuous}\n")
    return EXIT_OK if result else EXIT_FALSE


# simulate


def cmd_simulate(args) -> int:
    if args.n < 1:
        raise _UsageError("--n must be at least 1")
    if (args.params is None) == (args.scm is None):
        raise _UsageError("give exactly one of --params and --scm")
    if args.params is not None:
        p = LinearModelParams.read(args.params)
        z = uniform_levels(args.z_levels, args.n, derive_seed(args.seed, _KEY_Z_LEVELS))
        d = simulate(p, z, args.seed, threads=args.threads)
        d.to_csv(args.out)
        digest = hashlib.sha256(p.to_yaml().encode()).hexdigest()
        _emit(f"spec_hash={digest} seed={args.seed} rows={len(d)}\n")
    else:
        spec = ScmSpec.read(args.scm)
        pop = sample_population(spec, args.n, args.obs_per_unit, args.seed, threads=args.threads)
        pop.to_csv(args.out, include_unit_params=args.unit_params)
        _emit(f"{pop.provenance()} rows={len(pop)}\n")
    return EXIT_OK


# fit / lrt


def _schema(args) -> dict:
    s = {"z": args.z_col, "x": args.x_col, "y": args.y_col}
    if args.swap:
        s["x"], s["y"] = s["y"], s["x"]
    return s


def cmd_fit(args) -> int:
    if args.out_reduced and not args.compare:
        raise _UsageError("--out-reduced needs --compare")
    data = ingest(args.data, _schema(args), args.filter or ())
    cfg = FitConfig(
        n_starts=args.n_starts,
        tol=args.tol,
        max_iter=args.max_iter,
        dispersion=args.dispersion,
        reduced=args.reduced,
        seed=args.seed,
        threads=args.threads,
    )
    machine = args.format == "machine"
    if args.compare:
        full, red = fit_pair(data, cfg)
        results = [full, red]
        lrt = likelihood_ratio_test(full, red)
    else:
        results = [fit(data, cfg)]
        lrt = None
    text = ""
    for r in results:
        text += r.to_keyvalue(prefix=("reduced_" if r.reduced else "full_") if args.compare else "") if machine else r.report() + "\n"
    if lrt is not None:
        text += lrt.to_keyvalue() if machine else lrt.report()
    if args.bootstrap:
        point = results[0]
        boot = bootstrap(
            data,
            replace(cfg, reduced=point.reduced),
            n_resamples=args.bootstrap,
            seed=derive_seed(args.seed, _KEY_BOOTSTRAP),
            point=point,
            threads=args.threads,
        )
        if machine:
            text += boot.to_keyvalue()
        else:
            text += f"\npercentile bootstrap, {boot.n_resamples} resamples ({boot.n_failed} failed)\n"
            for k, (lo, hi) in boot.intervals.items():
                if point.reduced and k == "cov_bxby":
                    continue
                text += f"  {k:<9s} ({lo:.4g}, {hi:.4g})\n"
    _emit(text)
    if args.out:
        results[0].params.write(args.out)
    if args.out_reduced:
        results[1].params.write(args.out_reduced)
    if not all(r.converged for r in results):
        print("error: optimizer did not converge; raise --max-iter or loosen --tol", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


def cmd_lrt(args) -> int:
    r = lrt_from_loglik(args.ll_full, args.ll_reduced, args.df)
    _emit(r.to_keyvalue() if args.format == "machine" else r.report())
    return EXIT_OK


# moments


def cmd_moments(args) -> int:
    data = ingest(args.data, _schema(args), args.filter or ())
    binning = "exact" if args.bin_width is None else args.bin_width
    curve = moment_curve(data, binning, args.n_boot, args.seed, threads=args.threads)
    full = LinearModelParams.read(args.full) if args.full else None
    red = LinearModelParams.read(args.reduced) if args.reduced else None
    paths = write_panels(overlay(full, red, curve), args.out_dir)
    for p in paths:
        _emit(f"wrote {p}\n")
    return EXIT_OK


# parser


def _add_data_opts(p: argparse.ArgumentParser) -> None:
    p.add_argument("data", help="CSV file with a header row")
    p.add_argument("--z-col", default="z", help="confounder column (default: z)")
    p.add_argument("--x-col", default="x", help="exposure column (default: x)")
    p.add_argument("--y-col", default="y", help="outcome column (default: y)")
    p.add_argument("--swap", action="store_true", help="exchange the roles of the x and y columns")
    p.add_argument(
        "--filter",
        action="append",
        type=_filter,
        metavar="COL:MIN:MAX",
        help="keep rows with MIN <= COL <= MAX; may be repeated",
    )


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="covariability", description=__doc__.strip().splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = ap.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = sub.add_parser("demo-example", help="tables and odds ratios of the binary example")
    p.add_argument("--mode", choices=("exact", "rounded"), default="exact", help="exact rationals or 2-decimal tables")
    p.add_argument("--format", choices=("text", "machine", "csv"), default="text", help="output format")
    p.set_defaults(func=cmd_demo_example)

    p = sub.add_parser("graph", help="path, d-separation and backdoor queries on a DAG file")
    p.add_argument("file", help="graph file: one 'A -> B' edge or 'node A' per line, '#' comments")
    p.add_argument("query", choices=("paths", "dsep", "backdoor"), help="list paths, test d-separation, or test backdoor blocking")
    p.add_argument("a", help="exposure (or comma-separated node set for dsep)")
    p.add_argument("b", help="outcome (or comma-separated node set for dsep)")
    p.add_argument("--given", metavar="NODES", help="comma-separated conditioning set")
    p.set_defaults(func=cmd_graph)

    p = sub.add_parser("simulate", help="write a simulated dataset")
    p.add_argument("--params", help="linear-model parameter file (YAML)")
    p.add_argument("--scm", help="structural causal model file (YAML)")
    p.add_argument("--n", type=int, required=True, help="number of units")
    p.add_argument("--seed", type=int, default=0, help="random seed (default: 0)")
    p.add_argument("--out", required=True, help="output CSV path")
    p.add_argument("--threads", type=_positive_int, default=1, help="worker threads; results do not depend on it")
    p.add_argument(
        "--z-levels",
        type=_levels,
        default=[float(v) for v in WEIGHT_LEVELS],
        help="with --params: z levels drawn uniformly, as LO:HI or a comma list (default: 64:75)",
    )
    p.add_argument("--obs-per-unit", type=_positive_int, default=1, help="with --scm: observations per unit")
    p.add_argument("--unit-params", action="store_true", help="with --scm: also write unit parameter columns")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("fit", help="maximum-likelihood fit of the random-coefficient model")
    _add_data_opts(p)
    p.add_argument("--reduced", action="store_true", help="fit the reduced model (no slope covariance)")
    p.add_argument("--compare", action="store_true", help="fit both models and add the likelihood-ratio test")
    p.add_argument("--n-starts", type=_positive_int, default=32, help="optimizer starts (default: 32)")
    p.add_argument("--tol", type=float, default=1e-9, help="simplex convergence tolerance (default: 1e-9)")
    p.add_argument("--max-iter", type=_positive_int, default=20000, help="iterations per start (default: 20000)")
    p.add_argument("--dispersion", type=float, default=0.05, help="relative spread of random starts (default: 0.05)")
    p.add_argument("--seed", type=int, default=0, help="random seed (default: 0)")
    p.add_argument("--bootstrap", type=int, default=0, metavar="B", help="percentile bootstrap with B resamples")
    p.add_argument("--threads", type=_positive_int, default=1, help="worker threads; results do not depend on it")
    p.add_argument("--format", choices=("text", "machine"), default="text", help="report format")
    p.add_argument("--out", help="write fitted parameters (YAML); with --compare, the full model")
    p.add_argument("--out-reduced", help="with --compare: write reduced-model parameters (YAML)")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("lrt", help="likelihood-ratio test from two log-likelihoods")
    p.add_argument("--ll-full", type=float, required=True, help="maximized log-likelihood of the full model")
    p.add_argument("--ll-reduced", type=float, required=True, help="maximized log-likelihood of the reduced model")
    p.add_argument("--df", type=_positive_int, default=1, help="degrees of freedom (default: 1)")
    p.add_argument("--format", choices=("text", "machine"), default="text", help="report format")
    p.set_defaults(func=cmd_lrt)

    p = sub.add_parser("moments", help="per-z moment curves with bootstrap bands, one CSV per panel")
    _add_data_opts(p)
    p.add_argument("--n-boot", type=_positive_int, default=200, help="bootstrap resamples per bin (default: 200)")
    p.add_argument("--bin-width", type=float, help="bin z by this width instead of exact levels")
    p.add_argument("--full", help="full-model parameter file to overlay")
    p.add_argument("--reduced", help="reduced-model parameter file to overlay")
    p.add_argument("--seed", type=int, default=0, help="random seed (default: 0)")
    p.add_argument("--threads", type=_positive_int, default=1, help="worker threads; results do not depend on it")
    p.add_argument("--out-dir", required=True, help="directory for the panel CSVs")
    p.set_defaults(func=cmd_moments)
    return ap


def main(argv: list[str] | None = None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except _UsageError as exc:
        ap.error(str(exc))
    except (FitError, NotPositiveDefiniteError, np.linalg.LinAlgError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (GraphError, ScmError, IngestError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    return EXIT_OK  # pragma: no cover


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
