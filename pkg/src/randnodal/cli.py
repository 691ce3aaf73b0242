"""Command-line entry point: ``randnodal <subcommand> ...``."""
from __future__ import annotations

import argparse
import csv
import json
import sys

from . import experiment as exp
from .gaussian_linalg import TraceCoupledGaussian, expected_det_index
from .model_ensembles import build_basis, verify_kernel_asymptotics
from .nodal_analysis import DegenerateFractionError, EnsembleConfig, run_trials
from .rice_density import DensityQuery, asymptotic_constant, finite_L_density
from .symbol_geometry import annulus_moments, ball_moments, euclidean_symbol, mc_moments


def _floats(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def _emit(obj) -> None:
    json.dump(obj, sys.stdout, indent=2, sort_keys=True)
    sys.stdout.write("\n")


def cmd_moments(a):
    if a.mc and a.gamma:
        raise ValueError("--gamma and --mc cannot be combined")
    if a.mc:
        m = mc_moments(euclidean_symbol(a.dim, a.order), a.mc, a.seed)
    elif a.gamma:
        m = annulus_moments(a.dim, a.gamma, a.order)
    else:
        m = ball_moments(a.dim)
    _emit(m.as_dict())


def cmd_randmat(a):
    spec = TraceCoupledGaussian(a.size, a.trace_coupling)
    est = expected_det_index(spec, a.index, a.samples, a.seed, workers=a.workers)
    _emit({"estimate": est.estimate, "stderr": est.stderr,
           "degenerate_fraction": est.degenerate_fraction, "samples": est.samples})


def cmd_kernel(a):
    q = [x.strip() for x in a.derivs.split(",")]
    if len(q) != 2:
        raise ValueError("--derivs needs two comma-separated derivative specs, e.g. t,t")
    Ls = a.sweep if a.sweep else [a.L]
    rows = verify_kernel_asymptotics(a.manifold, Ls, q[0], q[1], require_sweep=False)
    wr = csv.writer(sys.stdout, lineterminator="\n")
    wr.writerow(["L", "exact", "predicted", "rel_error"])
    for r in rows:
        wr.writerow([r["L"], repr(r["exact"]), repr(r["predicted"]), repr(r["rel_error"])])


def cmd_nodal(a):
    cfg = EnsembleConfig(a.manifold, a.L, window=a.window, pure=a.pure,
                         cells_per_wavelength=a.grid)
    res = run_trials(cfg, a.trials, a.seed, a.workers,
                     max_degenerate_fraction=a.max_degenerate)
    rows = [r.as_row() for r in res]
    n = 1 if a.manifold == "circle" else 2
    if a.out:
        exp.write_trials_csv(a.out, rows, n)
    else:
        wr = csv.writer(sys.stdout, lineterminator="\n")
        cols = exp.CSV_COLUMNS[n]
        wr.writerow(cols)
        for r in rows:
            wr.writerow(exp.format_row(r, cols))


def cmd_density(a):
    basis = build_basis(a.manifold, a.L)
    pt = tuple(a.point)
    res = finite_L_density(DensityQuery(basis, pt, a.index, a.samples, a.seed))
    out = {"density": res.density, "stderr": res.stderr,
           "density_metric": res.density_metric, "stderr_metric": res.stderr_metric}
    if a.asymptotic:
        c = asymptotic_constant(basis.n, a.index)
        lead = c.value * a.L ** (basis.n / 2)
        out.update(asymptotic_constant=c.value, ratio=res.density_metric / lead)
    _emit(out)


def cmd_experiment(a):
    cfg = exp.ExperimentConfig.load(a.config)
    if a.workers:
        cfg.workers = a.workers
    _emit(exp.run_experiment(cfg, a.out))


def cmd_summarize(a):
    _emit(exp.summarize(a.inp, write_plots=a.plots))


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="randnodal",
                                description="Nodal sets and critical points of random "
                                            "spectral sums.")
    sub = p.add_subparsers(dest="cmd", required=True)

    s = sub.add_parser("moments", help="moment constants of the symbol body")
    s.add_argument("--dim", type=int, required=True)
    s.add_argument("--gamma", type=float, default=0.0, help="annulus inner level")
    s.add_argument("--order", type=float, default=2.0)
    s.add_argument("--mc", type=int, default=0, metavar="SAMPLES")
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_moments)

    s = sub.add_parser("randmat", help="E|det| of trace-coupled symmetric matrices")
    s.add_argument("--size", type=int, required=True)
    s.add_argument("--trace-coupling", type=float, required=True)
    s.add_argument("--index", type=int, required=True)
    s.add_argument("--samples", type=int, default=1_000_000)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--workers", type=int, default=1)
    s.set_defaults(func=cmd_randmat)

    s = sub.add_parser("kernel", help="kernel diagonal vs its leading asymptotics (CSV)")
    s.add_argument("--manifold", required=True, choices=exp.MANIFOLDS)
    s.add_argument("--L", type=float, required=True)
    s.add_argument("--derivs", default="id,id")
    s.add_argument("--sweep", type=_floats, default=None)
    s.set_defaults(func=cmd_kernel)

    s = sub.add_parser("nodal", help="simulate trials and count zeros / critical points")
    s.add_argument("--manifold", required=True, choices=exp.MANIFOLDS)
    s.add_argument("--L", type=float, required=True)
    s.add_argument("--trials", type=int, required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--grid", type=float, default=12.0, metavar="CELLS_PER_WAVELENGTH")
    g = s.add_mutually_exclusive_group()
    g.add_argument("--window", type=float, default=None)
    g.add_argument("--pure", action="store_true")
    s.add_argument("--workers", type=int, default=1)
    s.add_argument("--max-degenerate", type=float, default=0.01)
    s.add_argument("--out", default=None)
    s.set_defaults(func=cmd_nodal)

    s = sub.add_parser("density", help="finite-L Kac-Rice density at a point")
    s.add_argument("--manifold", required=True, choices=exp.MANIFOLDS)
    s.add_argument("--point", type=_floats, required=True)
    s.add_argument("--L", type=float, required=True)
    s.add_argument("--index", type=int, default=0)
    s.add_argument("--samples", type=int, default=20000)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--asymptotic", action="store_true")
    s.set_defaults(func=cmd_density)

    s = sub.add_parser("experiment", help="run an L sweep from a JSON config")
    s.add_argument("--config", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--workers", type=int, default=None)
    s.set_defaults(func=cmd_experiment)

    s = sub.add_parser("summarize", help="summarize a trials CSV")
    s.add_argument("--in", dest="inp", required=True)
    s.add_argument("--plots", action="store_true", help="also write plot-ready files")
    s.set_defaults(func=cmd_summarize)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        args.func(args)
    except (ValueError, OSError, DegenerateFractionError) as exc:
        print(f"randnodal {args.cmd}: error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
