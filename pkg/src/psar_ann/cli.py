"""Command-line front end: ``psar-ann <command> [flags]``."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from typing import Optional, Sequence

import numpy as np

from .fitting import FitOptions, FitResult, fit
from .inference import aic, asymptotic_covariance, interval_table, lrt, morans_i
from .likelihood import Likelihood, UnsupportedFamilyError
from .model import Dataset, ModelSpec
from .simulation import McSummary, SimConfig, generate_dataset, monte_carlo, qq_data
from .weights import (
    build_knn,
    build_lattice_adjacency,
    build_minimum_distance,
    build_sphere_of_influence,
    read_gal,
    row_standardize,
    write_gal,
)

log = logging.getLogger("psar_ann")


def _lattice(text: str) -> tuple[int, int]:
    try:
        r, c = text.lower().split("x")
        return int(r), int(c)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected ROWSxCOLS, got {text!r}") from None


def _probability(text: str) -> float:
    v = float(text)
    if not 0 < v < 1:
        raise argparse.ArgumentTypeError(f"level must lie in (0, 1), got {text}")
    return v


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="psar-ann", description="PSAR-ANN spatial models: weights, simulation, fitting, inference.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    w = sub.add_parser("weights", help="build a spatial weights file (GAL)")
    src = w.add_mutually_exclusive_group(required=True)
    src.add_argument("--lattice", type=_lattice, help="grid size, e.g. 50x50")
    src.add_argument("--points", help="CSV of x,y coordinates (header row)")
    w.add_argument("--rule", choices=["queen", "rook", "bishop"], default="queen")
    w.add_argument("--method", choices=["min-distance", "knn", "sphere"], default="sphere")
    w.add_argument("--k", type=int, default=4)
    w.add_argument("--standardize", action="store_true", help="check that every unit has a neighbor")
    w.add_argument("--out", required=True)

    s = sub.add_parser("simulate", help="draw one dataset from a simulation config")
    s.add_argument("--config", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--eps", help="also write the injected errors here")
    s.add_argument("--replicate", type=int, default=0)
    s.add_argument("--weights-out", help="also write the lattice weights (GAL)")

    f = sub.add_parser("fit", help="maximum-likelihood fit")
    f.add_argument("--data", required=True)
    f.add_argument("--weights", required=True)
    f.add_argument("--family", choices=["normal", "t", "laplace"], default="normal")
    f.add_argument("--df", type=float)
    f.add_argument("--neurons", type=int, default=1)
    f.add_argument("--intercept", action="store_true")
    f.add_argument("--neuron-bias", action="store_true")
    f.add_argument("--no-linear", action="store_true", help="drop the X beta block")
    f.add_argument("--mode", choices=["joint", "alternating"], default="joint")
    f.add_argument("--restarts", type=int, default=5)
    f.add_argument("--seed", type=int, default=0)
    f.add_argument("--out", required=True)

    m = sub.add_parser("mc", help="Monte Carlo replications of a simulation config")
    m.add_argument("--config", required=True)
    m.add_argument("--replicates", type=int)
    m.add_argument("--seed", type=int)
    m.add_argument("--mode", choices=["joint", "alternating"], default="joint")
    m.add_argument("--workers", type=int, default=1)
    m.add_argument("--start-at-truth", action="store_true")
    m.add_argument("--out", required=True)

    i = sub.add_parser("infer", help="standard errors, intervals, Moran's I, AIC, LRT")
    i.add_argument("--fit", required=True)
    i.add_argument("--data", required=True)
    i.add_argument("--weights", required=True)
    i.add_argument("--level", type=_probability, default=0.95)
    i.add_argument("--null-fit", help="nested fit for the likelihood-ratio test")
    i.add_argument("--out", required=True)

    q = sub.add_parser("qq", help="normal-plot data for one parameter of an mc table")
    q.add_argument("--mc", required=True)
    q.add_argument("--param", required=True)
    q.add_argument("--out", required=True)
    return p


# --- file helpers ----------------------------------------------------------


def read_dataset_csv(path: str) -> tuple[np.ndarray, np.ndarray]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header = [h.strip() for h in rows[0]]
    if not header or header[0] != "y" or any(h != f"x{j + 1}" for j, h in enumerate(header[1:])):
        raise ValueError(f"{path}: header must be y,x1,...,xq; got {','.join(header)}")
    table = np.array([[float(v) for v in r] for r in rows[1:] if r], dtype=float)
    return table[:, 0], table[:, 1:]


def write_dataset_csv(path: str, y: np.ndarray, x: np.ndarray) -> None:
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(["y"] + [f"x{j + 1}" for j in range(x.shape[1])])
        for yi, xi in zip(y, x):
            out.writerow([repr(float(yi))] + [repr(float(v)) for v in xi])


def load_dataset(data_path: str, weights_path: str) -> Dataset:
    y, x = read_dataset_csv(data_path)
    w = row_standardize(read_gal(weights_path))
    return Dataset(y, x, w)


# --- commands ----------------------------------------------------------------


def cmd_weights(args) -> None:
    if args.lattice:
        adj = build_lattice_adjacency(*args.lattice, rule=args.rule)
    else:
        pts = np.loadtxt(args.points, delimiter=",", skiprows=1, ndmin=2)
        if args.method == "min-distance":
            adj = build_minimum_distance(pts)
        elif args.method == "knn":
            adj = build_knn(pts, args.k)
        else:
            adj = build_sphere_of_influence(pts)
    if args.standardize:
        row_standardize(adj)
    write_gal(adj, args.out)


def cmd_simulate(args) -> None:
    config = SimConfig.load(args.config)
    w = config.weights()
    sim = generate_dataset(config, args.replicate, w)
    write_dataset_csv(args.out, sim.data.y, sim.data.x)
    if args.eps:
        with open(args.eps, "w") as fh:
            fh.write("eps\n")
            fh.writelines(f"{float(e)!r}\n" for e in sim.eps)
    if args.weights_out:
        write_gal(build_lattice_adjacency(config.rows, config.cols, config.rule), args.weights_out)


def cmd_fit(args) -> None:
    data = load_dataset(args.data, args.weights)
    spec = ModelSpec(
        q=data.q,
        h=args.neurons,
        family=args.family,
        df=args.df,
        intercept=args.intercept,
        neuron_bias=args.neuron_bias,
        linear=not args.no_linear,
    )
    options = FitOptions(mode=args.mode, seed=args.seed, restarts=args.restarts)
    result = fit(data, spec, options)
    result.to_json(args.out)
    log.info("loglik %.6f after %d iterations (%s)", result.loglik, result.iterations, result.message)


def cmd_mc(args) -> None:
    config = SimConfig.load(args.config)
    overrides = {}
    if args.replicates is not None:
        overrides["replicates"] = args.replicates
    if args.seed is not None:
        overrides["seed"] = args.seed
    if overrides:
        config = SimConfig.from_dict({**config.to_dict(), **overrides})
    summary = monte_carlo(config, FitOptions(mode=args.mode), workers=args.workers, start_at_truth=args.start_at_truth)
    summary.to_csv(args.out)
    log.info("\n%s", summary.table())


def cmd_infer(args) -> None:
    result = FitResult.from_json(args.fit)
    data = load_dataset(args.data, args.weights)
    spec = result.spec
    flat = result.theta.flatten()
    lik = Likelihood(data, spec)
    loglik = lik.loglik(flat)
    out = {
        "estimates": dict(zip(spec.param_names(), flat.tolist())),
        "loglik": loglik,
        "loglik_reported": result.loglik,
        "n_params": spec.n_params,
        "aic": aic(loglik, spec.n_params),
        "moran": morans_i(lik.residuals(flat), data.w).to_dict(),
    }
    try:
        cov = asymptotic_covariance(result.theta, data, spec)
    except UnsupportedFamilyError as exc:
        print(f"note: {exc}", file=sys.stderr)
        out.update(se=None, intervals=None, covariance=None, covariance_note=str(exc))
    else:
        out.update(
            se=dict(zip(spec.param_names(), cov.se.tolist())),
            level=args.level,
            intervals=interval_table(cov, result.theta, args.level),
            covariance=cov.to_dict(),
        )
    if args.null_fit:
        null = FitResult.from_json(args.null_fit)
        null_ll = Likelihood(data, null.spec).loglik(null.theta.flatten())
        test = lrt(null_ll, loglik, spec.n_params - null.spec.n_params)
        out["lrt"] = {**test.to_dict(), "null_loglik": null_ll, "alt_loglik": loglik}
    with open(args.out, "w") as fh:
        json.dump(out, fh, indent=2)
        fh.write("\n")


def cmd_qq(args) -> None:
    summary = McSummary.from_csv(args.mc)
    if args.param not in summary.names:
        raise ValueError(f"unknown parameter {args.param!r}; columns are {', '.join(summary.names)}")
    theo, sample = qq_data(summary.column(args.param))
    with open(args.out, "w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(["theoretical", "sample"])
        for t, s in zip(theo, sample):
            out.writerow([repr(float(t)), repr(float(s))])


COMMANDS = {
    "weights": cmd_weights,
    "simulate": cmd_simulate,
    "fit": cmd_fit,
    "mc": cmd_mc,
    "infer": cmd_infer,
    "qq": cmd_qq,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if args.command == "fit":
        if args.family == "t" and args.df is None:
            parser.print_usage(sys.stderr)
            print("psar-ann fit: error: --df is required with --family t", file=sys.stderr)
            return 2
        if args.family != "t" and args.df is not None:
            parser.print_usage(sys.stderr)
            print("psar-ann fit: error: --df only applies to --family t", file=sys.stderr)
            return 2
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        COMMANDS[args.command](args)
    except Exception as exc:  # one diagnostic line, no traceback
        print(f"psar-ann {args.command}: error: {exc}", file=sys.stderr)
        return 1
    return 0


def main_entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    main_entry()
