"""Command-line entry point.

Subcommands: simulate, fit, render, predict, diag, bench.  Every command
resolves its configuration (JSON config file first, explicit flags
override), writes a manifest.json capturing the resolved configuration plus
seed and package version, and can be rerun from that manifest via
--config to reproduce its primary outputs byte for byte.  Wall-clock
figures go to a separate timings.json, which is the one output exempt from
the byte-identity contract.

Exit codes: 0 success, 2 validation error, 3 numerical failure,
4 runaway thinning.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .errors import (
    NumericalError,
    RunawayThinningError,
    ValidationError,
)
from .geometry import Domain, EventSet, load_events, save_events
from .gp_core import CovParams, SpaceTimeCovParams
from .io_util import write_json
from .mcmc import (
    ChainConfig,
    GammaChainPrior,
    PosteriorDraws,
    inefficiency_factor,
    run_chain,
)
from .surfaces import (
    GridSpec,
    posterior_intensity_grid,
    predict_next_time,
    surface_max_abs_diff,
    write_field_csv,
    write_field_ppm,
)


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=str, default=None,
                   help="JSON config or a previous manifest.json; flags override")
    p.add_argument("--out", type=str, required=False, help="output directory")
    p.add_argument("--seed", type=int, default=None, help="64-bit run seed")
    p.add_argument("--threads", type=int, default=1,
                   help="worker threads (results are thread-count independent)")


def _add_domain(p: argparse.ArgumentParser) -> None:
    p.add_argument("--domain", type=float, nargs=4,
                   metavar=("X_MIN", "X_MAX", "Y_MIN", "Y_MAX"),
                   default=[0.0, 10.0, 0.0, 10.0])


def _add_kernel(p: argparse.ArgumentParser) -> None:
    p.add_argument("--sigma2-1", type=float, default=1.0,
                   help="first-slice innovation variance")
    p.add_argument("--phi-1", type=float, default=2.0,
                   help="first-slice decay rate")
    p.add_argument("--sigma2", type=float, default=None,
                   help="later-slice innovation variance (default: sigma2-1)")
    p.add_argument("--phi", type=float, default=None,
                   help="later-slice decay rate (default: phi-1)")


def build_parser():
    ap = argparse.ArgumentParser(prog="nngpcox")
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)
    subparsers = {}

    p = subparsers["simulate"] = sub.add_parser(
        "simulate", help="forward-simulate a realization")
    _add_common(p)
    _add_domain(p)
    _add_kernel(p)
    p.add_argument("--T", type=int, default=1)
    p.add_argument("--lambda-star", type=str, default="20",
                   help="rate bound, comma-separated per slice or one value")
    p.add_argument("--dense-cutoff", type=int, default=3000)
    p.add_argument("--sim-neighbors", type=int, default=30)

    p = subparsers["fit"] = sub.add_parser(
        "fit", help="run the Gibbs sampler on an events CSV")
    _add_common(p)
    _add_domain(p)
    _add_kernel(p)
    p.add_argument("--events", type=str, required=False)
    p.add_argument("--T", type=int, default=1)
    p.add_argument("--M", type=int, default=30)
    p.add_argument("--n-iter", type=int, default=600)
    p.add_argument("--burn-in", type=int, default=100)
    p.add_argument("--a0", type=float, default=100.0)
    p.add_argument("--b0", type=float, default=10.0)
    p.add_argument("--w", type=float, default=0.0)
    p.add_argument("--sample-theta", action="store_true")
    p.add_argument("--theta-sd", type=float, nargs=2, default=[0.1, 0.1])
    p.add_argument("--max-proposals", type=int, default=1_000_000)
    p.add_argument("--latent-dense-cutoff", type=int, default=64)
    p.add_argument("--thinned-mode", choices=["birth-death", "fixed-count"],
                   default="birth-death")
    p.add_argument("--bd-moves", type=int, default=None,
                   help="birth-death attempts per slice per iteration")
    p.add_argument("--format", choices=["npz", "csv"], default="npz")
    p.add_argument("--no-save-thinned", action="store_true")

    p = subparsers["render"] = sub.add_parser(
        "render", help="posterior intensity surfaces from a draws file")
    _add_common(p)
    p.add_argument("--draws", type=str, required=False)
    p.add_argument("--nx", type=int, default=100)
    p.add_argument("--ny", type=int, default=100)
    p.add_argument("--t", type=str, default="all",
                   help="slice list like 1,2 or 'all'")
    p.add_argument("--M", type=int, default=None,
                   help="neighbor budget (default: the fit's M)")
    p.add_argument("--ppm", action="store_true", help="also write PPM heatmaps")
    p.add_argument("--predictive-variance", action="store_true",
                   help="integrate Phi through the kriging variance")

    p = subparsers["predict"] = sub.add_parser(
        "predict", help="one-step-ahead predictive surface")
    _add_common(p)
    p.add_argument("--draws", type=str, required=False)
    p.add_argument("--t", type=int, required=True,
                   help="training horizon; prediction targets t+1")
    p.add_argument("--nx", type=int, default=100)
    p.add_argument("--ny", type=int, default=100)
    p.add_argument("--M", type=int, default=None)

    p = subparsers["diag"] = sub.add_parser(
        "diag", help="inefficiency factors for chain series")
    _add_common(p)
    p.add_argument("--draws", type=str, default=None)
    p.add_argument("--series", type=str, default=None,
                   help="plain CSV with a header; diag per column")

    p = subparsers["bench"] = sub.add_parser(
        "bench", help="latent-block scaling benchmark")
    _add_common(p)
    p.add_argument("--sizes", type=str, default="500,1000,2000")
    p.add_argument("--m-list", type=str, default="10")
    p.add_argument("--dense-sizes", type=str, default="200,400")
    p.add_argument("--repeats", type=int, default=5)
    return ap, subparsers


def _resolve(argv):
    """Two-pass parse: config-file values become defaults, flags override."""
    ap, _ = build_parser()
    args = ap.parse_args(argv)
    if args.config:
        with open(args.config, encoding="utf-8") as fh:
            stored = json.load(fh)
        stored_args = stored.get("args", stored)
        stored_args.pop("config", None)
        ap2, subparsers = build_parser()
        for action in subparsers[args.command]._actions:
            if action.dest in stored_args:
                action.default = stored_args[action.dest]
                if action.required:
                    action.required = False
        args = ap2.parse_args(argv)
    return args


def _manifest(args, out: Path) -> None:
    payload = {k: v for k, v in vars(args).items() if k != "config"}
    write_json(out / "manifest.json", {
        "command": args.command,
        "version": __version__,
        "args": payload,
    })


def _require(args, *names):
    for name in names:
        if getattr(args, name) is None:
            raise ValidationError(f"--{name.replace('_', '-')} is required")


def _stp(args) -> SpaceTimeCovParams:
    s2 = args.sigma2 if args.sigma2 is not None else args.sigma2_1
    ph = args.phi if args.phi is not None else args.phi_1
    return SpaceTimeCovParams(
        theta1=CovParams(args.sigma2_1, args.phi_1),
        theta=CovParams(s2, ph),
    )


def _grid_from_meta(args, meta) -> GridSpec:
    dom = Domain(*meta["domain"])
    return GridSpec(nx=args.nx, ny=args.ny, domain=dom)


def cmd_simulate(args) -> int:
    _require(args, "out", "seed")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    dom = Domain(*args.domain)
    rates = [float(v) for v in str(args.lambda_star).split(",")]
    if len(rates) == 1:
        rates = rates * args.T
    if len(rates) != args.T:
        raise ValidationError(
            f"need 1 or T={args.T} rates, got {len(rates)}"
        )
    from .simulator import simulate_exgcp_spacetime

    rng = np.random.default_rng(np.random.SeedSequence(args.seed))
    sim = simulate_exgcp_spacetime(
        rates, _stp(args), dom, args.T, rng,
        dense_cutoff=args.dense_cutoff, M=args.sim_neighbors,
    )
    save_events(sim.events, out / "events.csv")
    save_events(sim.thinned, out / "thinned.csv")
    with open(out / "latent.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t", "x", "y", "z"])
        for t in range(args.T):
            for (x, y), z in zip(sim.homogeneous[t], sim.latent[t]):
                writer.writerow([t + 1, f"{x:.15g}", f"{y:.15g}", f"{z:.15g}"])
    _manifest(args, out)
    print(f"simulate: n = {sim.events.n} -> {out}")
    return 0


def cmd_fit(args) -> int:
    _require(args, "out", "seed", "events")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    dom = Domain(*args.domain)
    events = load_events(args.events, T=args.T)
    cfg = ChainConfig(
        n_iter=args.n_iter,
        burn_in=args.burn_in,
        M=args.M,
        stp=_stp(args),
        prior=GammaChainPrior(a0=args.a0, b0=args.b0, w=args.w),
        seed=args.seed,
        sample_theta=args.sample_theta,
        theta_proposal_sd=tuple(args.theta_sd),
        max_proposals_per_thinned_point=args.max_proposals,
        latent_dense_cutoff=args.latent_dense_cutoff,
        save_thinned=not args.no_save_thinned,
        thinned_mode=args.thinned_mode,
        bd_moves=args.bd_moves,
    )
    t0 = time.perf_counter()
    draws = run_chain(events, cfg, dom)
    wall = time.perf_counter() - t0
    draws.meta["domain"] = list(args.domain)
    draws.meta["stp"] = [cfg.stp.theta1.sigma2, cfg.stp.theta1.phi,
                         cfg.stp.theta.sigma2, cfg.stp.theta.phi]
    if args.format == "npz":
        _save_draws_npz(draws, out / "draws.npz")
    else:
        _save_draws_csv(draws, out / "draws.csv")
    write_json(out / "summary.json", {
        "retained": draws.R,
        "lambda_star_mean": [float(v) for v in draws.lambda_star.mean(axis=0)],
        "K_mean": [float(v) for v in draws.K.mean(axis=0)],
        "n": [len(p) for p in draws.obs_points],
        "thinning_acceptance": draws.stats["accepted"] / max(draws.stats["proposals"], 1),
    })
    write_json(out / "timings.json", {
        "total_s": wall,
        "thinned_s": draws.stats["wall_thinned"],
        "latent_s": draws.stats["wall_latent"],
        "lambda_s": draws.stats["wall_lambda"],
        "theta_s": draws.stats["wall_theta"],
    })
    _manifest(args, out)
    print(f"fit: {draws.R} retained draws -> {out}")
    return 0


def _save_draws_npz(draws: PosteriorDraws, path) -> None:
    draws.save(path)


def _save_draws_csv(draws: PosteriorDraws, path) -> None:
    """Flat CSV: rate and count chains only (field snapshots need npz)."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        header = [f"lambda_star_{t + 1}" for t in range(draws.T)]
        header += [f"K_{t + 1}" for t in range(draws.T)]
        writer.writerow(header)
        for r in range(draws.R):
            row = [f"{v:.15g}" for v in draws.lambda_star[r]]
            row += [str(int(v)) for v in draws.K[r]]
            writer.writerow(row)


def _load_draws(args) -> PosteriorDraws:
    _require(args, "draws")
    return PosteriorDraws.load(args.draws)


def cmd_render(args) -> int:
    _require(args, "out")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    draws = _load_draws(args)
    meta = draws.meta
    grid = _grid_from_meta(args, meta)
    stp = SpaceTimeCovParams(
        CovParams(meta["stp"][0], meta["stp"][1]),
        CovParams(meta["stp"][2], meta["stp"][3]),
    )
    M = args.M if args.M is not None else int(meta["M"])
    times = (
        list(range(1, draws.T + 1))
        if args.t == "all"
        else [int(v) for v in str(args.t).split(",")]
    )
    fields = posterior_intensity_grid(
        draws, grid, stp, M, times=times,
        predictive_variance=args.predictive_variance,
    )
    for fld in fields:
        write_field_csv(fld, out / f"field_t{fld.t}.csv")
        if args.ppm:
            write_field_ppm(fld, out / f"field_t{fld.t}.ppm",
                            out / f"field_t{fld.t}.ppm.json")
    _manifest(args, out)
    print(f"render: {len(fields)} field(s) -> {out}")
    return 0


def cmd_predict(args) -> int:
    _require(args, "out", "seed")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    draws = _load_draws(args)
    meta = draws.meta
    grid = _grid_from_meta(args, meta)
    stp = SpaceTimeCovParams(
        CovParams(meta["stp"][0], meta["stp"][1]),
        CovParams(meta["stp"][2], meta["stp"][3]),
    )
    M = args.M if args.M is not None else int(meta["M"])
    prior = GammaChainPrior(a0=meta["a0"], b0=meta["b0"], w=meta["w"])
    rng = np.random.default_rng(np.random.SeedSequence(args.seed))
    field = predict_next_time(draws, args.t, prior, grid, stp, M, rng)
    write_field_csv(field, out / f"field_pred_t{field.t}.csv")
    write_json(out / "predict_summary.json", {
        "t_train": args.t,
        "t_pred": field.t,
        "lambda_pred_mean": float(np.mean(field.lambda_pred)),
        "lambda_train_mean": float(draws.lambda_star[:, args.t - 1].mean()),
    })
    _manifest(args, out)
    print(f"predict: t={field.t} surface -> {out}")
    return 0


def cmd_diag(args) -> int:
    _require(args, "out")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    report = {}
    if args.draws:
        draws = PosteriorDraws.load(args.draws)
        for t in range(draws.T):
            report[f"lambda_star_{t + 1}"] = inefficiency_factor(
                draws.lambda_star[:, t]
            )
            report[f"K_{t + 1}"] = inefficiency_factor(
                draws.K[:, t].astype(float)
            )
    if args.series:
        with open(args.series, encoding="utf-8") as fh:
            reader = csv.DictReader(fh)
            cols = {name: [] for name in reader.fieldnames}
            for row in reader:
                for name in cols:
                    cols[name].append(float(row[name]))
        for name, vals in cols.items():
            report[name] = inefficiency_factor(vals)
    if not report:
        raise ValidationError("diag needs --draws and/or --series")
    write_json(out / "diag.json", report)
    _manifest(args, out)
    for name, val in report.items():
        print(f"IF[{name}] = {val:.3f}")
    return 0


def cmd_bench(args) -> int:
    _require(args, "out", "seed")
    from .bench import run_bench

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    report = run_bench(
        sizes=[int(v) for v in args.sizes.split(",")],
        m_list=[int(v) for v in args.m_list.split(",")],
        dense_sizes=[int(v) for v in args.dense_sizes.split(",")],
        repeats=args.repeats,
        seed=args.seed,
    )
    write_json(out / "bench.json", report)
    _manifest(args, out)
    for m, fit in report["nngp_fit"].items():
        print(f"NNGP latent block, M={m}: time ~ K^{fit['exponent']:.2f}")
    print(f"dense latent block: time ~ K^{report['dense_fit']['exponent']:.2f}")
    return 0


_COMMANDS = {
    "simulate": cmd_simulate,
    "fit": cmd_fit,
    "render": cmd_render,
    "predict": cmd_predict,
    "diag": cmd_diag,
    "bench": cmd_bench,
}


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    try:
        args = _resolve(argv)
        return _COMMANDS[args.command](args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except RunawayThinningError as exc:
        print(f"runaway thinning: {exc}", file=sys.stderr)
        return 4
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
