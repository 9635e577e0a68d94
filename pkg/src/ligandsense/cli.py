"""Command-line interface: simulation, estimation, bounds, and figure sweeps.

Subcommands emit CSV (stdout or --out) with fixed headers; --plot additionally
renders an SVG next to the data.  Exit codes: 0 success, 1 usage error,
2 numeric or configuration error.  All randomness is keyed by --seed, so a
fixed seed reproduces output byte for byte regardless of thread settings.
"""

from __future__ import annotations

import argparse
import csv
import io
import sys
from dataclasses import replace

import numpy as np

from .errors import LigandSenseError
from .estimators import EstimatorMatrices, estimate_concentrations
from .experiments import (
    ScenarioConfig,
    run_kpr_figure,
    run_sweep,
)
from .kinetics import ObservationSet, sample_observations
from .kpr import kpr_rates, simulate_receptors
from . import crn as crn_mod
from . import theory

HEADERS = {
    "simulate": ["record", "index", "value"],
    "estimate": [
        "estimator", "ligand", "c_true", "c_hat", "alpha_hat",
        "analytic_var", "analytic_bias", "analytic_mse",
    ],
    "crlb": ["ligand", "alpha", "fisher_diag", "ratio_crlb", "conc_crlb"],
    "sweep": ["var", "estimator", "analytic", "mc", "mc_se", "crlb"],
    "kpr": ["substate", "count", "empirical", "analytic_kpr", "analytic_binned"],
    "crn": ["time", "species", "expected_count"],
    "optimize-nu": ["nu_opt", "average_nmse", "used_grid_fallback"],
}


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """argparse exits 2 on bad usage by default; the contract here is 1."""

    def error(self, message):
        raise _UsageError(message)


def _fmt(value) -> str:
    if isinstance(value, float):
        if np.isnan(value):
            return "nan"
        return repr(value)
    return str(value)


def _emit(rows, header, out_path) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([_fmt(v) for v in row])
    text = buf.getvalue()
    if out_path:
        with open(out_path, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return text


def _load_config(args) -> ScenarioConfig:
    if args.config and args.config != "defaults":
        config = ScenarioConfig.load(args.config)
    else:
        config = ScenarioConfig()
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.trials is not None:
        overrides["trials"] = args.trials
    if getattr(args, "n_types", None) is not None:
        overrides["n_types"] = args.n_types
    if getattr(args, "chi", None) is not None:
        overrides["similarity"] = args.chi
    if getattr(args, "samples", None) is not None:
        overrides["n_samples"] = args.samples
    if getattr(args, "estimators", None):
        overrides["estimators"] = [k.strip() for k in args.estimators.split(",")]
    if getattr(args, "metric", None):
        overrides["metric"] = args.metric
    if overrides:
        config = replace(config, **overrides)
    return config


# -----------------------------------------------------------------------------
# subcommands
# -----------------------------------------------------------------------------


def _cmd_simulate(args) -> str:
    config = _load_config(args)
    obs = sample_observations(config.full_mixture(), config.n_samples, config.seed)
    rows = [
        ["n_samples", "", obs.n_samples],
        ["total_unbound_time", "", float(obs.total_unbound_time)],
    ]
    rows += [["bound_duration", i, float(t)] for i, t in enumerate(obs.bound_durations)]
    text = _emit(rows, HEADERS["simulate"], args.out)
    if args.plot:
        _plot_simulate(obs, args.plot)
    return text


def _read_observations(path) -> ObservationSet:
    n_samples = None
    t_u = None
    durations = []
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            if row["record"] == "n_samples":
                n_samples = int(row["value"])
            elif row["record"] == "total_unbound_time":
                t_u = float(row["value"])
            elif row["record"] == "bound_duration":
                durations.append(float(row["value"]))
    if n_samples is None or t_u is None:
        raise LigandSenseError(f"{path} is not a simulate dump")
    return ObservationSet(
        n_samples=n_samples, total_unbound_time=t_u,
        bound_durations=np.asarray(durations),
    )


def _cmd_estimate(args) -> str:
    config = _load_config(args)
    rates = config.unbinding_rates()
    if args.data:
        obs = _read_observations(args.data)
    else:
        obs = sample_observations(config.full_mixture(), config.n_samples, config.seed)
    c_true = config.total_concentration * config.known_ratios()

    rows = []
    for kind in config.estimators:
        if kind == "nu_opt":
            alpha = config.known_ratios()
            present = alpha > 0
            nu = theory.optimize_nu(
                alpha[present] / alpha[present].sum(), rates[present],
                config.total_concentration, config.n_samples,
            ).nu
            ratio_kind = "unbiased"
        else:
            nu = config.nu_biased if kind == "biased" else config.nu_unbiased
            ratio_kind = kind
        scheme = config.scheme(nu)
        matrices = EstimatorMatrices.build(scheme, rates)
        est = estimate_concentrations(ratio_kind, obs, scheme, matrices, config.binding_rate)
        report = _estimate_report(config, ratio_kind, matrices)
        for i in range(config.n_types):
            rows.append([
                kind, i + 1, float(c_true[i]), float(est.concentrations[i]),
                float(est.ratios[i]),
                float(report.variance[i]) if report else float("nan"),
                float(report.bias[i]) if report else float("nan"),
                float(report.mse[i]) if report else float("nan"),
            ])
    text = _emit(rows, HEADERS["estimate"], args.out)
    if args.plot:
        _plot_estimate(rows, args.plot)
    return text


def _estimate_report(config: ScenarioConfig, kind: str, matrices):
    if config.unknown_rates:
        if kind != "unbiased":
            return None
        return theory.unknown_ligand_analytics(
            config.unbinding_rates(), config.known_ratios(),
            config.unknown_rates, config.unknown_ratios,
            matrices.scheme, config.total_concentration, config.n_samples,
        )
    if kind == "biased":
        return theory.biased_estimator_analytics(
            matrices.s, matrices.h, config.known_ratios(),
            config.total_concentration, config.n_samples,
        )
    if kind == "unbiased":
        return theory.unbiased_estimator_analytics(
            matrices.s, config.known_ratios(), config.total_concentration, config.n_samples
        )
    return None


def _cmd_crlb(args) -> str:
    config = _load_config(args)
    alpha = config.known_ratios()
    if np.any(alpha == 0):
        raise LigandSenseError("CRLB needs strictly positive ratios; drop absent types")
    bounds = theory.crlb(
        alpha, config.unbinding_rates(), config.n_samples, config.total_concentration
    )
    rows = [
        [i + 1, float(alpha[i]), float(bounds.fisher.matrix[i, i]),
         float(bounds.ratio[i]), float(bounds.concentration[i])]
        for i in range(config.n_types)
    ]
    text = _emit(rows, HEADERS["crlb"], args.out)
    if args.plot:
        _plot_bars(rows, args.plot, x_col=0, y_col=4, ylabel="concentration CRLB")
    return text


def _sweep_grid(args):
    if args.values is not None:
        if args.var == "absence":
            return [v for v in args.values.split(";") if v]
        return [float(v) for v in args.values.split(",") if v]
    if args.var == "absence":
        raise _UsageError("absence sweeps need --values like '1;5;1,2'")
    if args.start is None or args.stop is None:
        raise _UsageError("numeric sweeps need --from and --to (or --values)")
    if args.var in ("M",):
        return list(range(int(args.start), int(args.stop) + 1))
    points = args.points if args.points else 9
    if args.log or args.var in ("N", "k_u"):
        return list(np.geomspace(args.start, args.stop, points))
    return list(np.linspace(args.start, args.stop, points))


def _cmd_sweep(args) -> str:
    config = _load_config(args)
    grid = _sweep_grid(args)
    rows_out = []
    rows = run_sweep(config, args.var, grid)
    for r in rows:
        rows_out.append([r.var, r.estimator, float(r.analytic), float(r.mc),
                         float(r.mc_se), float(r.crlb)])
    text = _emit(rows_out, HEADERS["sweep"], args.out)
    if args.plot:
        _plot_sweep(rows, args.plot, args.var, config.metric)
    return text


def _kpr_defaults(args) -> ScenarioConfig:
    """The proofreading reference setup has 3 ligand types unless overridden."""
    config = _load_config(args)
    if args.n_types is None and args.config in (None, "defaults"):
        config = replace(config, n_types=3)
    return config


def _cmd_kpr(args) -> str:
    config = _kpr_defaults(args)
    rows = run_kpr_figure(config)
    rows_out = [
        [r.substate, float(r.count), float(r.empirical),
         float(r.analytic_kpr), float(r.analytic_binned)]
        for r in rows
    ]
    text = _emit(rows_out, HEADERS["kpr"], args.out)
    if args.plot:
        _plot_kpr(rows, args.plot)
    return text


def _cmd_crn(args) -> str:
    config = _kpr_defaults(args)
    mix = config.full_mixture()
    scheme = config.scheme(config.nu_unbiased)
    matrices = EstimatorMatrices.build(scheme, config.unbinding_rates())
    kpr = kpr_rates(scheme, config.kpr_kappa)
    counts = simulate_receptors(
        mix, kpr, config.crn_production_rate, config.n_samples, config.seed
    )
    spec = crn_mod.CrnSpec(
        weights=matrices.w,
        consumption_rate=config.binding_rate,
        production_rate=config.crn_production_rate,
        d_counts=counts.d_counts,
        s_count=counts.s_count,
    )
    times, trajectory = crn_mod.crn_integrate(spec)
    rows = []
    for t, y in zip(times, trajectory):
        for i, v in enumerate(y):
            rows.append([float(t), f"Y{i + 1}", float(v)])
    text = _emit(rows, HEADERS["crn"], args.out)
    if args.plot:
        _plot_crn(times, trajectory, args.plot)
    return text


def _cmd_optimize_nu(args) -> str:
    config = _load_config(args)
    alpha = config.known_ratios()
    present = alpha > 0
    result = theory.optimize_nu(
        alpha[present] / alpha[present].sum(),
        config.unbinding_rates()[present],
        config.total_concentration,
        config.n_samples,
    )
    rows = [[float(result.nu), float(result.average_nmse), int(result.used_grid_fallback)]]
    text = _emit(rows, HEADERS["optimize-nu"], args.out)
    if args.plot:
        _plot_nu_objective(config, result, args.plot)
    return text


# -----------------------------------------------------------------------------
# plots (derived artifacts; the CSV stays the canonical output)
# -----------------------------------------------------------------------------


def _figure():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    return plt


def _save(fig, path):
    fig.savefig(path, format="svg", metadata={"Date": None})


def _plot_simulate(obs, path):
    plt = _figure()
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.hist(obs.bound_durations, bins=80, density=True)
    ax.set_xlabel("bound duration [s]")
    ax.set_ylabel("density")
    _save(fig, path)
    plt.close(fig)


def _plot_estimate(rows, path):
    plt = _figure()
    fig, ax = plt.subplots(figsize=(6, 4))
    ligands = sorted({r[1] for r in rows})
    for kind in sorted({r[0] for r in rows}):
        vals = [r[3] for r in rows if r[0] == kind]
        ax.plot(ligands, vals, "o-", label=kind)
    truth = [r[2] for r in rows[: len(ligands)]]
    ax.plot(ligands, truth, "k--", label="truth")
    ax.set_xlabel("ligand")
    ax.set_ylabel("concentration")
    ax.legend()
    _save(fig, path)
    plt.close(fig)


def _plot_bars(rows, path, x_col, y_col, ylabel):
    plt = _figure()
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.bar([r[x_col] for r in rows], [r[y_col] for r in rows])
    ax.set_xlabel("ligand")
    ax.set_ylabel(ylabel)
    ax.set_yscale("log")
    _save(fig, path)
    plt.close(fig)


def _plot_sweep(rows, path, var, metric):
    plt = _figure()
    fig, ax = plt.subplots(figsize=(6.5, 4.5))
    kinds = []
    for r in rows:
        if r.estimator not in kinds:
            kinds.append(r.estimator)
    for kind in kinds:
        sel = [r for r in rows if r.estimator == kind]
        x = np.arange(len(sel))
        ax.plot(x, [r.analytic for r in sel], "-", label=f"{kind} analytic")
        ax.errorbar(x, [r.mc for r in sel], yerr=[3 * r.mc_se for r in sel],
                    fmt="o", ms=3, label=f"{kind} MC")
        ax.set_xticks(x, [r.var for r in sel])
    crlbs = [r.crlb for r in rows if r.estimator == kinds[0]]
    if not any(np.isnan(c) for c in crlbs):
        ax.plot(np.arange(len(crlbs)), crlbs, "k--", label="CRLB")
    ax.set_xlabel(var)
    ax.set_ylabel(metric)
    ax.set_yscale("log")
    ax.legend(fontsize=8)
    _save(fig, path)
    plt.close(fig)


def _plot_kpr(rows, path):
    plt = _figure()
    substates = sorted({r.substate for r in rows})
    fig, axes = plt.subplots(1, len(substates), figsize=(4 * len(substates), 3.5))
    axes = np.atleast_1d(axes)
    for ax, j in zip(axes, substates):
        sel = [r for r in rows if r.substate == j]
        x = [r.count for r in sel]
        ax.bar(x, [r.empirical for r in sel], width=x[1] - x[0] if len(x) > 1 else 1,
               alpha=0.4, label="simulated")
        ax.plot(x, [r.analytic_kpr for r in sel], "-", label="proofreading")
        ax.plot(x, [r.analytic_binned for r in sel], "--", label="binned counts")
        ax.set_title(f"D{j}")
        ax.set_xlabel("molecule count")
    axes[0].set_ylabel("density")
    axes[-1].legend(fontsize=8)
    _save(fig, path)
    plt.close(fig)


def _plot_crn(times, trajectory, path):
    plt = _figure()
    fig, ax = plt.subplots(figsize=(6, 4))
    for i in range(trajectory.shape[1]):
        ax.plot(times, trajectory[:, i], label=f"Y{i + 1}")
    ax.set_xlabel("time [s]")
    ax.set_ylabel("expected count")
    ax.legend()
    _save(fig, path)
    plt.close(fig)


def _plot_nu_objective(config, result, path):
    plt = _figure()
    alpha = config.known_ratios()
    present = alpha > 0
    nus = np.linspace(0.2, 10.0, 120)
    vals = [
        theory.nu_objective(
            nu, alpha[present] / alpha[present].sum(),
            config.unbinding_rates()[present],
            config.total_concentration, config.n_samples,
        )
        for nu in nus
    ]
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(nus, vals)
    ax.axvline(result.nu, color="k", ls="--")
    ax.set_xlabel("threshold scale")
    ax.set_ylabel("average NMSE")
    ax.set_yscale("log")
    _save(fig, path)
    plt.close(fig)


# -----------------------------------------------------------------------------
# parser
# -----------------------------------------------------------------------------


def _build_parser() -> _Parser:
    shared = _Parser(add_help=False)
    shared.add_argument("--seed", type=int, default=None, help="master RNG seed")
    shared.add_argument("--trials", type=int, default=None, help="Monte Carlo trials")
    shared.add_argument("--config", default=None,
                        help="YAML scenario file, or 'defaults'")
    shared.add_argument("--out", default=None, help="write CSV here instead of stdout")
    shared.add_argument("--plot", default=None, help="also render an SVG to this path")
    shared.add_argument("--M", dest="n_types", type=int, default=None,
                        help="number of ligand types")
    shared.add_argument("--chi", type=float, default=None, help="similarity parameter")
    shared.add_argument("--samples", type=int, default=None,
                        help="dwell-time samples per trial")

    parser = _Parser(prog="ligandsense",
                     description="multi-ligand channel sensing toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("simulate", parents=[shared],
                   help="dump one sampled observation set")

    p_est = sub.add_parser("estimate", parents=[shared],
                           help="estimates plus analytic error budget")
    p_est.add_argument("--data", default=None, help="simulate dump to estimate from")
    p_est.add_argument("--estimators", default=None,
                       help="comma list: unbiased,biased")

    sub.add_parser("crlb", parents=[shared], help="Fisher information and CRLB")

    p_sweep = sub.add_parser("sweep", parents=[shared], help="figure-reproduction sweeps")
    p_sweep.add_argument("--var", required=True,
                         choices=["M", "chi", "N", "alpha_M", "absence", "k_u", "alpha_u"])
    p_sweep.add_argument("--from", dest="start", type=float, default=None)
    p_sweep.add_argument("--to", dest="stop", type=float, default=None)
    p_sweep.add_argument("--points", type=int, default=None)
    p_sweep.add_argument("--values", default=None,
                         help="explicit grid; for absence use '1;5;1,2'")
    p_sweep.add_argument("--log", action="store_true", help="log-spaced grid")
    p_sweep.add_argument("--estimators", default=None,
                         help="comma list from unbiased,biased,nu_opt")
    p_sweep.add_argument("--metric", default=None, choices=list(
        ("average_nmse", "total_normalized_mse", "highest_affinity_nmse")))

    sub.add_parser("kpr", parents=[shared],
                   help="proofreading-vs-binning distribution table")
    sub.add_parser("crn", parents=[shared],
                   help="reaction-network trajectory to steady state")
    sub.add_parser("optimize-nu", parents=[shared],
                   help="threshold-scale optimization")
    return parser


_COMMANDS = {
    "simulate": _cmd_simulate,
    "estimate": _cmd_estimate,
    "crlb": _cmd_crlb,
    "sweep": _cmd_sweep,
    "kpr": _cmd_kpr,
    "crn": _cmd_crn,
    "optimize-nu": _cmd_optimize_nu,
}


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        print("run 'ligandsense --help' for usage", file=sys.stderr)
        return 1
    try:
        _COMMANDS[args.command](args)
    except _UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except LigandSenseError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
