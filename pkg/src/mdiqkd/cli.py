"""Command-line entry point wiring configs to simulations and reports.

Subcommands: ``keyrate``, ``simulate``, ``sweep``, ``optimize``, ``drift``.
Every run writes a ``manifest.json`` into its output directory recording
the command, arguments, seed, config and tool version; all randomness is
explicitly seeded (default seed 7) so reruns are byte-identical on the
delimited outputs.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .decoy import InsufficientDataError, finite_key_pipeline
from .drift import run_drift_timeline
from .model import analytic_gain_table
from .montecarlo import read_tally_csv, simulate_slots, write_tally_csv
from .optimize import OptimizationProblem, optimize, sweep_rate_vs_loss
from .params import ConfigError, load_config, load_preset
from .decoy import asymptotic_report
from . import report as rpt

DEFAULT_SEED = 7


def _load_params(args):
    if getattr(args, "config", None):
        return load_config(args.config)
    return load_preset("paper-200km")


def _prepare_out(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _manifest(args, out: Path, command: str):
    arguments = {
        k: v for k, v in vars(args).items() if k not in ("func", "config", "out", "command")
    }
    rpt.write_manifest(
        out, command, arguments,
        seed=getattr(args, "seed", None),
        config_path=getattr(args, "config", None),
        version=__version__,
    )


def cmd_keyrate(args) -> int:
    """Evaluate the secure key rate at one loss point."""
    params = _load_params(args)
    if args.loss_db is not None:
        params = params.with_total_loss_db(args.loss_db)
    out = _prepare_out(args)
    if args.tallies is not None:
        tallies = read_tally_csv(args.tallies)
        report = finite_key_pipeline(tallies, params, epsilon_total=args.epsilon)
    elif args.regime == "asymptotic":
        table = analytic_gain_table(params)
        report = asymptotic_report(table, params)
    else:
        tallies = simulate_slots(params, args.slots, args.seed, workers=args.workers)
        write_tally_csv(tallies, out / "tallies.csv")
        report = finite_key_pipeline(tallies, params, epsilon_total=args.epsilon)
    rpt.write_keyrate_csv(report, out / "keyrate.csv")
    rpt.write_keyrate_text(report, out / "keyrate.txt")
    _manifest(args, out, "keyrate")
    print(
        f"keyrate [{report.regime}] loss={params.total_loss_db:g} dB: "
        f"{report.rate_per_pulse:.6e} per pulse, {report.rate_per_second:.6g} bit/s"
    )
    return 0


def cmd_simulate(args) -> int:
    """Run the optical layer and analyze the observed tallies."""
    params = _load_params(args)
    if args.loss_db is not None:
        params = params.with_total_loss_db(args.loss_db)
    out = _prepare_out(args)
    tallies = simulate_slots(params, args.slots, args.seed, workers=args.workers)
    write_tally_csv(tallies, out / "tallies.csv")
    report = finite_key_pipeline(tallies, params, epsilon_total=args.epsilon)
    rpt.write_keyrate_csv(report, out / "keyrate.csv")
    rpt.write_keyrate_text(report, out / "keyrate.txt")
    _manifest(args, out, "simulate")
    print(
        f"simulate: {args.slots} slots, seed {args.seed} -> "
        f"{int(tallies.success.sum())} coincidences, "
        f"finite-key rate {report.rate_per_second:.6g} bit/s"
    )
    return 0


def cmd_sweep(args) -> int:
    """Rate-vs-loss curves (estimated and perfect-estimation limits)."""
    params = _load_params(args)
    out = _prepare_out(args)
    losses = np.linspace(args.loss_min, args.loss_max, args.points)
    regimes = ["vacuum_weak", "infinite_decoy"]
    if args.session_slots:
        regimes.append("finite_key")
    curve = sweep_rate_vs_loss(
        params, losses, regimes=tuple(regimes),
        session_slots=args.session_slots, epsilon_total=args.epsilon,
    )
    rpt.write_curve_csv(curve, out / "curve.csv")
    styles = {"vacuum_weak": "-", "infinite_decoy": "--", "finite_key": ":"}
    series = [
        {"label": regime.replace("_", " "), "csv": "curve.csv",
         "x_col": "loss_db", "y_col": "rate_per_second",
         "style": styles[regime], "where": {"regime": regime}}
        for regime in regimes
    ]
    rpt.write_plot_spec(
        out / "curve_plot.json",
        title="Secure key rate vs channel loss",
        x="total channel loss (dB)", y="secure key rate (bit/s)",
        series=series,
    )
    if not args.no_figures:
        rpt.render_plot_spec(out / "curve_plot.json", out / "curve.png")
    with open(out / "sweep_summary.txt", "w") as fh:
        for regime in regimes:
            cut = curve.cutoffs.get(regime)
            fh.write(f"cutoff_{regime} = {cut if cut is not None else 'none'}\n")
    _manifest(args, out, "sweep")
    print(f"sweep: {args.points} points over [{args.loss_min}, {args.loss_max}] dB -> {out}")
    return 0


def cmd_optimize(args) -> int:
    """Search source intensities/probabilities for the best rate."""
    params = _load_params(args)
    problem = OptimizationProblem(
        params=params,
        loss_db=args.loss_db,
        objective=args.objective,
        session_slots=args.session_slots or 1e12,
        epsilon_total=args.epsilon,
        optimize_basis_prob=args.optimize_basis_prob,
        rounds=args.rounds,
    )
    result = optimize(problem)
    out = _prepare_out(args)
    with open(out / "optimized.txt", "w") as fh:
        for key, value in result.vector.items():
            fh.write(f"{key} = {value!r}\n")
        fh.write(f"rate_per_pulse = {result.rate_per_pulse!r}\n")
        fh.write(f"rate_per_second = {result.rate_per_second!r}\n")
        fh.write(f"flags = {';'.join(result.flags)}\n")
    import csv as _csv

    with open(out / "trace.csv", "w", newline="") as fh:
        writer = _csv.writer(fh)
        writer.writerow(("round", "variable", "value", "rate_per_pulse"))
        for rnd, var, value, rate in result.trace:
            writer.writerow((rnd, var, repr(value), repr(rate)))
    _manifest(args, out, "optimize")
    print(
        f"optimize [{args.objective}]: rate {result.rate_per_second:.6g} bit/s at "
        + ", ".join(f"{k}={v:.4g}" for k, v in result.vector.items())
    )
    return 0


def cmd_drift(args) -> int:
    """Simulate drift and feedback over a long run."""
    params = _load_params(args)
    cfg = params.drift
    overrides = {}
    for loop in ("timing", "polarization", "phase"):
        if getattr(args, f"disable_{loop}"):
            overrides[f"{loop}_enabled"] = False
    if overrides:
        from dataclasses import replace

        cfg = replace(cfg, **overrides)
    timeline = run_drift_timeline(
        params, duration_s=args.hours * 3600.0, dt=args.dt, seed=args.seed,
        config=cfg, stride=args.stride,
    )
    out = _prepare_out(args)
    rpt.write_drift_csv(timeline, out / "drift.csv")
    with open(out / "drift_summary.txt", "w") as fh:
        for key, value in timeline.summary.items():
            fh.write(f"{key} = {value}\n")
    rpt.write_plot_spec(
        out / "drift_plot.json",
        title="Drift and feedback time series",
        x="time (s)", y="effective X misalignment",
        series=[{"label": "x misalignment", "csv": "drift.csv",
                 "x_col": "time_s", "y_col": "x_misalignment_eff", "style": "-"}],
        log_y=False,
    )
    if not args.no_figures:
        rpt.render_plot_spec(out / "drift_plot.json", out / "drift.png")
    _manifest(args, out, "drift")
    print(
        "drift: {steps} steps, timing within 20 ps {t:.2%}, power within 3% {p:.2%}".format(
            steps=timeline.summary["steps"],
            t=timeline.summary["frac_timing_within_20ps"],
            p=timeline.summary["frac_power_within_3pct"],
        )
    )
    return 0


def cmd_rerun(args) -> int:
    """Re-run the invocation recorded in a manifest (byte-identical outputs)."""
    manifest = rpt.read_manifest(args.manifest)
    argv = [manifest["command"]]
    if manifest.get("config"):
        argv += ["--config", manifest["config"]]
    for key, value in manifest["arguments"].items():
        flag = "--" + key.replace("_", "-")
        if value is None:
            continue
        if isinstance(value, bool):
            if value:
                argv.append(flag)
            continue
        argv += [flag, str(value)]
    argv += ["--out", str(args.out)]
    return main(argv)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mdiqkd",
        description="Time-bin MDI-QKD link simulator and decoy-state analysis toolkit",
    )
    parser.add_argument("--version", action="version", version=f"mdiqkd {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, slots_default=None):
        p.add_argument("--config", type=Path, default=None,
                       help="TOML config (default: bundled paper-200km preset)")
        p.add_argument("--out", type=Path, default=Path("mdiqkd-out"),
                       help="output directory")
        p.add_argument("--seed", type=int, default=DEFAULT_SEED)
        p.add_argument("--epsilon", type=float, default=1e-10,
                       help="total failure-probability budget for finite-key analysis")
        if slots_default is not None:
            p.add_argument("--slots", type=int, default=slots_default,
                           help="number of pulse-pair slots to simulate")
            p.add_argument("--workers", type=int, default=1)

    p = sub.add_parser("keyrate", help="secure key rate at one loss point")
    common(p, slots_default=10_000_000)
    p.add_argument("--loss-db", type=float, default=None, help="total channel loss override")
    p.add_argument("--regime", choices=("asymptotic", "finite"), default="asymptotic")
    p.add_argument("--tallies", type=Path, default=None,
                   help="analyze an existing tally CSV instead of simulating")
    p.set_defaults(func=cmd_keyrate)

    p = sub.add_parser("simulate", help="sample the optical layer and analyze tallies")
    common(p, slots_default=10_000_000)
    p.add_argument("--loss-db", type=float, default=None)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("sweep", help="rate-vs-loss curves")
    common(p)
    p.add_argument("--loss-min", type=float, default=0.0)
    p.add_argument("--loss-max", type=float, default=45.0)
    p.add_argument("--points", type=int, default=46)
    p.add_argument("--session-slots", type=float, default=None,
                   help="add a finite-key curve for this session size")
    p.add_argument("--no-figures", action="store_true")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("optimize", help="optimize source settings at a loss point")
    common(p)
    p.add_argument("--loss-db", type=float, default=None)
    p.add_argument("--objective", choices=("asymptotic", "finite_key"), default="asymptotic")
    p.add_argument("--session-slots", type=float, default=None)
    p.add_argument("--rounds", type=int, default=3)
    p.add_argument("--optimize-basis-prob", action="store_true")
    p.set_defaults(func=cmd_optimize)

    p = sub.add_parser("rerun", help="repeat a recorded run from its manifest")
    p.add_argument("--manifest", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=cmd_rerun)

    p = sub.add_parser("drift", help="drift and feedback time series")
    common(p)
    p.add_argument("--hours", type=float, default=1.0)
    p.add_argument("--dt", type=float, default=1.0)
    p.add_argument("--stride", type=int, default=1, help="CSV sampling stride")
    p.add_argument("--disable-timing", action="store_true")
    p.add_argument("--disable-polarization", action="store_true")
    p.add_argument("--disable-phase", action="store_true")
    p.add_argument("--no-figures", action="store_true")
    p.set_defaults(func=cmd_drift)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, InsufficientDataError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
