"""Command-line front end.

Every subcommand reads a flat ``key = value`` config, writes plain-text
outputs into ``--out`` next to the resolved config, and exits 0 on
success, 1 on runtime or numerical failure and 2 on usage/config errors.
"""
from __future__ import annotations

import argparse
import math
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .config import ExperimentConfig, dump_config, load_config, parse_mode
from .errors import ConfigError, PQSError, UndefinedCoherenceError
from .harness import (
    analytic_trials,
    analyze_traces,
    planar_moments,
    run_calibration,
    scan_coherence,
    scan_window,
    simulate_trials,
)
from .io import read_stats, read_traces, write_report, write_scan, write_stats, write_traces
from .metrics import (
    DEFAULT_GRID,
    PhaseSensitivity,
    adjusted_gamma,
    align_coherence,
    metrics_report,
    pcss_reference,
    phase_grid,
    sss_reference,
)
from .probe import NO_ATOMS, WITH_ATOMS

RESOLVED_CONFIG = "config.resolved.txt"


def _positive_int(text):
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return v


def _nonneg_int(text):
    v = int(text)
    if v < 0:
        raise argparse.ArgumentTypeError(f"expected a non-negative integer, got {text}")
    return v


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, type=Path, help="flat key = value config file")
    common.add_argument("--out", type=Path, default=Path("."), help="output directory (default: .)")
    common.add_argument("--seed", type=_nonneg_int, help="override master_seed")
    common.add_argument("--mode", choices=("raw", "subtracted"), help="read-out noise handling")
    common.add_argument("--grid", type=_positive_int, default=DEFAULT_GRID, help="phase grid points")
    common.add_argument("--workers", type=_positive_int, default=1, help="worker processes for trials")

    parser = argparse.ArgumentParser(prog="pqsim", description="Planar quantum squeezing Monte Carlo.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = sub.add_parser("simulate", parents=[common], help="simulate trials, then analyze them")
    p.add_argument("--analytic", action="store_true", help="propagate covariances instead of sampling")
    sub.add_parser("calibrate", parents=[common], help="read-out noise from traces without atoms")
    p = sub.add_parser("analyze", parents=[common], help="estimate statistics from trace CSVs")
    p.add_argument("traces", nargs="+", type=Path, help="trace CSV files")
    p = sub.add_parser("metrics", parents=[common], help="figures of merit from a statistics file")
    p.add_argument("--stats", required=True, type=Path)
    for name, what in (("scan-coherence", "atom numbers"), ("scan-window", "window lengths in us")):
        p = sub.add_parser(name, parents=[common], help=f"scan over {what}")
        p.add_argument("--values", help=f"comma-separated {what} (default: from config)")
        p.add_argument("--analytic", action="store_true")
    p = sub.add_parser("phase-curve", parents=[common], help="phase sensitivity against references")
    p.add_argument("--stats", type=Path, help="statistics file (default: analytic prediction)")
    return parser


def _resolve_config(args) -> ExperimentConfig:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = replace(cfg, master_seed=args.seed)
    if args.mode is not None:
        cfg = replace(cfg, mode=parse_mode(args.mode))
    return cfg


def _prepare_out(args, cfg) -> Path:
    out = args.out
    out.mkdir(parents=True, exist_ok=True)
    (out / RESOLVED_CONFIG).write_text(dump_config(cfg))
    return out


def _write_analysis(out, stats, report):
    write_stats(out / "stats.txt", stats)
    write_report(out / "metrics.txt", report)
    print(f"xi_par_sq = {report.xi_par_sq:.4g}  xi_e_sq = {report.xi_e_sq:.4g}  "
          f"entangled = {'yes' if report.entangled else 'no'}")


def cmd_simulate(args, cfg):
    out = _prepare_out(args, cfg)
    if args.analytic:
        stats, report = analytic_trials(cfg, grid=args.grid)
        _write_analysis(out, stats, report)
        return
    atoms, empty = simulate_trials(cfg, workers=args.workers)
    path = out / "traces.csv"
    write_traces(path, atoms + empty)
    # analyze what was written so that `analyze traces.csv` reproduces this output
    traces = read_traces(path, cfg.t_e)
    result = analyze_traces(cfg, *_split(traces), grid=args.grid)
    _write_analysis(out, result.stats, result.report)


def _split(traces):
    return [t for t in traces if t.label == WITH_ATOMS], [t for t in traces if t.label == NO_ATOMS]


def cmd_analyze(args, cfg):
    traces = []
    for path in args.traces:
        traces += read_traces(path, cfg.t_e)
    keys = [(t.label, t.trial) for t in traces]
    if len(set(keys)) != len(keys):
        raise PQSError("the same (label, trial) appears in more than one trace file")
    atoms, empty = _split(traces)
    if len(atoms) < 2:
        raise PQSError("need traces with atoms from at least 2 trials")
    out = _prepare_out(args, cfg)
    result = analyze_traces(cfg, atoms, empty, grid=args.grid)
    _write_analysis(out, result.stats, result.report)


def cmd_calibrate(args, cfg):
    out = _prepare_out(args, cfg)
    gamma0 = run_calibration(cfg, workers=args.workers)
    lines = ["# read-out noise of the second-window estimate; spins^2; order y, z", "gamma_zero:"]
    lines += ["  " + " ".join(f"{x:.9g}" for x in row) for row in gamma0]
    (out / "calibration.txt").write_text("\n".join(lines) + "\n")
    print(f"gamma_zero diagonal = {gamma0[0, 0]:.4g}, {gamma0[1, 1]:.4g} spins^2")


def _report_from_stats(cfg, stats, grid):
    return metrics_report(
        planar_moments(cfg, stats.mean_f1), stats.gamma_cond, stats.gamma_zero, cfg.mode,
        std_err=stats.std_err, trace_std_err=stats.trace_std_err, grid=grid,
    )


def cmd_metrics(args, cfg):
    stats = read_stats(args.stats)
    report = _report_from_stats(cfg, stats, args.grid)
    out = _prepare_out(args, cfg)
    write_report(out / "metrics.txt", report)
    print(f"xi_par_sq = {report.xi_par_sq:.4g}  xi_e_sq = {report.xi_e_sq:.4g}")


def _scan_values(args, cfg, axis):
    if args.values:
        try:
            vals = [float(s) for s in args.values.split(",") if s.strip()]
        except ValueError:
            raise ConfigError(f"bad --values list {args.values!r}") from None
        if axis == "window":
            vals = [v * 1e-6 for v in vals]
    else:
        vals = list(cfg.scan_n_atoms if axis == "n_atoms" else cfg.scan_window)
    if not vals:
        raise ConfigError(f"no scan values: pass --values or set scan_{'n_atoms' if axis == 'n_atoms' else 'window_us'}")
    if axis == "window":
        replace(cfg, scan_window=tuple(vals))  # validates multiples of the pulse period
    return vals


def cmd_scan_coherence(args, cfg):
    vals = _scan_values(args, cfg, "n_atoms")
    out = _prepare_out(args, cfg)
    result = scan_coherence(cfg, vals, workers=args.workers, analytic=args.analytic, grid=args.grid)
    write_scan(out / "scan_coherence.csv", result)


def cmd_scan_window(args, cfg):
    vals = _scan_values(args, cfg, "window")
    out = _prepare_out(args, cfg)
    result = scan_window(cfg, vals, workers=args.workers, analytic=args.analytic, grid=args.grid)
    write_scan(out / "scan_window.csv", result)


def phase_table(cfg: ExperimentConfig, stats, grid: int = DEFAULT_GRID) -> np.ndarray:
    """Rows (phi, PQS, PCSS, SSS, dB_PQS, dB_SSS); dB relative to the PCSS, NaN where divergent."""
    moments = planar_moments(cfg, stats.mean_f1)
    if not moments.f_par > 0:
        raise UndefinedCoherenceError("zero in-plane coherence")
    g = adjusted_gamma(moments, stats.gamma_cond, stats.gamma_zero, cfg.mode)
    aligned, ga = align_coherence(moments, g)
    phis = phase_grid(grid)
    pqs = PhaseSensitivity(aligned, ga).curve(phis)
    pcss = pcss_reference(cfg.n_atoms).curve(phis)
    sss = sss_reference(cfg.n_atoms, cfg.sss_g, cfg.probe_photons, cfg.eta_sc).curve(phis)
    with np.errstate(divide="ignore", invalid="ignore"):
        db_pqs = -10 * np.log10(pqs / pcss)
        db_sss = -10 * np.log10(sss / pcss)
    return np.column_stack((phis, pqs, pcss, sss, db_pqs, db_sss))


def _cell(v, fmt):
    return format(v, fmt) if math.isfinite(v) else ""


def cmd_phase_curve(args, cfg):
    stats = read_stats(args.stats) if args.stats else analytic_trials(cfg, grid=1)[0]
    table = phase_table(cfg, stats, args.grid)
    out = _prepare_out(args, cfg)
    lines = ["phi_rad,dphi2_pqs_rad2,dphi2_pcss_rad2,dphi2_sss_rad2,db_pqs,db_sss"]
    for row in table:
        lines.append(",".join([f"{row[0]:.6g}"] + [_cell(v, ".6g") for v in row[1:4]]
                              + [_cell(v, ".4g") for v in row[4:]]))
    (out / "phase_curve.csv").write_text("\n".join(lines) + "\n")
    i = int(np.nanargmin(table[:, 1]))
    print(f"min dphi = {math.sqrt(table[i, 1]):.4g} rad at phi = {table[i, 0]:.4g} rad")


COMMANDS = {
    "simulate": cmd_simulate,
    "calibrate": cmd_calibrate,
    "analyze": cmd_analyze,
    "metrics": cmd_metrics,
    "scan-coherence": cmd_scan_coherence,
    "scan-window": cmd_scan_window,
    "phase-curve": cmd_phase_curve,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = _resolve_config(args)
    except ConfigError as exc:
        print(f"pqsim: error: {exc}", file=sys.stderr)
        return 2
    try:
        COMMANDS[args.command](args, cfg)
    except ConfigError as exc:
        print(f"pqsim: error: {exc}", file=sys.stderr)
        return 2
    except (PQSError, ValueError, ArithmeticError, np.linalg.LinAlgError, OSError) as exc:
        print(f"pqsim: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
