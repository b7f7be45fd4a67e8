"""Plain-text persistence for traces, statistics, reports and scans.

Floats are written with 9 significant digits in trace and statistics files,
which is enough for the estimator to reproduce results computed from the
written values exactly (writers round before analysis, see the CLI).
"""
from __future__ import annotations

import csv
import io as _io
import math
from collections import defaultdict
from pathlib import Path

import numpy as np

from .errors import TraceParseError
from .fid import ConditionalStats
from .metrics import MetricsReport
from .probe import LABELS, Trace

TRACE_HEADER = ("t_us", "phi_rad", "n_photons", "label", "trial")
STATS_MATRICES = ("gamma_f1", "gamma_f2", "gamma_cross", "gamma_cond", "gamma_zero", "std_err")
STATS_VECTORS = ("mean_f1", "mean_f2")


def _g9(v: float) -> str:
    return f"{v:.9g}"


def _blank_nan(v: float, fmt: str = ".9g") -> str:
    return "" if not math.isfinite(v) else format(v, fmt)


# ---------------------------------------------------------------------------
# traces
# ---------------------------------------------------------------------------


def round_trace(trace: Trace) -> Trace:
    """The trace exactly as it reads back from a trace CSV."""
    t_us = np.array([float(_g9(v * 1e6)) for v in trace.t])
    return Trace(
        t_us * 1e-6,
        [float(_g9(v)) for v in trace.phi],
        [float(_g9(v)) for v in trace.n_photons],
        trace.t_e,
        trace.label,
        trace.trial,
        trace.trial_seed,
    )


def format_traces(traces) -> str:
    buf = _io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(TRACE_HEADER)
    for tr in traces:
        for t, phi, n in zip(tr.t, tr.phi, tr.n_photons):
            w.writerow((_g9(t * 1e6), _g9(phi), _g9(n), tr.label, tr.trial))
    return buf.getvalue()


def write_traces(path, traces) -> None:
    Path(path).write_text(format_traces(traces))


def read_traces(path, t_e: float) -> list[Trace]:
    """Read a trace CSV; rows may come in any order.

    Traces are keyed by (label, trial) and returned sorted by label then
    trial, with samples sorted by time.
    """
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise TraceParseError(path, 0, exc.strerror or str(exc)) from None
    lines = text.splitlines()
    if not lines:
        raise TraceParseError(path, 1, "empty file")
    header = tuple(s.strip() for s in lines[0].split(","))
    if header != TRACE_HEADER:
        raise TraceParseError(path, 1, f"expected header {','.join(TRACE_HEADER)}")
    rows = defaultdict(list)
    for lineno, line in enumerate(lines[1:], 2):
        if not line.strip():
            continue
        parts = line.split(",")
        if len(parts) != len(TRACE_HEADER):
            raise TraceParseError(path, lineno, f"expected {len(TRACE_HEADER)} fields, got {len(parts)}")
        try:
            t_us, phi, n = (float(p) for p in parts[:3])
            trial = int(parts[4])
        except ValueError as exc:
            raise TraceParseError(path, lineno, str(exc)) from None
        label = parts[3].strip()
        if label not in LABELS:
            raise TraceParseError(path, lineno, f"unknown label {label!r}")
        if not all(map(math.isfinite, (t_us, phi, n))):
            raise TraceParseError(path, lineno, "non-finite value")
        rows[(label, trial)].append((t_us * 1e-6, phi, n, lineno))
    traces = []
    for (label, trial) in sorted(rows, key=lambda k: (LABELS.index(k[0]), k[1])):
        data = sorted(rows[(label, trial)])
        t = np.array([r[0] for r in data])
        dup = np.flatnonzero(np.diff(t) <= 0)
        if dup.size:
            raise TraceParseError(path, data[dup[0] + 1][3], f"duplicate time in {label} trial {trial}")
        traces.append(Trace(t, [r[1] for r in data], [r[2] for r in data], t_e, label, trial))
    return traces


# ---------------------------------------------------------------------------
# conditional statistics
# ---------------------------------------------------------------------------


def format_stats(stats: ConditionalStats) -> str:
    lines = ["# conditional statistics; units spins (vectors), spins^2 (matrices); order y, z",
             f"n_trials: {stats.n_trials}"]
    for name in STATS_VECTORS:
        v = getattr(stats, name)
        lines.append(f"{name}: {_g9(v[0])} {_g9(v[1])}")
    for name in STATS_MATRICES:
        m = np.asarray(getattr(stats, name))
        lines.append(f"{name}:")
        for row in m:
            lines.append("  " + " ".join(_g9(x) for x in row))
    lines.append(f"trace_std_err: {_g9(stats.trace_std_err)}")
    return "\n".join(lines) + "\n"


def write_stats(path, stats: ConditionalStats) -> None:
    Path(path).write_text(format_stats(stats))


def read_stats(path) -> ConditionalStats:
    path = Path(path)
    try:
        lines = path.read_text().splitlines()
    except OSError as exc:
        raise TraceParseError(path, 0, exc.strerror or str(exc)) from None
    values: dict = {}
    current, rows = None, []
    for lineno, raw in enumerate(lines, 1):
        line = raw.split("#", 1)[0].rstrip()
        if not line:
            continue
        try:
            if line.startswith(" "):
                if current is None:
                    raise ValueError("matrix row outside a matrix")
                rows.append([float(x) for x in line.split()])
                if len(rows) == 2:
                    values[current] = np.array(rows)
                    current, rows = None, []
                continue
            if current is not None:
                raise ValueError(f"incomplete matrix {current}")
            key, _, rest = (s.strip() for s in line.partition(":"))
            if key in STATS_MATRICES and not rest:
                current = key
            elif key in STATS_VECTORS:
                values[key] = np.array([float(x) for x in rest.split()])
            elif key == "n_trials":
                values[key] = int(rest)
            elif key == "trace_std_err":
                values[key] = float(rest)
            else:
                raise ValueError(f"unknown entry {key!r}")
        except ValueError as exc:
            raise TraceParseError(path, lineno, str(exc)) from None
    missing = [k for k in ("n_trials", *STATS_VECTORS, *STATS_MATRICES) if k not in values]
    if missing:
        raise TraceParseError(path, len(lines), f"missing {', '.join(missing)}")
    return ConditionalStats(
        gamma_f1=values["gamma_f1"],
        gamma_f2=values["gamma_f2"],
        gamma_cross=values["gamma_cross"],
        gamma_cond=values["gamma_cond"],
        gamma_zero=values["gamma_zero"],
        residuals=np.empty((0, 2)),
        std_err=values["std_err"],
        n_trials=values["n_trials"],
        mean_f1=values["mean_f1"],
        mean_f2=values["mean_f2"],
        trace_std_err=values.get("trace_std_err", math.nan),
    )


# ---------------------------------------------------------------------------
# metrics and scans
# ---------------------------------------------------------------------------

_REPORT_ROWS = (
    ("xi_par_sq", "xi_par_sq_se"),
    ("xi_y_sq", "xi_y_sq_se"),
    ("xi_z_sq", "xi_z_sq_se"),
    ("xi_e_sq", "xi_e_sq_se"),
    ("xi_m_sq", "xi_m_sq_se"),
)


def format_report(report: MetricsReport) -> str:
    lines = [f"# figures of merit; subtraction mode {report.subtraction_mode}",
             f"mode: {report.subtraction_mode}"]
    for key, se in _REPORT_ROWS:
        val, err = getattr(report, key), getattr(report, se)
        lines.append(f"{key}: {val:.4g} +/- {err:.2g}" if math.isfinite(err) else f"{key}: {val:.4g}")
    lines += [
        f"entangled: {'yes' if report.entangled else 'no'}",
        f"f_par_spins: {report.f_par:.4g}",
        f"n_tilde_spins: {report.n_tilde:.4g}",
        f"sql_rad2: {report.sql:.4g}",
        f"min_phase_variance_rad2: {report.min_phase_variance:.4g}",
        f"min_phase_delta_rad: {math.sqrt(report.min_phase_variance):.4g}",
        f"min_phase_phi_rad: {report.min_phase_phi:.4g}",
        f"min_phase_ratio_to_sql: {report.min_phase_variance / report.sql:.4g}",
        "",
        "# phase curve (aligned coherence)",
        "phi_rad,dphi2_rad2,db_vs_pcss",
    ]
    for (phi, v), (_, db) in zip(report.phase_curve, report.enhancement_db):
        lines.append(f"{phi:.6g},{_blank_nan(v, '.6g')},{_blank_nan(db, '.4g')}")
    return "\n".join(lines) + "\n"


def write_report(path, report: MetricsReport) -> None:
    Path(path).write_text(format_report(report))


def read_report_values(path) -> dict[str, str]:
    """``key: value`` header of a report file as strings."""
    out = {}
    for line in Path(path).read_text().splitlines():
        if not line or line.startswith("#"):
            continue
        if ":" not in line:
            break
        k, _, v = line.partition(":")
        out[k.strip()] = v.strip()
    return out


def format_scan(result) -> str:
    unit = {"n_atoms": ("n_atoms", 1.0), "window": ("window_us", 1e6)}[result.axis]
    lines = [f"{unit[0]},f_par_spins,xi_par_sq,stderr,trace_gamma_cond_spins2,trace_stderr"]
    for v, s, r in zip(result.values, result.stats, result.reports):
        tr = float(np.trace(s.gamma_cond))
        lines.append(",".join((
            _g9(v * unit[1]), _g9(r.f_par), _g9(r.xi_par_sq), _blank_nan(r.xi_par_sq_se),
            _g9(tr), _blank_nan(s.trace_std_err),
        )))
    return "\n".join(lines) + "\n"


def write_scan(path, result) -> None:
    Path(path).write_text(format_scan(result))
