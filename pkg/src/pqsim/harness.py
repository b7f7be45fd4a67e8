"""Monte Carlo orchestration: trials, calibration and scans.

Per-trial random streams are derived from (master_seed, label, n_atoms,
window, trial index) so that a trial's record does not depend on how many
other trials run, in which order, or on how many worker processes share
the work.
"""
from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .config import ExperimentConfig
from .fid import (
    ClassicalParams,
    ConditionalStats,
    conditional_covariance,
    design_matrix,
    estimate_window,
    fit_classical_params,
    readout_noise,
)
from .metrics import (
    DEFAULT_GRID,
    MetricsReport,
    PlanarMoments,
    metrics_report,
    remaining_atoms,
)
from .probe import NO_ATOMS, WITH_ATOMS, Trace, prepare_state, simulate_trace
from .spin import rotation_x

_LABEL_CODE = {WITH_ATOMS: 0, NO_ATOMS: 1}


def trial_seeds(cfg: ExperimentConfig, trial: int, label: str) -> tuple[int, int]:
    """(technical-noise seed, trace seed) for one trial."""
    n_key = int(round(cfg.n_atoms)) if label == WITH_ATOMS else 0
    w_key = int(round(cfg.window * 1e9))
    ss = np.random.SeedSequence([cfg.master_seed, _LABEL_CODE[label], n_key, w_key, trial])
    words = ss.generate_state(4, np.uint64)
    return int(words[0]), int(words[1])


def simulate_one(cfg: ExperimentConfig, trial: int, label: str = WITH_ATOMS) -> Trace:
    tech_seed, trace_seed = trial_seeds(cfg, trial, label)
    n_atoms = cfg.n_atoms if label == WITH_ATOMS else 0.0
    dw = 0.0
    if cfg.n_atoms_jitter or cfg.larmor_jitter:
        rng = np.random.default_rng(tech_seed)
        z_n, z_w = rng.standard_normal(2)
        if n_atoms > 0:
            n_atoms = max(0.0, n_atoms * (1.0 + cfg.n_atoms_jitter * z_n))
        dw = cfg.larmor_jitter * z_w
    trace, _ = simulate_trace(
        prepare_state(n_atoms, cfg.pulse), cfg.pulse, 2 * cfg.window, cfg.t_e, trace_seed,
        t_start=cfg.t_start, label=label, trial=trial, larmor_offset=dw,
    )
    return trace


def _simulate_task(args):
    return simulate_one(*args)


def _map(tasks, workers):
    if workers is None or workers <= 1 or len(tasks) < 2:
        return [_simulate_task(t) for t in tasks]
    chunk = max(1, len(tasks) // (4 * workers))
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_simulate_task, tasks, chunksize=chunk))


def simulate_trials(cfg: ExperimentConfig, workers: int = 1, calibration: bool = True):
    """Simulate ``cfg.trials`` traces with atoms and, optionally, as many without."""
    tasks = [(cfg, i, WITH_ATOMS) for i in range(cfg.trials)]
    if calibration:
        tasks += [(cfg, i, NO_ATOMS) for i in range(cfg.trials)]
    traces = _map(tasks, workers)
    atoms = [t for t in traces if t.label == WITH_ATOMS]
    empty = [t for t in traces if t.label == NO_ATOMS]
    return atoms, empty


def nominal_params(cfg: ExperimentConfig) -> ClassicalParams:
    p = cfg.pulse
    return ClassicalParams(g=p.g, larmor_omega=p.larmor_omega, t2=p.t2, phi0=p.phi0)


def windows(cfg: ExperimentConfig):
    """(M1, M2) as half-open intervals around ``t_e``."""
    return (cfg.t_e - cfg.window, cfg.t_e), (cfg.t_e, cfg.t_e + cfg.window)


@dataclass(frozen=True, eq=False)
class Analysis:
    stats: ConditionalStats
    report: MetricsReport
    params: ClassicalParams


def planar_moments(cfg: ExperimentConfig, mean_f1) -> PlanarMoments:
    """Moments at t_e with the coherence taken from the mean M1 estimate."""
    n_tilde = remaining_atoms(cfg.n_atoms, cfg.eta_sc, cfg.p_return)
    return PlanarMoments(float(mean_f1[0]), float(mean_f1[1]), 0.0, 0.0, 0.0, cfg.n_atoms, n_tilde)


def analyze_traces(
    cfg: ExperimentConfig,
    atom_traces,
    no_atom_traces=(),
    envelope: str = "literal",
    grid: int = DEFAULT_GRID,
) -> Analysis:
    """Fit, estimate both windows per trial, and reduce to statistics."""
    atom_traces = sorted(atom_traces, key=lambda t: t.trial)
    no_atom_traces = sorted(no_atom_traces, key=lambda t: t.trial)
    params = fit_classical_params(atom_traces, cfg.pulse.g, initial=nominal_params(cfg), envelope=envelope)
    m1, m2 = windows(cfg)
    pairs = [
        (estimate_window(tr, m1, cfg.t_e, params, envelope).vector,
         estimate_window(tr, m2, cfg.t_e, params, envelope).vector)
        for tr in atom_traces
    ]
    stats = conditional_covariance(pairs)
    if len(no_atom_traces) >= 2:
        stats = replace(stats, gamma_zero=readout_noise(no_atom_traces, m2, cfg.t_e, params, envelope))
    report = _report(cfg, stats, grid)
    return Analysis(stats, report, params)


def _report(cfg, stats, grid):
    return metrics_report(
        planar_moments(cfg, stats.mean_f1), stats.gamma_cond, stats.gamma_zero, cfg.mode,
        std_err=stats.std_err, trace_std_err=stats.trace_std_err, grid=grid,
    )


def run_trials(
    cfg: ExperimentConfig, workers: int = 1, analytic: bool = False, grid: int = DEFAULT_GRID
) -> tuple[ConditionalStats, MetricsReport]:
    """End-to-end experiment: simulate, fit, estimate, reduce, score."""
    if analytic:
        return analytic_trials(cfg, grid=grid)
    atoms, empty = simulate_trials(cfg, workers)
    result = analyze_traces(cfg, atoms, empty, grid=grid)
    return result.stats, result.report


def run_calibration(cfg: ExperimentConfig, params: ClassicalParams | None = None, workers: int = 1) -> np.ndarray:
    """Read-out covariance of the M2 estimate from traces without atoms."""
    tasks = [(cfg, i, NO_ATOMS) for i in range(cfg.trials)]
    traces = _map(tasks, workers)
    params = params or nominal_params(cfg)
    return readout_noise(traces, windows(cfg)[1], cfg.t_e, params)


# ---------------------------------------------------------------------------
# analytic fast path
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class AnalyticMoments:
    """Exact first and second moments of the window estimates.

    ``epoch_cov`` is the planar covariance of the spin at t_e and
    ``epoch_cond_cov`` its covariance conditioned on the M1 estimate.
    """

    mean_f1: np.ndarray
    mean_f2: np.ndarray
    gamma_f1: np.ndarray
    gamma_f2: np.ndarray
    gamma_cross: np.ndarray
    gamma_zero: np.ndarray
    epoch_mean: np.ndarray
    epoch_cov: np.ndarray
    epoch_cond_cov: np.ndarray
    record_cov: np.ndarray = field(repr=False)


def _ls_operator(h, w):
    normal = h.T @ (w[:, None] * h)
    return np.linalg.solve(normal, (h * w[:, None]).T), np.linalg.inv(normal)


def analytic_moments(cfg: ExperimentConfig, params: ClassicalParams | None = None) -> AnalyticMoments:
    """Propagate covariances of the linear-Gaussian probe model exactly.

    The hidden spin obeys x_{k+1} = d R x_k + noise between pulses, with
    back-action noise built from the noise-free mean.  Estimation uses the
    true precession frequency and the decay time the decoherence channels
    produce, unless ``params`` is given.
    """
    p = cfg.pulse
    if p.poisson_photons or cfg.n_atoms_jitter or cfg.larmor_jitter:
        raise ValueError("analytic path does not model photon-number or technical jitter")
    if params is None:
        params = ClassicalParams(p.g, p.larmor_omega, p.effective_t2, p.phi0)
    n_w = cfg.pulses_per_window
    n = 2 * n_w
    t = cfg.t_start + (np.arange(n) + 0.5) * p.pulse_period
    d = p.decay_per_slot
    alpha = p.larmor_omega * p.pulse_period
    r = rotation_x(alpha)
    state = prepare_state(cfg.n_atoms, p)
    r0 = rotation_x(p.larmor_omega * 0.5 * p.pulse_period)
    m = r0 @ state.mean
    cov = r0 @ state.cov @ r0.T
    floor = (1.0 - d * d) * 0.5 * cfg.n_atoms * np.eye(3)
    var_theta = p.g**2 * p.n_photons_v / 4.0

    means = np.empty((n, 3))
    covs = np.empty((n, 3, 3))
    noise_at_epoch = None
    for k in range(n):
        means[k], covs[k] = m, cov
        v = np.array([-m[1], m[0], 0.0])
        q = d * d * var_theta * np.outer(v, v) + floor
        if k == n_w - 1:
            noise_at_epoch = (m.copy(), cov.copy(), q)
        m = d * (r @ m)
        cov = d * d * (r @ cov @ r.T) + r @ q @ r.T

    if p.noiseless:
        covs[:] = 0.0
        sigma2 = 0.0
        noise_at_epoch = (noise_at_epoch[0], np.zeros((3, 3)), np.zeros((3, 3)))
    else:
        sigma2 = 1.0 / p.n_photons_v

    # Cov(y_j, y_k), k >= j: g^2 d^(k-j) [R^(k-j) P_j]_zz
    sig = np.zeros((n, n))
    lags = np.arange(n)
    for j in range(n):
        mlag = lags[: n - j]
        row = -np.sin(mlag * alpha) * covs[j, 1, 2] + np.cos(mlag * alpha) * covs[j, 2, 2]
        sig[j, j:] = p.g**2 * d**mlag * row
    sig = np.triu(sig) + np.triu(sig, 1).T
    sig += sigma2 * np.eye(n)
    mean_y = p.g * means[:, 2]

    w = np.full(n_w, p.n_photons_v)
    s1, s2 = slice(0, n_w), slice(n_w, n)
    l1, _ = _ls_operator(design_matrix(t[s1], cfg.t_e, params), w)
    l2, c2 = _ls_operator(design_matrix(t[s2], cfg.t_e, params), w)
    gamma_f1 = l1 @ sig[s1, s1] @ l1.T
    gamma_f2 = l2 @ sig[s2, s2] @ l2.T
    gamma_cross = l2 @ sig[s2, s1] @ l1.T
    gamma_zero = sigma2 * p.n_photons_v * c2 if sigma2 else np.zeros((2, 2))

    # spin at t_e: last M1 slot's update, then precession up to t_e
    m_last, p_last, q_last = noise_at_epoch
    r_e = rotation_x(p.larmor_omega * (cfg.t_e - t[n_w - 1]))
    epoch_mean = d * (r_e @ m_last)
    epoch_cov = d * d * (r_e @ p_last @ r_e.T) + r_e @ q_last @ r_e.T
    # Cov(x_te, y_j) = g d R_e (d R)^(n_w-1-j) P_j e_z
    cross = np.empty((3, n_w))
    for j in range(n_w):
        lag = n_w - 1 - j
        cross[:, j] = p.g * d ** (lag + 1) * (r_e @ rotation_x(lag * alpha) @ covs[j][:, 2])
    c_ef = cross[1:, :] @ l1.T
    if np.allclose(gamma_f1, 0.0):
        cond = epoch_cov[1:, 1:].copy()
    else:
        cond = epoch_cov[1:, 1:] - c_ef @ np.linalg.solve(gamma_f1, c_ef.T)

    return AnalyticMoments(
        mean_f1=l1 @ mean_y[s1],
        mean_f2=l2 @ mean_y[s2],
        gamma_f1=_sym(gamma_f1),
        gamma_f2=_sym(gamma_f2),
        gamma_cross=gamma_cross,
        gamma_zero=_sym(gamma_zero),
        epoch_mean=epoch_mean[1:],
        epoch_cov=_sym(epoch_cov[1:, 1:]),
        epoch_cond_cov=_sym(cond),
        record_cov=sig,
    )


def _sym(a):
    return 0.5 * (a + a.T)


def analytic_trials(cfg: ExperimentConfig, grid: int = DEFAULT_GRID) -> tuple[ConditionalStats, MetricsReport]:
    """Statistics without sampling; standard errors are the Gaussian predictions for ``cfg.trials``."""
    am = analytic_moments(cfg)
    if np.allclose(am.gamma_f1, 0.0):
        gamma_cond = am.gamma_f2.copy()
    else:
        gamma_cond = am.gamma_f2 - am.gamma_cross @ np.linalg.solve(am.gamma_f1, am.gamma_cross.T)
    gamma_cond = _sym(gamma_cond)
    dof = cfg.trials - 1
    gd = np.diag(gamma_cond)
    std_err = np.sqrt((np.outer(gd, gd) + gamma_cond**2) / dof)
    trace_se = math.sqrt(2 * float(np.sum(gamma_cond**2)) / dof)
    stats = ConditionalStats(
        gamma_f1=am.gamma_f1,
        gamma_f2=am.gamma_f2,
        gamma_cross=am.gamma_cross,
        gamma_cond=gamma_cond,
        gamma_zero=am.gamma_zero,
        residuals=np.empty((0, 2)),
        std_err=std_err,
        n_trials=cfg.trials,
        mean_f1=am.mean_f1,
        mean_f2=am.mean_f2,
        trace_std_err=trace_se,
    )
    return stats, _report(cfg, stats, grid)


# ---------------------------------------------------------------------------
# scans
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ScanResult:
    axis: str
    values: tuple[float, ...]
    stats: tuple[ConditionalStats, ...]
    reports: tuple[MetricsReport, ...]


def _scan(cfgs, axis, values, workers, analytic, grid):
    stats, reports = [], []
    for c in cfgs:
        s, r = run_trials(c, workers=workers, analytic=analytic, grid=grid)
        stats.append(s)
        reports.append(r)
    return ScanResult(axis, tuple(values), tuple(stats), tuple(reports))


def scan_coherence(cfg: ExperimentConfig, n_atoms_list, workers: int = 1, analytic: bool = False,
                   grid: int = DEFAULT_GRID) -> ScanResult:
    values = [float(v) for v in n_atoms_list]
    return _scan([replace(cfg, n_atoms=v) for v in values], "n_atoms", values, workers, analytic, grid)


def scan_window(cfg: ExperimentConfig, window_list, workers: int = 1, analytic: bool = False,
                grid: int = DEFAULT_GRID) -> ScanResult:
    """Vary the window length with the probe start time held fixed."""
    values = [float(v) for v in window_list]
    cfgs = [replace(cfg, window=w, t_e=cfg.t_start + w) for w in values]
    return _scan(cfgs, "window", values, workers, analytic, grid)
