"""Free-induction-decay fitting and two-window spin estimation.

The record is modelled as

    phi(t) = g (F_z cos(w t_r) - F_y sin(w t_r)) exp(-t_r / T2) + phi0,
    t_r = t - t_e,

with (F_y, F_z) the spin at the estimation epoch t_e.  The classical
parameters (w, T2, phi0) are fitted jointly over many traces with free
per-trace amplitudes; the amplitudes are then re-estimated by weighted
linear least squares on two disjoint windows, and the pair statistics give
the conditional covariance of the second estimate given the first.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize

from .errors import ConditioningError, FitError, IdentifiabilityError, RankDeficiencyError
from .probe import Trace

log = logging.getLogger(__name__)

ENVELOPES = ("literal", "symmetric")
COND_LIMIT = 1e12


@dataclass(frozen=True, eq=False)
class ClassicalParams:
    """Coupling and FID parameters.

    ``fit_cov`` is the covariance of (larmor_omega, 1/t2, phi0) when the
    parameters come from :func:`fit_classical_params`.
    """

    g: float
    larmor_omega: float
    t2: float
    phi0: float = 0.0
    fit_cov: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        if not self.t2 > 0:
            raise ValueError(f"t2 must be > 0, got {self.t2}")
        if not all(map(math.isfinite, (self.g, self.larmor_omega, self.phi0))):
            raise ValueError("classical parameters must be finite")

    @property
    def stderr(self) -> dict[str, float]:
        if self.fit_cov is None:
            return {}
        se = np.sqrt(np.clip(np.diag(self.fit_cov), 0, None))
        decay_rate = 1.0 / self.t2
        return {
            "larmor_omega": float(se[0]),
            "t2": float(se[1] / decay_rate**2) if decay_rate > 0 else math.inf,
            "phi0": float(se[2]),
        }


@dataclass(frozen=True, eq=False)
class SpinEstimate:
    f_y: float
    f_z: float
    est_cov: np.ndarray
    window: tuple[float, float]
    n_samples: int

    @property
    def vector(self) -> np.ndarray:
        return np.array([self.f_y, self.f_z])


@dataclass(frozen=True, eq=False)
class ConditionalStats:
    """Pair statistics of the two window estimates (spins, spins^2).

    ``gamma_cross`` is cov(F2, F1).  ``std_err`` holds delete-one jackknife
    standard errors of ``gamma_cond``; ``trace_std_err`` the same for its
    trace.
    """

    gamma_f1: np.ndarray
    gamma_f2: np.ndarray
    gamma_cross: np.ndarray
    gamma_cond: np.ndarray
    gamma_zero: np.ndarray
    residuals: np.ndarray
    std_err: np.ndarray
    n_trials: int
    mean_f1: np.ndarray
    mean_f2: np.ndarray
    trace_std_err: float = math.nan


def _envelope(t_r: np.ndarray, decay_rate: float, envelope: str) -> np.ndarray:
    if envelope == "literal":
        return np.exp(-decay_rate * t_r)
    if envelope == "symmetric":
        return np.exp(-decay_rate * np.abs(t_r))
    raise ValueError(f"envelope must be one of {ENVELOPES}, got {envelope!r}")


def _basis(times, t_e, g, omega, decay_rate, envelope):
    t_r = np.asarray(times, dtype=float) - t_e
    env = _envelope(t_r, decay_rate, envelope)
    ph = omega * t_r
    return t_r, env, np.column_stack((-g * np.sin(ph) * env, g * np.cos(ph) * env))


def design_matrix(times, t_e: float, params: ClassicalParams, envelope: str = "literal") -> np.ndarray:
    """Rows map (F_y, F_z) at ``t_e`` onto phi(t_k) - phi0."""
    return _basis(times, t_e, params.g, params.larmor_omega, 1.0 / params.t2, envelope)[2]


def estimate_window(
    trace: Trace,
    window: tuple[float, float],
    t_e: float,
    params: ClassicalParams,
    envelope: str = "literal",
) -> SpinEstimate:
    """Weighted least-squares (F_y, F_z) at ``t_e`` from samples in ``[t_a, t_b)``.

    Weights are the inverse shot-noise variances, i.e. the photon counts.
    """
    t_a, t_b = window
    sel = (trace.t >= t_a) & (trace.t < t_b)
    n = int(sel.sum())
    if n < 3:
        raise IdentifiabilityError(f"window [{t_a:.6g}, {t_b:.6g}) holds {n} samples, need >= 3")
    t = trace.t[sel]
    span = t[-1] - t[0]
    if abs(params.larmor_omega) * span < math.pi / 2:
        raise IdentifiabilityError("window spans less than a quarter Larmor period")
    h = design_matrix(t, t_e, params, envelope)
    w = trace.n_photons[sel]
    normal = h.T @ (w[:, None] * h)
    if not np.all(np.isfinite(normal)) or np.linalg.cond(normal) > COND_LIMIT:
        raise IdentifiabilityError("singular normal matrix for window estimate")
    est_cov = np.linalg.inv(normal)
    est_cov = 0.5 * (est_cov + est_cov.T)
    f = est_cov @ (h.T @ (w * (trace.phi[sel] - params.phi0)))
    return SpinEstimate(float(f[0]), float(f[1]), est_cov, (t_a, t_b), n)


# ---------------------------------------------------------------------------
# classical-parameter fit
# ---------------------------------------------------------------------------


def _group_by_times(traces):
    groups = {}
    for tr in traces:
        key = (tr.t.tobytes(), float(tr.t_e))
        groups.setdefault(key, []).append(tr)
    return [(grp[0].t, grp[0].t_e, np.vstack([tr.phi for tr in grp])) for grp in groups.values()]


def _periodogram_peak(groups, period_hint):
    spans = [t[-1] - t[0] for t, _, _ in groups]
    dt = min(float(np.min(np.diff(t))) for t, _, _ in groups) if period_hint is None else period_hint
    span = max(spans)
    omegas = np.linspace(0.0, math.pi / dt, max(64, int(8 * span / dt)))[1:]
    power = np.zeros_like(omegas)
    for t, _, y in groups:
        yc = y - y.mean(axis=1, keepdims=True)
        e = np.exp(-1j * np.outer(t, omegas))
        power += np.sum(np.abs(yc @ e) ** 2, axis=0)
    return float(omegas[np.argmax(power)]), float(power.max())


class _VarPro:
    """Projected residuals for (omega, decay_rate, phi0), amplitudes eliminated."""

    def __init__(self, groups, g, envelope):
        self.groups = groups
        self.g = g
        self.envelope = envelope
        self.n_data = sum(y.size for _, _, y in groups)
        self.n_traces = sum(y.shape[0] for _, _, y in groups)

    def solve(self, theta):
        omega, rate, phi0 = theta
        res, jac, amps = [], [], []
        for t, t_e, y in self.groups:
            t_r, env, b = _basis(t, t_e, self.g, omega, rate, self.envelope)
            q, _ = np.linalg.qr(b)
            y0 = y - phi0
            a, *_ = np.linalg.lstsq(b, y0.T, rcond=None)  # (2, m)
            r = y0 - (b @ a).T
            ph = omega * t_r
            if self.envelope == "literal":
                dt_env = t_r
            else:
                dt_env = np.abs(t_r)
            # derivatives of the model at fixed amplitudes
            db_dw = np.column_stack((-self.g * t_r * np.cos(ph) * env, -self.g * t_r * np.sin(ph) * env))
            d_w = (db_dw @ a).T
            d_g = -(dt_env[:, None] * (b @ a)).T
            d_p = np.ones_like(y)
            cols = []
            for d in (d_w, d_g, d_p):
                proj = d - (q @ (q.T @ d.T)).T
                cols.append(-proj.reshape(-1))
            res.append(r.reshape(-1))
            jac.append(np.column_stack(cols))
            amps.append(a.T)
        return np.concatenate(res), np.vstack(jac), amps


def fit_classical_params(
    traces: list[Trace],
    g: float,
    initial: ClassicalParams | None = None,
    envelope: str = "literal",
    max_nfev: int = 200,
) -> ClassicalParams:
    """Fit (larmor_omega, t2, phi0) jointly over ``traces``.

    Unweighted least squares over every sample, with two free amplitudes
    per trace.  The amplitudes are eliminated by variable projection, so
    the nonlinear search runs over three parameters only; the decay is
    parameterised as a rate so that an absent decay is representable.
    The returned ``fit_cov`` uses the projected Jacobian.
    """
    if envelope not in ENVELOPES:
        raise ValueError(f"envelope must be one of {ENVELOPES}, got {envelope!r}")
    traces = [tr for tr in traces if len(tr) > 0]
    if not traces:
        raise FitError("no traces to fit")
    groups = _group_by_times(traces)
    if any(t.size < 5 for t, _, _ in groups):
        raise FitError("each trace needs at least 5 samples")
    spread = max(float(np.ptp(y - y.mean(axis=1, keepdims=True))) for _, _, y in groups)
    scale_y = max(float(np.max(np.abs(y))) for _, _, y in groups)
    if spread <= 1e-12 * max(scale_y, 1e-300):
        raise RankDeficiencyError("signal is constant; frequency and decay are unidentifiable")

    span = max(t[-1] - t[0] for t, _, _ in groups)
    if initial is not None:
        omega0 = initial.larmor_omega
        rate0 = 1.0 / initial.t2
        phi00 = initial.phi0
    else:
        omega0, _ = _periodogram_peak(groups, None)
        rate0 = 0.0
        phi00 = float(np.mean([y.mean() for _, _, y in groups]))
    vp = _VarPro(groups, g, envelope)

    if initial is None:
        # refine the periodogram peak on the projected cost before LM
        dw = 2 * math.pi / span
        cand = np.linspace(omega0 - dw, omega0 + dw, 41)
        costs = [np.sum(vp.solve((w, rate0, phi00))[0] ** 2) for w in cand]
        omega0 = float(cand[int(np.argmin(costs))])

    # work in scaled coordinates
    scale = np.array([max(abs(omega0), 1.0 / span), 1.0 / span, max(spread, 1e-300)])
    x0 = np.array([omega0, rate0, phi00]) / scale

    def fun(x):
        return vp.solve(x * scale)[0]

    def jac(x):
        return vp.solve(x * scale)[1] * scale

    sol = optimize.least_squares(
        fun, x0, jac=jac, method="lm", xtol=1e-15, ftol=1e-15, gtol=1e-15, max_nfev=max_nfev
    )
    theta = sol.x * scale
    r, j, _ = vp.solve(theta)
    # LM stops on ftol once the cost change underflows; finish with Gauss-Newton steps
    for _ in range(5):
        rnorm = float(np.linalg.norm(r))
        js = j * scale
        jn = js / np.maximum(np.linalg.norm(js, axis=0), 1e-300)
        if np.max(np.abs(jn.T @ r)) <= 1e-10 * max(rnorm, 1e-300):
            break
        step = np.linalg.lstsq(js, -r, rcond=None)[0] * scale
        r_new, j_new, _ = vp.solve(theta + step)
        if np.linalg.norm(r_new) > rnorm * (1 + 1e-12):
            break
        theta, r, j = theta + step, r_new, j_new
    col = np.linalg.norm(j * scale, axis=0)
    rnorm = float(np.linalg.norm(r))
    diagnostics = {"status": sol.status, "nfev": sol.nfev, "cost": float(sol.cost), "theta": theta}
    if np.any(col <= 1e-10 * col.max()):
        raise RankDeficiencyError("Jacobian column vanishes at the solution", diagnostics)
    jn = j * scale / col
    normal = jn.T @ jn
    if np.linalg.cond(normal) > COND_LIMIT:
        raise RankDeficiencyError("classical parameters are not separately identifiable", diagnostics)

    ynorm = math.sqrt(sum(float(np.sum((y - y.mean()) ** 2)) for _, _, y in groups))
    grad = np.max(np.abs(jn.T @ r)) / max(rnorm, 1e-300)
    diagnostics["scaled_gradient"] = grad
    if rnorm > 1e-10 * ynorm and grad > 1e-8:
        raise FitError(f"fit did not converge (scaled gradient {grad:.3g})", diagnostics)

    dof = vp.n_data - 3 - 2 * vp.n_traces
    s2 = rnorm**2 / dof if dof > 0 else math.nan
    cov = s2 * np.linalg.inv(j.T @ j)
    omega, rate, phi0 = (float(v) for v in theta)
    if rate <= 0:
        log.warning("fitted decay rate %.3g <= 0; reporting T2 = inf", rate)
    t2 = 1.0 / rate if rate > 0 else math.inf
    if abs(omega) * span < 4 * math.pi:
        log.warning("traces span fewer than two Larmor periods")
    return ClassicalParams(g=g, larmor_omega=abs(omega), t2=t2, phi0=phi0, fit_cov=cov)


# ---------------------------------------------------------------------------
# conditional covariance
# ---------------------------------------------------------------------------


def _schur(g11, g22, g21):
    b = np.linalg.solve(g11.swapaxes(-1, -2), g21.swapaxes(-1, -2)).swapaxes(-1, -2)
    return g22 - b @ g21.swapaxes(-1, -2), b


def _is_zero(m, ref):
    return float(np.max(np.abs(m))) <= (1e-12 * max(ref, 1.0)) ** 2


def conditional_covariance(pairs) -> ConditionalStats:
    """Best-linear-prediction statistics of F2 given F1.

    ``pairs`` is array-like of shape (n, 2, 2): trial, (F1, F2), (y, z).
    Sample covariances use 1/(n-1).  If every F1 is identical the first
    estimate carries no information and the prediction reduces to the mean
    (Gamma_F2|F1 = Gamma_F2).
    """
    p = np.asarray(pairs, dtype=float)
    if p.ndim != 3 or p.shape[1:] != (2, 2):
        raise ValueError("pairs must have shape (n, 2, 2)")
    n = p.shape[0]
    if n < 2:
        raise ValueError("need at least 2 pairs")
    x = np.concatenate((p[:, 0, :], p[:, 1, :]), axis=1)
    mean = x.mean(axis=0)
    xc = x - mean
    full = xc.T @ xc / (n - 1)
    g11, g22, g21 = full[:2, :2], full[2:, 2:], full[2:, :2]
    g11 = 0.5 * (g11 + g11.T)
    g22 = 0.5 * (g22 + g22.T)

    degenerate = _is_zero(g11, float(np.max(np.abs(mean[:2]))))
    if degenerate:
        gamma_cond, b = g22.copy(), np.zeros((2, 2))
    else:
        if n < 3 or np.linalg.cond(g11) > COND_LIMIT:
            raise ConditioningError(f"Gamma_F1 is singular (condition {np.linalg.cond(g11):.3g})")
        gamma_cond, b = _schur(g11, g22, g21)
    gamma_cond = 0.5 * (gamma_cond + gamma_cond.T)
    residuals = xc[:, 2:] - xc[:, :2] @ b.T

    std_err = np.full((2, 2), math.nan)
    trace_se = math.nan
    if n >= 3:
        reps = _jackknife_cond(xc, degenerate)
        dev = reps - reps.mean(axis=0)
        std_err = np.sqrt((n - 1) / n * np.sum(dev**2, axis=0))
        tr = np.trace(reps, axis1=1, axis2=2)
        trace_se = float(np.sqrt((n - 1) / n * np.sum((tr - tr.mean()) ** 2)))

    return ConditionalStats(
        gamma_f1=g11,
        gamma_f2=g22,
        gamma_cross=g21,
        gamma_cond=gamma_cond,
        gamma_zero=np.zeros((2, 2)),
        residuals=residuals,
        std_err=std_err,
        n_trials=n,
        mean_f1=mean[:2].copy(),
        mean_f2=mean[2:].copy(),
        trace_std_err=trace_se,
    )


def _jackknife_cond(xc, degenerate):
    # delete-one covariances from rank-one downdates of the scatter matrix
    n = xc.shape[0]
    scatter = xc.T @ xc
    outer = np.einsum("ni,nj->nij", xc, xc)
    covs = (scatter - outer * n / (n - 1)) / (n - 2)
    g11, g22, g21 = covs[:, :2, :2], covs[:, 2:, 2:], covs[:, 2:, :2]
    if degenerate:
        return g22
    return _schur(g11, g22, g21)[0]


def readout_noise(no_atom_traces, window, t_e, params, envelope: str = "literal") -> np.ndarray:
    """Sample covariance of window estimates over traces taken without atoms."""
    est = np.array([estimate_window(tr, window, t_e, params, envelope).vector for tr in no_atom_traces])
    if est.shape[0] < 2:
        raise ValueError("need at least 2 no-atom traces")
    c = np.cov(est, rowvar=False, ddof=1)
    return 0.5 * (c + c.T)
