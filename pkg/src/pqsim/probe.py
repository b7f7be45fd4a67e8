"""Stroboscopic Faraday-rotation probe of the collective spin.

Each probe pulse reads phi = g F_z + shot noise.  Pulses are treated as
instantaneous at the midpoint of their slot; between pulses the spin
precesses about x.  The measurement record is generated in innovations
form: every outcome is drawn from the predictive distribution of the
current conditional state, which is then updated on that outcome.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidReferenceError, SaturationError
from .spin import (
    Z,
    DecoherenceParams,
    GaussianSpinState,
    apply_dephasing,
    apply_scattering,
    backaction_inject,
    pcss_new,
    rotate_about_x,
)

# Simulation coupling; chosen so a 90-pulse window reproduces the measured
# read-out noise of ~1.02e5 spins^2 (see README, "Coupling constants").
G_SIMULATION = 2.975e-7

WITH_ATOMS = "with_atoms"
NO_ATOMS = "no_atoms"
LABELS = (WITH_ATOMS, NO_ATOMS)


@dataclass(frozen=True)
class PulseTrainConfig:
    """Probe settings.  Times in seconds, angles in radians.

    ``dephasing_span`` is the interval over which the survival factor
    ``deco.eta_dec`` accrues during probing, at a constant rate.  The
    default of 0 means the whole factor is applied once to the prepared
    state (see ``prepare_state``) and slots only see scattering.  ``noiseless`` suppresses every random draw (projection
    and shot noise), leaving the deterministic mean signal.
    """

    g: float = G_SIMULATION
    n_photons_v: float = 2.74e6
    n_photons_h: float = 1.49e6
    pulse_period: float = 3e-6
    pulse_duration: float = 0.6e-6
    larmor_omega: float = 2 * math.pi * 33e3
    t2: float = 1.45e-3
    phi0: float = 1e-3
    deco: DecoherenceParams = field(default_factory=DecoherenceParams)
    dephasing_span: float = 0.0
    noiseless: bool = False
    poisson_photons: bool = False

    def __post_init__(self):
        for name in ("g", "n_photons_v", "n_photons_h", "pulse_period", "pulse_duration"):
            if not getattr(self, name) >= 0:
                raise ValueError(f"{name} must be >= 0, got {getattr(self, name)}")
        if not self.pulse_duration < self.pulse_period:
            raise ValueError("pulse_duration must be shorter than pulse_period")
        if not self.t2 > 0:
            raise ValueError(f"t2 must be > 0, got {self.t2}")
        if not self.dephasing_span >= 0:
            raise ValueError(f"dephasing_span must be >= 0, got {self.dephasing_span}")
        if not all(map(math.isfinite, (self.larmor_omega, self.phi0))):
            raise ValueError("larmor_omega and phi0 must be finite")

    @property
    def decay_per_slot(self) -> float:
        """Mean-spin survival over one pulse slot (scattering and dephasing)."""
        sc = math.exp(-self.deco.eta_per_photon * (self.n_photons_v + self.n_photons_h))
        return sc * self.dephasing_per_slot

    @property
    def dephasing_per_slot(self) -> float:
        if self.dephasing_span == 0:
            return 1.0
        return self.deco.eta_dec ** (self.pulse_period / self.dephasing_span)

    @property
    def effective_t2(self) -> float:
        """Envelope time constant produced by the decoherence channels."""
        rate = -math.log(self.decay_per_slot) / self.pulse_period
        return math.inf if rate == 0 else 1.0 / rate


@dataclass(frozen=True, eq=False)
class Trace:
    """Time-ordered per-pulse record of rotation angles."""

    t: np.ndarray
    phi: np.ndarray
    n_photons: np.ndarray
    t_e: float
    label: str = WITH_ATOMS
    trial: int = 0
    trial_seed: int | None = None

    def __post_init__(self):
        t = np.array(self.t, dtype=float).reshape(-1)
        phi = np.array(self.phi, dtype=float).reshape(-1)
        n = np.array(self.n_photons, dtype=float).reshape(-1)
        if not (t.shape == phi.shape == n.shape):
            raise ValueError("t, phi and n_photons must have equal length")
        if t.size > 1 and not np.all(np.diff(t) > 0):
            raise ValueError("sample times must be strictly increasing")
        if not np.all(np.isfinite(phi)):
            raise ValueError("phi samples must be finite")
        if self.label not in LABELS:
            raise ValueError(f"label must be one of {LABELS}, got {self.label!r}")
        for name, arr in (("t", t), ("phi", phi), ("n_photons", n)):
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)

    def __len__(self):
        return self.t.size


def prepare_state(n_atoms: float, cfg: PulseTrainConfig) -> GaussianSpinState:
    """PCSS entering the probe; carries the dephasing factor when it is not spread over slots."""
    state = pcss_new(n_atoms)
    if cfg.dephasing_span == 0:
        state = apply_dephasing(state, cfg.deco.eta_dec)
    return state


def faraday_signal(state: GaussianSpinState, g: float, rng: np.random.Generator | None = None) -> float:
    """Rotation angle g F_z; with ``rng``, F_z is drawn from the z-marginal."""
    fz = state.mean[Z]
    if rng is not None:
        fz = fz + math.sqrt(max(state.cov[Z, Z], 0.0)) * rng.standard_normal()
    return g * fz


def polarimeter_estimate(sx: float, sy_prime: float) -> float:
    if not sx > 0:
        raise InvalidReferenceError(f"reference S_x must be > 0, got {sx}")
    ratio = sy_prime / sx
    if abs(ratio) > 1.0:
        raise SaturationError(f"|S_y'/S_x| = {abs(ratio):.6g} exceeds 1")
    return math.asin(ratio)


def shot_noise_variance(n_photons: float) -> float:
    """Variance of the arcsin estimator for a coherent pulse, 1/n."""
    if not n_photons > 0:
        raise ValueError(f"n_photons must be > 0, got {n_photons}")
    return 1.0 / n_photons


def kalman_update(
    state: GaussianSpinState, measured_phi: float, g: float, readout_var: float
) -> GaussianSpinState:
    """Condition the state on phi = g F_z + noise(readout_var)."""
    if not readout_var > 0:
        raise ValueError(f"readout_var must be > 0, got {readout_var}")
    if g == 0:
        return state
    ph = g * state.cov[:, Z]
    s = g * ph[Z] + readout_var
    k = ph / s
    mean = state.mean + k * (measured_phi - g * state.mean[Z])
    cov = state.cov - np.outer(k, ph)
    return GaussianSpinState(mean, cov, state.n_atoms, state.coherence_factor)


def _as_generator(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def simulate_trace(
    state0: GaussianSpinState,
    cfg: PulseTrainConfig,
    duration: float,
    t_e: float,
    rng_seed,
    *,
    t_start: float = 0.0,
    label: str | None = None,
    trial: int = 0,
    larmor_offset: float = 0.0,
) -> tuple[Trace, list[GaussianSpinState]]:
    """Run one probing sequence and return the record plus per-pulse states.

    ``state0`` is prepared at ``t_start``; pulse k fires at
    ``t_start + (k + 1/2) * pulse_period``.  Per slot: precess, measure,
    condition, inject back-action, then apply scattering (V and H photons)
    and dephasing.  The returned state list holds the state after each
    slot's full update.
    """
    period = cfg.pulse_period
    if not period > 0:
        raise ValueError("pulse_period must be > 0")
    n_pulses = int(round(duration / period))
    if n_pulses < 1 or abs(n_pulses * period - duration) > 1e-9 * duration:
        raise ValueError("duration must be a positive multiple of pulse_period")
    if not t_start <= t_e <= t_start + duration:
        raise ValueError("t_e must lie inside the probed interval")
    if label is None:
        label = WITH_ATOMS if state0.n_atoms > 0 else NO_ATOMS

    rng = _as_generator(rng_seed)
    seed_value = rng_seed if isinstance(rng_seed, (int, np.integer)) else None
    omega = cfg.larmor_omega + larmor_offset
    dephase = cfg.dephasing_per_slot

    t = t_start + (np.arange(n_pulses) + 0.5) * period
    phi = np.empty(n_pulses)
    photons = np.empty(n_pulses)
    states = []
    state = state0
    t_prev = t_start
    for k in range(n_pulses):
        state = rotate_about_x(state, omega * (t[k] - t_prev))
        t_prev = t[k]
        n_k = float(rng.poisson(cfg.n_photons_v)) if cfg.poisson_photons else cfg.n_photons_v
        photons[k] = n_k
        if cfg.noiseless or n_k == 0:
            phi[k] = faraday_signal(state, cfg.g) + cfg.phi0
        else:
            var_r = shot_noise_variance(n_k)
            signal = faraday_signal(state, cfg.g, rng) + math.sqrt(var_r) * rng.standard_normal()
            phi[k] = signal + cfg.phi0
            state = kalman_update(state, signal, cfg.g, var_r)
            state = backaction_inject(state, cfg.g, n_k)
        state = apply_scattering(state, n_k + cfg.n_photons_h, cfg.deco)
        if dephase != 1.0:
            state = apply_dephasing(state, dephase)
        states.append(state)

    trace = Trace(t, phi, photons, t_e, label=label, trial=trial, trial_seed=seed_value)
    return trace, states
