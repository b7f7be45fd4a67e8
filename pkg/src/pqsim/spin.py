"""Gaussian model of a collective f=1 spin.

The state is the first and second moments of (F_x, F_y, F_z).  Every
operation returns a new state; nothing is mutated in place.  Axis order is
x, y, z throughout.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

X, Y, Z = 0, 1, 2


@dataclass(frozen=True)
class DecoherenceParams:
    """Scattering and dephasing rates of the probed ensemble.

    Attributes
    ----------
    eta_per_photon : float
        Probability per probe photon that an atom scatters.
    p_return : float
        Fraction of scattered atoms that fall back into f=1.
    eta_dec : float
        Coherence surviving field-gradient dephasing over one experiment.
    """

    eta_per_photon: float = 3e-10
    p_return: float = 0.55
    eta_dec: float = 0.93

    def __post_init__(self):
        if not self.eta_per_photon >= 0:
            raise ValueError(f"eta_per_photon must be >= 0, got {self.eta_per_photon}")
        if not 0.0 <= self.p_return <= 1.0:
            raise ValueError(f"p_return must lie in [0, 1], got {self.p_return}")
        if not 0.0 < self.eta_dec <= 1.0:
            raise ValueError(f"eta_dec must lie in (0, 1], got {self.eta_dec}")


@dataclass(frozen=True, eq=False)
class GaussianSpinState:
    mean: np.ndarray
    cov: np.ndarray
    n_atoms: float
    coherence_factor: float = 1.0

    def __post_init__(self):
        mean = np.array(self.mean, dtype=float).reshape(3)
        cov = np.array(self.cov, dtype=float).reshape(3, 3)
        cov = 0.5 * (cov + cov.T)
        mean.flags.writeable = False
        cov.flags.writeable = False
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)
        if self.n_atoms < 0:
            raise ValueError(f"n_atoms must be >= 0, got {self.n_atoms}")
        if not 0.0 < self.coherence_factor <= 1.0:
            raise ValueError(f"coherence_factor must lie in (0, 1], got {self.coherence_factor}")

    @property
    def planar_mean(self) -> np.ndarray:
        return self.mean[1:]

    @property
    def planar_cov(self) -> np.ndarray:
        return self.cov[1:, 1:]

    def robertson_holds(self, rtol: float = 1e-9) -> bool:
        """Check var_i * var_j >= <F_k>^2 / 4 for the three cyclic pairs."""
        c, m = self.cov, self.mean
        for i, j, k in ((Y, Z, X), (Z, X, Y), (X, Y, Z)):
            lhs, rhs = c[i, i] * c[j, j], 0.25 * m[k] ** 2
            if lhs - rhs < -rtol * max(lhs, rhs):
                return False
        return True

    def is_psd(self, rtol: float = 1e-9) -> bool:
        lo = np.linalg.eigvalsh(self.cov)[0]
        return bool(lo >= -rtol * max(np.trace(self.cov), 0.0))


def pcss_new(n_atoms: float) -> GaussianSpinState:
    """Poissonian coherent spin state polarised along +y.

    Atom-number fluctuations give var(F_y) = <N_A>; the transverse
    components carry the usual N_A/2.
    """
    if n_atoms < 0:
        raise ValueError(f"n_atoms must be >= 0, got {n_atoms}")
    n = float(n_atoms)
    return GaussianSpinState(
        mean=(0.0, n, 0.0), cov=np.diag([n / 2, n, n / 2]), n_atoms=n
    )


def css_new(n_atoms: float) -> GaussianSpinState:
    """Coherent spin state with a deterministic atom number, along +y."""
    if n_atoms < 0:
        raise ValueError(f"n_atoms must be >= 0, got {n_atoms}")
    n = float(n_atoms)
    return GaussianSpinState(
        mean=(0.0, n, 0.0), cov=np.diag([n / 2, 0.0, n / 2]), n_atoms=n
    )


def rotation_x(phi: float) -> np.ndarray:
    """Matrix taking (F_y, F_z) to (F_y cos + F_z sin, -F_y sin + F_z cos)."""
    c, s = math.cos(phi), math.sin(phi)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, s], [0.0, -s, c]])


def rotate_about_x(state: GaussianSpinState, phi: float) -> GaussianSpinState:
    if phi == 0:
        return state
    r = rotation_x(phi)
    return GaussianSpinState(
        r @ state.mean, r @ state.cov @ r.T, state.n_atoms, state.coherence_factor
    )


def _relax(state: GaussianSpinState, d: float) -> GaussianSpinState:
    # Interpolate toward the depolarised floor N_A/2 per axis with weight 1 - d^2.
    if d == 1.0:
        return state
    floor = (1.0 - d * d) * 0.5 * state.n_atoms
    cov = d * d * state.cov + floor * np.eye(3)
    return GaussianSpinState(d * state.mean, cov, state.n_atoms, state.coherence_factor * d)


def scattering_survival(n_photons: float, eta_per_photon: float) -> float:
    return math.exp(-eta_per_photon * n_photons)


def apply_scattering(
    state: GaussianSpinState, n_photons: float, params: DecoherenceParams
) -> GaussianSpinState:
    """Coherence loss from off-resonant scattering of ``n_photons`` photons."""
    if n_photons < 0:
        raise ValueError(f"n_photons must be >= 0, got {n_photons}")
    return _relax(state, scattering_survival(n_photons, params.eta_per_photon))


def apply_dephasing(state: GaussianSpinState, eta_dec: float) -> GaussianSpinState:
    if not 0.0 < eta_dec <= 1.0:
        raise ValueError(f"eta_dec must lie in (0, 1], got {eta_dec}")
    return _relax(state, eta_dec)


def backaction_inject(state: GaussianSpinState, g: float, n_photons: float) -> GaussianSpinState:
    """Add the rotation noise about z imprinted by the probe's S_z shot noise.

    A pulse rotates the spin about z by theta = g S_z with var(S_z) = n/4,
    so to first order dF = theta * (-<F_y>, <F_x>, 0).
    """
    if g < 0 or n_photons < 0:
        raise ValueError("g and n_photons must be >= 0")
    var_theta = g * g * n_photons / 4.0
    if var_theta == 0.0:
        return state
    v = np.array([-state.mean[Y], state.mean[X], 0.0])
    cov = state.cov + var_theta * np.outer(v, v)
    return GaussianSpinState(state.mean, cov, state.n_atoms, state.coherence_factor)
