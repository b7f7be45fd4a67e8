from dataclasses import replace

import numpy as np
import pytest

from pqsim.config import ExperimentConfig
from pqsim.harness import (
    analytic_moments,
    analytic_trials,
    run_calibration,
    run_trials,
    scan_coherence,
    scan_window,
    simulate_one,
    simulate_trials,
    trial_seeds,
    windows,
)
from pqsim.probe import NO_ATOMS, WITH_ATOMS, prepare_state, simulate_trace

SMALL = ExperimentConfig(trials=6, window=60e-6, t_e=60e-6, master_seed=5)


def test_windows_are_adjacent_half_open():
    m1, m2 = windows(ExperimentConfig())
    assert m1 == (0.0, 270e-6) and m2 == (270e-6, 540e-6)


def test_seeds_depend_on_trial_label_and_point():
    a = trial_seeds(SMALL, 0, WITH_ATOMS)
    assert a == trial_seeds(SMALL, 0, WITH_ATOMS)
    assert a != trial_seeds(SMALL, 1, WITH_ATOMS)
    assert a != trial_seeds(SMALL, 0, NO_ATOMS)
    assert a != trial_seeds(replace(SMALL, n_atoms=1e6), 0, WITH_ATOMS)
    assert a != trial_seeds(replace(SMALL, master_seed=6), 0, WITH_ATOMS)
    # the read-out calibration does not depend on the atom number
    assert trial_seeds(SMALL, 0, NO_ATOMS) == trial_seeds(replace(SMALL, n_atoms=1e6), 0, NO_ATOMS)


def test_trial_stream_independent_of_trial_count_and_workers():
    few, _ = simulate_trials(SMALL, calibration=False)
    many, _ = simulate_trials(replace(SMALL, trials=10), workers=2, calibration=False)
    for a, b in zip(few, many):
        np.testing.assert_array_equal(a.phi, b.phi)
    np.testing.assert_array_equal(simulate_one(SMALL, 3).phi, many[3].phi)


def test_jitter_only_moves_technical_stream():
    plain = simulate_one(SMALL, 2)
    jit = simulate_one(replace(SMALL, n_atoms_jitter=0.05, larmor_jitter=2e3), 2)
    assert not np.array_equal(plain.phi, jit.phi)
    empty = simulate_one(replace(SMALL, n_atoms_jitter=0.05), 2, NO_ATOMS)
    np.testing.assert_array_equal(empty.phi, simulate_one(SMALL, 2, NO_ATOMS).phi)


def test_noiseless_two_trials_have_no_conditional_noise():
    cfg = ExperimentConfig(trials=2, window=90e-6, t_e=90e-6)
    cfg = replace(cfg, pulse=replace(cfg.pulse, noiseless=True))
    stats, report = run_trials(cfg, grid=11)
    assert np.max(np.abs(stats.gamma_cond)) < 1e-6 * cfg.n_atoms
    assert not stats.gamma_zero.any()
    assert report.f_par > 0


def test_calibration_scales_with_photons():
    cfg = ExperimentConfig(trials=200, master_seed=3)
    g1 = run_calibration(cfg)
    brighter = replace(cfg, pulse=replace(cfg.pulse, n_photons_v=4 * cfg.pulse.n_photons_v))
    g4 = run_calibration(brighter)
    np.testing.assert_allclose(g4, g1 / 4, rtol=0.1)
    assert 6e4 < g1[0, 0] < 1.5e5 and 6e4 < g1[1, 1] < 1.5e5
    silent = replace(cfg, pulse=replace(cfg.pulse, noiseless=True))
    assert not run_calibration(silent).any()


def test_analytic_nominal_point():
    stats, report = analytic_trials(ExperimentConfig())
    np.testing.assert_allclose(np.diag(stats.gamma_zero), 1.025e5, rtol=0.03)
    assert abs(report.f_par - 1.45e6) < 0.02e6
    assert 0.35 < report.xi_par_sq < 0.5 and report.entangled
    assert np.linalg.eigvalsh(stats.gamma_f2 - stats.gamma_cond).min() > 0


def test_analytic_rejects_unmodelled_noise():
    with pytest.raises(ValueError):
        analytic_moments(replace(ExperimentConfig(), n_atoms_jitter=0.01))


def test_kalman_posterior_matches_batch_conditioning():
    cfg = ExperimentConfig()
    am = analytic_moments(cfg)
    _, states = simulate_trace(prepare_state(cfg.n_atoms, cfg.pulse), cfg.pulse, cfg.window, cfg.t_e, 0,
                               t_start=cfg.t_start)
    kalman = np.trace(states[-1].cov[1:, 1:])
    batch = np.trace(am.epoch_cond_cov)
    assert abs(kalman / batch - 1) < 0.1


@pytest.mark.slow
def test_sampled_agrees_with_analytic():
    cfg = ExperimentConfig(master_seed=17)
    sampled, _ = run_trials(cfg, grid=11)
    predicted, _ = analytic_trials(cfg, grid=11)
    diff = np.abs(sampled.gamma_cond - predicted.gamma_cond)
    assert np.all(diff <= 5 * predicted.std_err)
    np.testing.assert_allclose(np.diag(sampled.gamma_zero), np.diag(predicted.gamma_zero), rtol=0.25)


def test_coherence_scan_order_invariant():
    cfg = replace(ExperimentConfig(trials=8, master_seed=2), window=90e-6, t_e=90e-6)
    up = scan_coherence(cfg, [4e5, 1.2e6], grid=11)
    down = scan_coherence(cfg, [1.2e6, 4e5], grid=11)
    np.testing.assert_array_equal(up.stats[0].gamma_cond, down.stats[1].gamma_cond)
    np.testing.assert_array_equal(up.stats[1].gamma_cond, down.stats[0].gamma_cond)


def test_analytic_coherence_scan_is_monotone():
    res = scan_coherence(ExperimentConfig(), [8.3e4 / 0.83, 5e5 / 0.83, 1.75e6], analytic=True, grid=11)
    xi = [r.xi_par_sq for r in res.reports]
    assert xi[0] > 1 > xi[2] and xi[0] > xi[1] > xi[2]


def test_window_scan_has_interior_optimum():
    grid = [30e-6, 150e-6, 270e-6, 420e-6, 600e-6]
    res = scan_window(ExperimentConfig(), grid, analytic=True, grid=11)
    tr = [np.trace(s.gamma_cond) for s in res.stats]
    best = int(np.argmin(tr))
    assert 0 < best < len(grid) - 1
    cfg = ExperimentConfig()
    ideal = replace(cfg, pulse=replace(cfg.pulse, deco=replace(cfg.pulse.deco, eta_per_photon=0.0, eta_dec=1.0)))
    clean = [np.trace(s.gamma_cond) for s in scan_window(ideal, grid, analytic=True, grid=11).stats]
    assert all(np.diff(clean) < 0)
