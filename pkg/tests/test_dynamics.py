import math

import numpy as np
import pytest

from spinlock.dynamics import (
    CoverageError, EnsembleNoise, PulseCal, PulseSegment, SimConfig, StabilityError,
    calibrated_pulse, idle, integrate_trajectory, readout, render, run_ensemble,
)
from spinlock.model import QubitParams, amplitude_for_rabi
from spinlock.units import thermal_polarization
from spinlock.noisegen import LorentzianBump, NoiseModel, NoiseTrace, PowerLaw, Quasistatic, White

TWO_PI = 2 * math.pi
DT = 0.5e-9


def _drive(params, nu_r, duration, phase=0.0, edge=0.0):
    return PulseSegment("flat_top", duration, amplitude_for_rabi(nu_r, params), phase,
                        edge_sigma=edge)


def _constant(value, n):
    return NoiseTrace(DT, np.full(n, value), None)


# ------------------------------------------------------------------ segments

def test_segment_validation():
    with pytest.raises(ValueError):
        PulseSegment("gaussian_pulse", 5e-9, 1e6, sigma=2.5e-9)
    with pytest.raises(ValueError):
        PulseSegment("flat_top", 5e-9, 1e6, edge_sigma=2.5e-9)
    with pytest.raises(ValueError):
        PulseSegment("idle", 0.0)
    with pytest.raises(ValueError):
        PulseSegment("square", 1e-6)


def test_sim_config_validation():
    with pytest.raises(ValueError):
        SimConfig(dt=0.0)
    with pytest.raises(ValueError):
        SimConfig(integration_frame="lab")


# ------------------------------------------------------------------ closed-form evolution

def test_resonant_rabi_nutation():
    # [DERIVED] constant field along x: z(t) = -cos(2 pi nu_R t)
    p = QubitParams(5.4e9)
    nu_r = 10e6
    res = integrate_trajectory(p, [_drive(p, nu_r, 400e-9)], config=SimConfig(include_t1=False),
                               record="all")
    assert np.max(np.abs(res.mean[:, 2] + np.cos(TWO_PI * nu_r * res.times))) < 1e-9


def test_energy_relaxation_from_excited_state():
    p = QubitParams(5.4e9, gamma1=1 / 12e-6)
    res = integrate_trajectory(p, [idle(100e-6)], initial=(0.0, 0.0, 1.0), record="all")
    z_eq = -thermal_polarization(p.nu_q, p.temperature)
    want = z_eq + (1 - z_eq) * np.exp(-p.gamma1 * res.times)
    assert np.max(np.abs(res.mean[:, 2] - want)) < 1e-12
    # [DERIVED] tanh(h nu / 2 k T) for 5.4 GHz at 65 mK
    assert res.mean[-1, 2] == pytest.approx(-0.9631, abs=2e-4)


def test_transverse_decay_is_half_gamma1():
    p = QubitParams(5.4e9, gamma1=1 / 12e-6)
    res = integrate_trajectory(p, [idle(10e-6)], initial=(1.0, 0.0, 0.0), record="all")
    assert np.allclose(res.mean[:, 0], np.exp(-0.5 * p.gamma1 * res.times), atol=1e-12)


def test_locked_precession_under_static_detuning():
    # [DERIVED] rotation about n = (cos eta, 0, sin eta): X = cos^2 eta + sin^2 eta cos(W t)
    p = QubitParams(5.4e9)
    nu_r, delta_nu = 3e6, 0.45e6
    sched = [_drive(p, nu_r, 2e-6)]
    n = 4000
    res = integrate_trajectory(p, sched, {"delta": _constant(TWO_PI * delta_nu, n)},
                               SimConfig(include_t1=False), initial=(1.0, 0.0, 0.0), record="all")
    eta = math.atan2(delta_nu, nu_r)
    w = TWO_PI * math.hypot(nu_r, delta_nu)
    want = math.cos(eta) ** 2 + math.sin(eta) ** 2 * np.cos(w * res.times)
    assert np.max(np.abs(res.mean[:, 0] - want)) < 1e-9
    assert np.all(res.mean[:, 0] >= math.cos(2 * eta) - 1e-9)


def test_two_half_pi_pulses_make_a_pi_pulse():
    p = QubitParams(5.4e9, epsilon=1e9)
    sched = [calibrated_pulse(math.pi / 2, 0.0, p, DT)] * 2
    res = integrate_trajectory(p, sched, config=SimConfig(include_t1=False), record="final")
    assert res.final.z == pytest.approx(1.0, abs=1e-4)


def test_norm_is_preserved_without_relaxation():
    p = QubitParams(5.4e9, epsilon=0.3e9)
    n = 8000
    tr = NoiseTrace(DT, np.random.default_rng(1).normal(0, 2e7, n), None)
    sched = [calibrated_pulse(math.pi / 2, -math.pi / 2, p, DT), _drive(p, 5e6, 3e-6)]
    res = integrate_trajectory(p, sched, {"epsilon": tr}, SimConfig(include_t1=False), record="all")
    assert np.max(np.abs(np.linalg.norm(res.mean, axis=1) - 1)) < 1e-10


def test_rwa_agrees_with_full_qubit_frame():
    # a weak drive (nu_R / nu_q = 1e-3) makes counter-rotating corrections tiny
    rng = np.random.default_rng(3)
    for _ in range(4):
        p = QubitParams(50e6, epsilon=rng.uniform(-30e6, 30e6))
        nu_r = 1e-3 * p.nu_q
        sched = [_drive(p, nu_r, rng.uniform(0.3, 1.0) / nu_r, phase=rng.uniform(0, TWO_PI)),
                 idle(rng.uniform(10e-9, 200e-9))]
        runs = [integrate_trajectory(p, sched, config=SimConfig(dt=0.1e-9, include_t1=False,
                                                                integration_frame=frame),
                                     record="final")
                for frame in ("rotating_rwa", "qubit_full")]
        assert np.max(np.abs(runs[0].mean - runs[1].mean)) < 3e-3


# ------------------------------------------------------------------ guards

def test_short_noise_trace_is_rejected():
    p = QubitParams(5.4e9)
    with pytest.raises(CoverageError):
        integrate_trajectory(p, [idle(1e-6)], {"delta": _constant(1.0, 100)})


def test_coarse_noise_trace_is_rejected():
    p = QubitParams(5.4e9)
    with pytest.raises(CoverageError):
        integrate_trajectory(p, [idle(1e-6)], {"delta": NoiseTrace(2 * DT, np.zeros(2000), None)})


def test_unstable_step_is_rejected():
    p = QubitParams(5.4e9)
    with pytest.raises(StabilityError):
        integrate_trajectory(p, [_drive(p, 200e6, 100e-9)])


def test_record_times_outside_schedule():
    p = QubitParams(5.4e9)
    with pytest.raises(ValueError):
        integrate_trajectory(p, [idle(1e-6)], record=[2e-6])
    with pytest.raises(ValueError):
        integrate_trajectory(p, [idle(1e-6)], record="sometimes")


def test_render_boundaries():
    p = QubitParams(5.4e9)
    prog = render([idle(10e-9), _drive(p, 1e6, 20e-9)], p, SimConfig())
    assert list(prog.boundaries) == [0, 20, 60]
    assert prog.duration == pytest.approx(30e-9)


# ------------------------------------------------------------------ ensembles

MIXED = NoiseModel([PowerLaw(1e12, 0.9, 1e4), LorentzianBump(1e8, 2e6, 0.5e6), White(100.0)])


def test_single_trajectory_ensemble_matches_direct_integration():
    p = QubitParams(5.4e9, epsilon=0.5e9, gamma1=1e5)
    sched = [calibrated_pulse(math.pi / 2, -math.pi / 2, p, DT), _drive(p, 4e6, 1e-6, edge=2.5e-9)]
    cfg = SimConfig(n_trajectories=1, master_seed=9)
    ens = run_ensemble(p, sched, MIXED, MIXED, cfg, record="all")
    prog = render(sched, p, cfg)
    noise = EnsembleNoise(p, MIXED, MIXED, DT, prog.n_steps, 9)
    traces = {ch: NoiseTrace(DT, noise.trace(0, ch), None) for ch in ("delta", "epsilon")}
    direct = integrate_trajectory(p, sched, traces, cfg, record="all")
    assert np.array_equal(ens.mean, direct.mean)


def test_ensemble_is_identical_across_thread_counts():
    p = QubitParams(5.4e9, epsilon=0.5e9, gamma1=1e5)
    sched = [_drive(p, 4e6, 500e-9)]
    runs = [run_ensemble(p, sched, MIXED, MIXED,
                         SimConfig(n_trajectories=200, master_seed=4, threads=t))
            for t in (1, 3)]
    assert np.array_equal(runs[0].mean, runs[1].mean)
    assert np.array_equal(runs[0].stderr, runs[1].stderr)


def test_stderr_shrinks_as_inverse_root_n():
    p = QubitParams(5.4e9)
    model = NoiseModel([Quasistatic(TWO_PI * 1e6)])
    sched = [idle(300e-9)]
    errs = [run_ensemble(p, sched, model, None, SimConfig(n_trajectories=n, include_t1=False),
                         initial=(1.0, 0.0, 0.0), record="final").stderr[-1, 0]
            for n in (200, 800)]
    assert errs[0] / errs[1] == pytest.approx(2.0, rel=0.15)


def test_free_induction_with_static_gaussian_offsets():
    # [DERIVED] <cos(phi t)> for phi ~ N(0, s^2) is exp(-s^2 t^2 / 2)
    s = TWO_PI * 1e6
    p = QubitParams(5.4e9)
    times = np.linspace(0, 400e-9, 9)
    res = run_ensemble(p, [idle(400e-9)], NoiseModel([Quasistatic(s)]), None,
                       SimConfig(n_trajectories=2000, include_t1=False), initial=(1.0, 0.0, 0.0),
                       record=times)
    want = np.exp(-0.5 * (s * res.times) ** 2)
    z = (res.mean[1:, 0] - want[1:]) / res.stderr[1:, 0]
    assert np.all(np.abs(z) < 4)


# ------------------------------------------------------------------ readout

def test_readout_examples():
    assert readout(np.array([-1.0, 0.0, 1.0])) == pytest.approx([0.0, 0.5, 1.0])
    assert readout(1.0, PulseCal(visibility=0.8, offset=0.1)) == pytest.approx(0.9)
    with pytest.raises(ValueError):
        PulseCal(visibility=0.0)
