"""Measurement workflows built from the lower layers.

``run_spectroscopy`` turns a Rabi-frequency grid into a noise spectrum:
Gamma_1 by inversion recovery, the Rabi frequency by a short nutation
trace, Gamma_1rho from an interleaved SL-5 pair, then the algebraic
inversion and an optional template fit. ``predict_echo`` evaluates the
filter-function echo decay of a noise model and optionally checks it
against a Monte-Carlo run.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from .analysis import (
    EchoDipReport, FitError, FitWarning, SpectrumFit, calibrate_rabi_frequency, echo_dip_report,
    extract_spectrum, fit_decay, fit_spectrum_model,
)
from .config import EchoConfig, RunConfig, SpectroscopyConfig
from .dynamics import SimConfig, calibrated_pulse, idle, run_ensemble, PulseSegment
from .model import QubitParams, amplitude_for_rabi
from .noisegen import NoiseModel, SpectrumEstimate, _key_int, psd_variance
from .sequences import X, DecayCurve, ExperimentSpec, run_experiment
from .theory import RegimeWarning, filter_function_decay

log = logging.getLogger("spinlock")


def derive_seed(master: int, *keys) -> int:
    """Stable 63-bit seed for a sub-task identified by ``keys``."""
    ss = np.random.SeedSequence(_key_int(master), spawn_key=tuple(_key_int(k) for k in keys))
    return int(ss.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))


def _sim(cfg: SimConfig, seed: int, n_traj: int | None = None) -> SimConfig:
    return replace(cfg, master_seed=seed, n_trajectories=n_traj or cfg.n_trajectories)


# ----------------------------------------------------------------- building blocks

def measure_gamma1(params: QubitParams, models: dict, sim: SimConfig, tau=None,
                   n_trajectories: int = 64, seed: int = 0) -> tuple[float, float, DecayCurve]:
    """Inversion-recovery estimate of Gamma_1 from a single recorded run."""
    if params.gamma1 <= 0 and tau is None:
        return 0.0, 0.0, DecayCurve([], [], [], "inversion_recovery")
    if tau is None:
        tau = np.linspace(0.05, 3.0, 12) / params.gamma1
    tau = np.asarray(tau, dtype=float)
    pi = calibrated_pulse(math.pi, X, params, sim.dt)
    sched = [pi, idle(float(tau[-1]) + sim.dt)]
    t0 = pi.duration
    res = run_ensemble(params, sched, models.get("delta"), models.get("epsilon"),
                       _sim(sim, seed, n_trajectories), record=t0 + tau)
    z = res.mean[:, 2]
    curve = DecayCurve(tau, 0.5 * (1 + z), 0.5 * res.stderr[:, 2], "inversion_recovery")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", FitWarning)
        fit = fit_decay(curve, "exponential", {"rate": params.gamma1 or None})
    return fit.rate, fit.rate_err, curve


def calibrate_rabi(params: QubitParams, nu_r: float, models: dict, sim: SimConfig,
                   n_trajectories: int = 64, seed: int = 0, periods: float = 5.0,
                   per_period: int = 12) -> tuple[float, float]:
    """Measured Rabi frequency for the drive amplitude that nominally gives ``nu_r``."""
    amp = amplitude_for_rabi(nu_r, params)
    dur = periods / nu_r
    tau = np.linspace(0.0, dur, int(periods * per_period) + 1)[1:]
    sched = [PulseSegment("flat_top", dur + sim.dt, amp, X, label="drive_X")]
    res = run_ensemble(params, sched, models.get("delta"), models.get("epsilon"),
                       _sim(sim, seed, n_trajectories), record=tau)
    curve = DecayCurve(tau, 0.5 * (1 + res.mean[:, 2]), 0.5 * res.stderr[:, 2], "rabi")
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", FitWarning)
            fit = calibrate_rabi_frequency(curve, nu_r)
    except FitError:
        log.warning("Rabi calibration at %.4g Hz failed; using the nominal value", nu_r)
        return nu_r, 0.0
    got = fit.params["nu_r"]
    if not 0.8 * nu_r < got < 1.2 * nu_r:
        log.warning("Rabi calibration at %.4g Hz gave %.4g Hz; using the nominal value", nu_r, got)
        return nu_r, 0.0
    return got, fit.errors["nu_r"]


def auto_epsilon(params: QubitParams, model_epsilon: NoiseModel | None, nu_r: float,
                 ratio: float, max_sin2: float, max_tilt: float = 0.1) -> float:
    """Bias at which the epsilon channel adds about ``ratio * Gamma_1`` to Gamma_1rho.

    The prior spectrum ``model_epsilon`` sets the target sin^2(theta) =
    2 ratio Gamma_1 / S_eps(nu_R). Two caps apply: ``max_sin2``, and the
    requirement that noise slower than nu_R tilts the locking field by at
    most ``max_tilt`` rad rms. The second cap matters at low nu_R, where
    the tilt would otherwise bias Gamma_1rho at second order.
    """
    s = float(model_epsilon.psd(nu_r)) if model_epsilon else 0.0
    if s <= 0 or params.gamma1 <= 0:
        s2 = max_sin2
    else:
        s2 = min(2.0 * ratio * params.gamma1 / s, max_sin2)
    if model_epsilon:
        slow = psd_variance(model_epsilon, f_max=nu_r)
        if slow > 0:
            s2 = min(s2, (max_tilt * 2 * math.pi * nu_r) ** 2 / slow)
    return params.delta * math.tan(math.asin(math.sqrt(s2)))


def _predicted_rate(params: QubitParams, models: dict, nu_r: float) -> float:
    th = params.theta
    s = 0.0
    if models.get("delta"):
        s += math.cos(th) ** 2 * float(models["delta"].psd(nu_r))
    if models.get("epsilon"):
        s += math.sin(th) ** 2 * float(models["epsilon"].psd(nu_r))
    return 0.5 * params.gamma1 + 0.5 * s


# ----------------------------------------------------------------- spectroscopy

@dataclass
class SpectroscopyPoint:
    channel: str
    nu_r_nominal: float
    nu_r: float
    nu_r_err: float
    epsilon: float
    theta: float
    gamma_1: float
    gamma_1_err: float
    gamma_1rho: float
    gamma_1rho_err: float
    curves: object = None

    def to_dict(self) -> dict:
        d = {k: float(getattr(self, k)) for k in (
            "nu_r_nominal", "nu_r", "nu_r_err", "epsilon", "theta", "gamma_1", "gamma_1_err",
            "gamma_1rho", "gamma_1rho_err")}
        d["channel"] = self.channel
        return d


@dataclass
class SpectroscopyResult:
    points: list
    estimates: dict
    fit: SpectrumFit | None
    warnings: list = field(default_factory=list)


def _lock_taus(sc: SpectroscopyConfig, rate: float) -> tuple:
    if sc.tau is not None:
        return tuple(sc.tau)
    t_max = sc.decay_times / rate
    return tuple(np.linspace(sc.tau_min, max(t_max, 2 * sc.tau_min), sc.n_tau))


def _measure_channel(cfg: RunConfig, channel: str, notes: list) -> list:
    sc = cfg.spectroscopy
    models = cfg.models
    master = cfg.sim.master_seed
    points = []
    g1_once = None
    for i, nu in enumerate(sc.rabi):
        if channel == "delta":
            eps = 0.0
        elif sc.epsilon is not None:
            eps = sc.epsilon[0] if len(sc.epsilon) == 1 else sc.epsilon[i]
        else:
            eps = auto_epsilon(cfg.qubit, cfg.noise_epsilon, nu, sc.target_gamma_nu_ratio,
                               sc.max_sin2_theta, sc.max_tilt)
        if channel == "epsilon" and eps == 0.0:
            raise ValueError("the epsilon channel needs a nonzero bias")
        params = replace(cfg.qubit, epsilon=eps)

        if sc.t1_mode == "once" and g1_once is not None:
            g1, g1_err = g1_once
        else:
            g1, g1_err, _ = measure_gamma1(params, models, cfg.sim, sc.t1_tau, sc.t1_trajectories,
                                           derive_seed(master, "t1", channel, i))
            g1_once = (g1, g1_err)

        if sc.rabi_calibration:
            nu_meas, nu_err = calibrate_rabi(params, nu, models, cfg.sim,
                                             sc.calibration_trajectories,
                                             derive_seed(master, "rabi", channel, i))
        else:
            nu_meas, nu_err = nu, 0.0

        taus = _lock_taus(sc, _predicted_rate(params, models, nu))
        spec = ExperimentSpec("sl5_interleaved", taus, lock_rabi=nu, gap=sc.gap,
                              edge_sigma=sc.edge_sigma)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RegimeWarning)
            curves = run_experiment(spec, params, models,
                                    _sim(cfg.sim, derive_seed(master, "sl5", channel, i)),
                                    cfg.readout)
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always", FitWarning)
            fit = fit_decay(curves.average, "exponential",
                            {"rate": _predicted_rate(params, models, nu)})
        for w in caught:
            notes.append(f"{channel} point {i} ({nu:.4g} Hz): {w.message}")
        log.info("%s point %d: nu_R=%.4g Hz eps=%.4g Hz Gamma_1rho=%.4g +- %.2g 1/s",
                 channel, i, nu_meas, eps, fit.rate, fit.rate_err)
        points.append(SpectroscopyPoint(channel, nu, nu_meas, nu_err, eps, params.theta, g1,
                                        g1_err, fit.rate, fit.rate_err, curves))
    return points


def _estimate(points: list, channel: str, ref) -> SpectrumEstimate:
    rows = [{"nu_R": p.nu_r, "gamma_1rho": p.gamma_1rho, "err": p.gamma_1rho_err,
             "theta": p.theta, "gamma_1": p.gamma_1, "gamma_1_err": p.gamma_1_err}
            for p in points]
    theta = points[0].theta
    return extract_spectrum(rows, points[0].gamma_1, theta, ref, points[0].gamma_1_err, channel)


def run_spectroscopy(cfg: RunConfig) -> SpectroscopyResult:
    """Spectrum estimate (and template fit) over the configured Rabi grid."""
    sc = cfg.spectroscopy
    if sc is None:
        raise ValueError("config has no spectroscopy section")
    notes: list = []
    points, estimates = [], {}
    need_delta = sc.channel in ("delta", "both") or (
        sc.channel == "epsilon" and sc.delta_reference == "measure")
    if need_delta:
        dp = _measure_channel(cfg, "delta", notes)
        points += dp
        estimates["delta"] = _estimate(dp, "delta", None)
    if sc.channel in ("epsilon", "both"):
        ep = _measure_channel(cfg, "epsilon", notes)
        points += ep
        if sc.delta_reference == "measure":
            ref = estimates["delta"]
        else:
            ref = cfg.noise_delta or None
        estimates["epsilon"] = _estimate(ep, "epsilon", ref)

    target = "epsilon" if "epsilon" in estimates else "delta"
    fit = None
    est = estimates[target]
    n_par = 1 + int(sc.fit_alpha) + 3 * sc.n_lorentzians
    usable = int(np.sum(~est.flagged & (est.psd > 0)))
    if usable < n_par:
        msg = f"spectrum fit skipped: {usable} usable points for {n_par} parameters"
        notes.append(msg)
        log.warning(msg)
    else:
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always", FitWarning)
            try:
                fit = fit_spectrum_model(est, sc.n_lorentzians, sc.alpha, sc.fit_alpha,
                                         sc.fit_f_low)
            except (ValueError, FitError) as exc:
                notes.append(f"spectrum fit failed: {exc}")
                log.warning("spectrum fit failed: %s", exc)
        notes += [str(w.message) for w in caught]
    return SpectroscopyResult(points, estimates, fit, notes)


# ----------------------------------------------------------------- echo prediction

def longitudinal_model(params: QubitParams, model_delta: NoiseModel | None,
                       model_epsilon: NoiseModel | None) -> NoiseModel:
    """Noise along the qubit quantization axis at the bias of ``params``."""
    th = params.theta
    out = NoiseModel()
    if model_delta:
        out = out + model_delta.scaled(math.cos(th) ** 2)
    if model_epsilon:
        out = out + model_epsilon.scaled(math.sin(th) ** 2)
    return out


@dataclass
class EchoPrediction:
    tau: np.ndarray
    coherence: np.ndarray
    report: EchoDipReport
    mc: DecayCurve | None = None
    mc_analytic: np.ndarray | None = None

    @property
    def mc_zscores(self) -> np.ndarray | None:
        if self.mc is None:
            return None
        err = np.where(self.mc.stderr > 0, self.mc.stderr, np.inf)
        return (self.mc.value - self.mc_analytic) / err


def predict_echo(cfg: RunConfig) -> EchoPrediction:
    """Filter-function echo decay for the configured noise, plus an optional MC check."""
    ec: EchoConfig = cfg.echo
    if ec is None:
        raise ValueError("config has no echo section")
    params = cfg.qubit if ec.epsilon is None else replace(cfg.qubit, epsilon=ec.epsilon)
    lmodel = longitudinal_model(params, cfg.noise_delta, cfg.noise_epsilon)
    tau = np.asarray(ec.tau)
    report = echo_dip_report(lmodel, tau, ec.protocol, 1.0, ec.n_pi)
    pred = EchoPrediction(tau, report.coherence, report)
    if ec.monte_carlo:
        mc_tau = np.asarray(ec.mc_tau if ec.mc_tau is not None else ec.tau)
        spec = ExperimentSpec(ec.protocol, tuple(mc_tau), n_pi=ec.n_pi)
        # energy relaxation is switched off so the check isolates dephasing
        sim = replace(_sim(cfg.sim, derive_seed(cfg.sim.master_seed, "echo_mc"),
                           ec.n_trajectories), include_t1=False)
        curve = run_experiment(spec, params, cfg.models, sim)
        # the sequences end along +Z for full coherence, so C = 2P - 1
        pred.mc = DecayCurve(curve.tau, 2 * curve.value - 1, 2 * curve.stderr, "echo_mc")
        # the reference counts the noise seen during the simulated finite pulses
        pred.mc_analytic = filter_function_decay(lmodel, ec.protocol, mc_tau, ec.n_pi,
                                                 pulse_sigma=spec.pulse_sigma, dt=sim.dt)
    return pred
