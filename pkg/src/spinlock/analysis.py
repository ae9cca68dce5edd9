"""Decay fitting, rate-to-spectrum inversion and echo-dip diagnostics."""

from __future__ import annotations

import itertools
import math
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import optimize

from .noisegen import LorentzianBump, NoiseModel, PowerLaw, SpectrumEstimate
from .sequences import DecayCurve
from .theory import filter_function_decay
from .units import TWO_PI


class FitError(RuntimeError):
    """A fit failed to converge; ``diagnostics`` holds optimizer details."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class FitWarning(UserWarning):
    pass


@dataclass
class FitResult:
    model: str
    params: dict
    errors: dict
    covariance: np.ndarray
    residual_rms: float
    chi2_red: float | None = None
    warnings: list = field(default_factory=list)

    @property
    def rate(self) -> float:
        return self.params["rate"]

    @property
    def rate_err(self) -> float:
        return self.errors["rate"]

    def to_dict(self) -> dict:
        return {
            "model": self.model,
            "params": {k: float(v) for k, v in self.params.items()},
            "errors": {k: float(v) for k, v in self.errors.items()},
            "covariance": np.asarray(self.covariance).tolist(),
            "residual_rms": float(self.residual_rms),
            "chi2_red": None if self.chi2_red is None else float(self.chi2_red),
            "warnings": list(self.warnings),
        }


# ------------------------------------------------------------------ decay laws

def _exponential(tau, offset, amp, rate):
    return offset + amp * np.exp(-rate * tau)


def _exp_gaussian(tau, offset, amp, rate, var_nu):
    return offset + amp * np.exp(-rate * tau - 0.5 * TWO_PI**2 * var_nu * tau**2)


def _rabi_full(tau, offset, amp, rate, var_nu, nu_r):
    alg = (1.0 + (TWO_PI * var_nu * tau / nu_r) ** 2) ** -0.25
    return offset + amp * np.exp(-rate * tau) * alg * np.cos(TWO_PI * nu_r * tau)


def _rabi(tau, offset, amp, rate, nu_r):
    return offset + amp * np.exp(-rate * tau) * np.cos(TWO_PI * nu_r * tau)


_LAWS = {
    "exponential": (_exponential, ("offset", "amp", "rate")),
    "exp_gaussian": (_exp_gaussian, ("offset", "amp", "rate", "var_nu")),
    "rabi_full": (_rabi_full, ("offset", "amp", "rate", "var_nu", "nu_r")),
    "rabi": (_rabi, ("offset", "amp", "rate", "nu_r")),
}


def _dominant_frequency(tau, y) -> float:
    """Crude oscillation frequency from a zero-padded periodogram."""
    if tau.size < 4:
        return 1.0 / (tau[-1] - tau[0])
    grid = np.linspace(tau[0], tau[-1], 4 * tau.size)
    yi = np.interp(grid, tau, y - y.mean())
    n = 16 * grid.size
    spec = np.abs(np.fft.rfft(yi, n))
    freqs = np.fft.rfftfreq(n, grid[1] - grid[0])
    return float(freqs[1 + np.argmax(spec[1:])])


def _starts(law, tau, y, hints):
    span = tau[-1] - tau[0] if tau[-1] > tau[0] else tau[-1]
    off0 = float(y[-1])
    amp0 = float(y[0] - y[-1]) or 1e-3
    rates = [hints.get("rate")] if "rate" in hints else [r / span for r in (0.1, 0.5, 1.5, 4.0)]
    out = []
    for r in rates:
        if law == "exponential":
            out.append([off0, amp0, r])
        elif law == "exp_gaussian":
            for v in (0.0, (r / TWO_PI) ** 2):
                out.append([off0, amp0, r, hints.get("var_nu", v)])
        else:
            mid = float(np.mean(y))
            amp = float(y[0] - mid) or 1e-3
            nu = hints.get("nu_r") or _dominant_frequency(tau, y)
            if law == "rabi":
                out.append([mid, amp, r, nu])
            else:
                out.append([mid, amp, r, hints.get("var_nu", 0.0), nu])
    return out


def _bounds(law, names):
    lo = [-np.inf] * len(names)
    hi = [np.inf] * len(names)
    for i, n in enumerate(names):
        if n in ("rate", "var_nu"):
            lo[i] = 0.0
        if n == "nu_r":
            lo[i] = 1e-30
    return lo, hi


def fit_decay(curve: DecayCurve, law: str = "exponential", hints: dict | None = None,
              min_points: int = 6) -> FitResult:
    """Weighted least-squares fit of ``offset + amp * law(tau)``.

    ``curve.stderr`` provides the weights when all entries are positive;
    otherwise the fit is unweighted. Several deterministic starting points
    are tried and the best one kept. ``hints`` may pre-set ``rate``,
    ``var_nu`` or ``nu_r`` starting values.
    """
    if law not in _LAWS:
        raise ValueError(f"unknown decay law {law!r}")
    tau, y = np.asarray(curve.tau, float), np.asarray(curve.value, float)
    if tau.size < min_points:
        raise ValueError(f"need at least {min_points} points, got {tau.size}")
    fn, names = _LAWS[law]
    hints = dict(hints or {})
    weighted = bool(np.all(curve.stderr > 0))
    sigma = curve.stderr if weighted else None
    lo, hi = _bounds(law, names)
    best, best_cost, last_exc = None, np.inf, None
    for p0 in _starts(law, tau, y, hints):
        p0 = np.clip(p0, [l if np.isfinite(l) else -np.inf for l in lo], hi)
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", optimize.OptimizeWarning)
                popt, pcov = optimize.curve_fit(fn, tau, y, p0=p0, sigma=sigma,
                                                absolute_sigma=weighted, bounds=(lo, hi),
                                                maxfev=20000)
        except (RuntimeError, ValueError) as exc:
            last_exc = exc
            continue
        r = (y - fn(tau, *popt)) / (sigma if weighted else 1.0)
        cost = float(r @ r)
        if cost < best_cost:
            best, best_cost = (popt, pcov), cost
    if best is None:
        raise FitError(f"{law} fit did not converge", {"last_error": str(last_exc)})
    popt, pcov = best
    pcov = np.asarray(pcov, dtype=float)
    pcov = 0.5 * (pcov + pcov.T)
    resid = y - fn(tau, *popt)
    dof = max(tau.size - len(names), 1)
    chi2 = best_cost / dof if weighted else None
    errs = np.sqrt(np.clip(np.diag(pcov), 0.0, np.inf))
    params = dict(zip(names, map(float, popt)))
    notes = []
    if params["rate"] * (tau[-1] - tau[0]) < 1.5 and abs(params["amp"]) > 0:
        notes.append("tau span covers fewer than 1.5 decay times")
        warnings.warn(notes[-1], FitWarning, stacklevel=2)
    return FitResult(law, params, dict(zip(names, map(float, errs))), pcov,
                     float(np.sqrt(np.mean(resid**2))), chi2, notes)


def calibrate_rabi_frequency(curve: DecayCurve, nominal: float | None = None) -> FitResult:
    """Fit a short Rabi trace; ``params['nu_r']`` is the measured Rabi frequency."""
    hints = {"nu_r": nominal} if nominal else {}
    return fit_decay(curve, "rabi", hints, min_points=5)


# ------------------------------------------------------------- spectrum inversion

def _reference_value(ref, f: float) -> float:
    if ref is None:
        return 0.0
    if isinstance(ref, NoiseModel):
        return float(ref.psd(f))
    if isinstance(ref, SpectrumEstimate):
        ok = ~ref.flagged & (ref.psd > 0)
        if not np.any(ok):
            raise ValueError("reference spectrum has no usable points")
        lf, lp = np.log(ref.freq[ok]), np.log(ref.psd[ok])
        return float(np.exp(np.interp(math.log(f), lf, lp)))
    if callable(ref):
        return float(ref(f))
    raise TypeError("unsupported reference spectrum type")


def _reference_error(ref, f: float) -> float:
    if isinstance(ref, SpectrumEstimate):
        ok = ~ref.flagged
        return float(np.interp(math.log(f), np.log(ref.freq[ok]), ref.err[ok]))
    return 0.0


def extract_spectrum(rates: Sequence[dict], gamma_1: float, theta, s_delta_ref=None,
                     gamma_1_err: float = 0.0, channel: str | None = None) -> SpectrumEstimate:
    """Invert measured T1rho rates into noise PSD samples at the Rabi frequencies.

    Each entry of ``rates`` has ``nu_R``, ``gamma_1rho`` and ``err``; an
    entry may override ``theta``, ``gamma_1`` and ``gamma_1_err`` when
    points were taken at different biases. At theta = 0 the result is the
    Delta channel, S = 2 Gamma_1rho - Gamma_1. Otherwise the epsilon
    channel is returned, S = (2 Gamma_1rho - Gamma_1 - cos^2 S_Delta) /
    sin^2, with ``s_delta_ref`` (NoiseModel, SpectrumEstimate, callable or
    None for zero) supplying S_Delta. Points with a negative subtraction
    are flagged.
    """
    if not rates:
        raise ValueError("no rates to invert")
    rows = sorted(rates, key=lambda r: r["nu_R"])
    freq, psd, err, flag = [], [], [], []
    for r in rows:
        th = r.get("theta", theta)
        g1 = r.get("gamma_1", gamma_1)
        e1 = r.get("gamma_1_err", gamma_1_err)
        s2 = math.sin(th) ** 2
        ch = channel or ("delta" if s2 == 0 else "epsilon")
        diff = 2.0 * r["gamma_1rho"] - g1
        diff_err = math.hypot(2.0 * r.get("err", 0.0), e1)
        if ch == "delta":
            if s2 > 1e-12:
                raise ValueError("the Delta channel needs theta = 0")
            value, e = diff, diff_err
            flagged = diff < 0
        else:
            if s2 == 0:
                raise ValueError("sin^2(theta) = 0: the epsilon channel is not accessible")
            c2 = math.cos(th) ** 2
            ref = _reference_value(s_delta_ref, r["nu_R"])
            ref_e = _reference_error(s_delta_ref, r["nu_R"])
            value = (diff - c2 * ref) / s2
            e = math.hypot(diff_err, c2 * ref_e) / s2
            flagged = diff < 0 or value < 0
        freq.append(r["nu_R"])
        psd.append(value)
        err.append(e)
        flag.append(flagged)
    return SpectrumEstimate(freq, psd, err, channel or ("delta" if math.sin(theta) == 0 else "epsilon"),
                            flag)


# ------------------------------------------------------------- spectrum model fit

@dataclass
class SpectrumFit:
    model: NoiseModel
    params: dict
    errors: dict
    residual_rms: float
    warnings: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"model": self.model.to_list(),
                "params": {k: float(v) for k, v in self.params.items()},
                "errors": {k: float(v) for k, v in self.errors.items()},
                "residual_rms_log": float(self.residual_rms),
                "warnings": list(self.warnings)}


def _template_psd(f, log_a, alpha, bumps):
    s = np.exp(log_a) / f**alpha
    for s_i, f_i, log_w in bumps:
        w = np.exp(log_w)
        s = s + s_i * w**2 / ((f - f_i) ** 2 + w**2)
    return s


def fit_spectrum_model(est: SpectrumEstimate, n_lorentzians: int = 2, alpha: float = 0.9,
                       fit_alpha: bool = False, f_low: float = 1e3,
                       min_width_fraction: float = 1e-3) -> SpectrumFit:
    """Fit A / f^alpha plus Lorentzian bumps to a spectrum in log space.

    Flagged or non-positive points are excluded. Residuals are
    (log model - log data) / (err / psd). Starting points place bump
    centres at every data frequency in turn and keep the best solution.
    """
    ok = ~est.flagged & (est.psd > 0)
    f, s = est.freq[ok], est.psd[ok]
    rel = np.where(est.err[ok] > 0, est.err[ok] / s, 1.0)
    rel = np.maximum(rel, 1e-6)
    n_par = 1 + int(fit_alpha) + 3 * n_lorentzians
    notes = []
    if f.size < n_par:
        raise ValueError(f"{f.size} usable points cannot constrain {n_par} parameters")
    if f.size < 3 * n_par:
        notes.append(f"only {f.size} points for {n_par} free parameters")
        warnings.warn(notes[-1], FitWarning, stacklevel=2)
    logf = np.log(f)
    f_lo, f_hi = float(f.min()), float(f.max())

    def unpack(p):
        i = 0
        log_a = p[i]; i += 1
        al = alpha
        if fit_alpha:
            al = p[i]; i += 1
        bumps = []
        for _ in range(n_lorentzians):
            bumps.append((p[i], p[i + 1], p[i + 2]))
            i += 3
        return log_a, al, bumps

    def resid(p):
        log_a, al, bumps = unpack(p)
        return (np.log(_template_psd(f, log_a, al, bumps)) - np.log(s)) / rel

    base_a = float(np.median(np.log(s) + alpha * logf))
    lo = [base_a - 30] + ([0.0] if fit_alpha else [])
    hi = [base_a + 30] + ([2.0] if fit_alpha else [])
    for _ in range(n_lorentzians):
        lo += [0.0, 0.5 * f_lo, math.log(min_width_fraction * f_lo)]
        hi += [np.inf, 2.0 * f_hi, math.log(10.0 * f_hi)]
    lo, hi = np.array(lo), np.array(hi)

    excess = np.log(s) + alpha * logf
    cand_idx = sorted(np.argsort(-excess)[: min(8, f.size)].tolist())
    best = None
    combos = itertools.combinations(cand_idx, n_lorentzians) if n_lorentzians else [()]
    for combo in combos:
        p0 = [min(base_a, float(np.min(np.log(s) + alpha * logf)))] + ([alpha] if fit_alpha else [])
        for k in combo:
            p0 += [float(s[k]), float(f[k]), math.log(max(0.3 * f[k], 1.01 * math.exp(lo[-1])))]
        p0 = np.clip(p0, lo + 1e-12 * np.abs(lo), np.where(np.isfinite(hi), hi * (1 - 1e-12), hi))
        try:
            sol = optimize.least_squares(resid, p0, bounds=(lo, hi), x_scale="jac",
                                         max_nfev=4000)
        except ValueError:
            continue
        if best is None or sol.cost < best.cost - 1e-12:
            best = sol
    if best is None or not best.success:
        raise FitError("spectrum fit did not converge",
                       {"message": getattr(best, "message", "no successful start")})
    log_a, al, bumps = unpack(best.x)
    for s_i, f_i, log_w in bumps:
        if s_i > 0 and math.exp(log_w) <= min_width_fraction * f_lo * 1.0001:
            raise FitError("degenerate Lorentzian: width collapsed to zero",
                           {"center": f_i, "width": math.exp(log_w)})
    J = best.jac
    dof = max(f.size - n_par, 1)
    try:
        cov = np.linalg.pinv(J.T @ J)
    except np.linalg.LinAlgError:
        cov = np.full((n_par, n_par), np.nan)
    scale = max(2.0 * best.cost / dof, 1.0)
    perr = np.sqrt(np.clip(np.diag(cov) * scale, 0.0, np.inf))
    params = {"A": math.exp(log_a), "alpha": float(al)}
    errors = {"A": float(math.exp(log_a) * perr[0]),
              "alpha": float(perr[1]) if fit_alpha else 0.0}
    comps = [PowerLaw(math.exp(log_a), al, f_low)]
    off = 1 + int(fit_alpha)
    for k, (s_i, f_i, log_w) in enumerate(bumps, start=1):
        w = math.exp(log_w)
        s_i, f_i = float(s_i), float(f_i)
        params[f"S{k}"], params[f"F{k}"], params[f"W{k}"] = s_i, f_i, w
        j = off + 3 * (k - 1)
        errors[f"S{k}"] = float(perr[j])
        errors[f"F{k}"] = float(perr[j + 1])
        errors[f"W{k}"] = float(w * perr[j + 2])
        comps.append(LorentzianBump(s_i, f_i, w))
    rms = float(np.sqrt(np.mean((best.fun * rel) ** 2)))
    return SpectrumFit(NoiseModel(comps), params, errors, rms, notes)


def relative_differences(a: dict, b: dict) -> dict:
    """|a - b| / |b| for every key present in both parameter sets."""
    return {k: abs(a[k] - b[k]) / abs(b[k]) for k in a if k in b and b[k] != 0}


# --------------------------------------------------------------------- echo dip

@dataclass
class EchoDipReport:
    tau: np.ndarray
    coherence: np.ndarray
    baseline: np.ndarray
    dip_tau: float | None
    raw_dip_tau: float | None

    def to_dict(self) -> dict:
        return {"tau_s": self.tau.tolist(), "coherence": self.coherence.tolist(),
                "baseline": self.baseline.tolist(), "dip_tau_s": self.dip_tau,
                "raw_dip_tau_s": self.raw_dip_tau}


def _interior_minimum(tau, y) -> float | None:
    """Location of the deepest interior local minimum, refined by a parabola."""
    idx = [i for i in range(1, y.size - 1) if y[i] < y[i - 1] and y[i] <= y[i + 1]]
    if not idx:
        return None
    i = min(idx, key=lambda k: y[k])
    x0, x1, x2 = tau[i - 1], tau[i], tau[i + 1]
    y0, y1, y2 = y[i - 1], y[i], y[i + 1]
    den = (x0 - x1) * (x0 - x2) * (x1 - x2)
    a = (x2 * (y1 - y0) + x1 * (y0 - y2) + x0 * (y2 - y1)) / den
    b = (x2**2 * (y0 - y1) + x1**2 * (y2 - y0) + x0**2 * (y1 - y2)) / den
    if a <= 0:
        return float(x1)
    return float(np.clip(-b / (2 * a), x0, x2))


def echo_dip_report(model: NoiseModel, tau_grid, protocol: str = "spin_echo",
                    weight: float = 1.0, n_pi: int = 1) -> EchoDipReport:
    """Echo coherence for ``model`` and the signature of its Lorentzian bumps.

    ``weight`` scales the model to the longitudinal coupling (sin^2 theta
    for flux noise away from the symmetry point). ``dip_tau`` is the
    interior minimum of the coherence divided by the bump-free baseline,
    i.e. where the bumps cost the most coherence; ``raw_dip_tau`` is an
    interior minimum of the coherence itself, if one exists.
    """
    tau = np.asarray(tau_grid, dtype=float)
    m = model.scaled(weight)
    coh = filter_function_decay(m, protocol, tau, n_pi)
    smooth = NoiseModel([c for c in m.components if not isinstance(c, LorentzianBump)])
    base = filter_function_decay(smooth, protocol, tau, n_pi) if smooth else np.ones_like(tau)
    has_bump = len(smooth.components) != len(m.components)
    ratio = coh / np.maximum(base, 1e-300)
    dip = _interior_minimum(tau, ratio) if has_bump else None
    return EchoDipReport(tau, np.atleast_1d(coh), np.atleast_1d(base), dip,
                         _interior_minimum(tau, np.atleast_1d(coh)))
