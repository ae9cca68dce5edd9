"""Closed-form relaxation theory for the driven qubit.

Rates follow from the longitudinal (z') and transverse (x') qubit-frame
spectra. By default the transverse spectrum at the qubit frequency is not
taken from a noise model but fixed by the phenomenological Gamma_1 through
S_x'(nu_q) = 2 Gamma_1.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, replace

import numpy as np
from scipy import integrate

from .model import DriveParams, QubitParams
from .noisegen import LorentzianBump, NoiseModel, PowerLaw, Quasistatic, RtnLorentzian, White
from .units import ELECTRON_GYRO_HZ_PER_T, TWO_PI, thermal_polarization


class RegimeWarning(UserWarning):
    """Rates are not small compared with the Rabi frequency."""


class NonConvergentError(ArithmeticError):
    pass


@dataclass(frozen=True)
class FramePsd:
    s_xprime: float
    s_zprime: float


@dataclass(frozen=True)
class GbeRates:
    gamma_X: float
    gamma_Y: float
    gamma_Z: float
    gamma_1rho: float
    gamma_nu: float
    gamma_rabi_dagger: float
    gamma_phi_rho: float
    full: "GbeRates | None" = None

    def __post_init__(self):
        for name in ("gamma_X", "gamma_Y", "gamma_Z", "gamma_1rho", "gamma_nu",
                     "gamma_rabi_dagger", "gamma_phi_rho"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")

    @property
    def gamma1(self) -> float:
        """Free-evolution relaxation rate implied by the weak-drive forms."""
        return self.gamma_Z


def _psd(model: NoiseModel | None, f: float) -> float:
    if model is None:
        return 0.0
    return float(model.psd(f))


def frame_psd(model_delta: NoiseModel | None, model_epsilon: NoiseModel | None,
              theta: float, f: float) -> FramePsd:
    """Qubit-frame transverse and longitudinal spectra at frequency f > 0."""
    if not f > 0:
        raise ValueError("frequency must be positive")
    sd = _psd(model_delta, f)
    se = _psd(model_epsilon, f)
    s2, c2 = math.sin(theta) ** 2, math.cos(theta) ** 2
    return FramePsd(s2 * sd + c2 * se, c2 * sd + s2 * se)


def weak_drive_rates(gamma1: float, gamma_nu: float) -> GbeRates:
    """Rates for nu_R << nu_q given Gamma_1 and Gamma_nu."""
    g1rho = 0.5 * gamma1 + gamma_nu
    return GbeRates(
        gamma_X=g1rho,
        gamma_Y=0.5 * gamma1 + gamma_nu,
        gamma_Z=gamma1,
        gamma_1rho=g1rho,
        gamma_nu=gamma_nu,
        gamma_rabi_dagger=0.75 * gamma1 + 0.5 * gamma_nu,
        gamma_phi_rho=0.5 * gamma1,
    )


def gbe_rates(params: QubitParams, drive: DriveParams, model_delta: NoiseModel | None = None,
              model_epsilon: NoiseModel | None = None,
              transverse_from_models: bool = False) -> GbeRates:
    """Depolarization rates of the spin-locked / Rabi-driven qubit.

    The returned object holds the weak-drive forms; ``.full`` holds the
    general expressions evaluated with S_x' at nu_q and nu_q +- nu_R. With
    ``transverse_from_models=False`` (default) every S_x' value is replaced
    by 2 Gamma_1 from ``params``; otherwise it is read from the noise
    models and Gamma_1 = S_x'(nu_q) / 2.
    """
    nu_r = drive.rabi(params)
    if not nu_r > 0:
        raise ValueError("rates need a positive Rabi frequency")
    theta, nu_q = params.theta, params.nu_q
    s_z = frame_psd(model_delta, model_epsilon, theta, nu_r).s_zprime
    if transverse_from_models:
        sx_q = frame_psd(model_delta, model_epsilon, theta, nu_q).s_xprime
        sx_p = frame_psd(model_delta, model_epsilon, theta, nu_q + nu_r).s_xprime
        sx_m = frame_psd(model_delta, model_epsilon, theta, nu_q - nu_r).s_xprime
        gamma1 = 0.5 * sx_q
    else:
        gamma1 = params.gamma1
        sx_q = sx_p = sx_m = 2.0 * gamma1
    side = 0.125 * (sx_p + sx_m)
    g_x = side + 0.5 * s_z
    g_y = 0.25 * sx_q + 0.5 * s_z
    g_z = 0.25 * sx_q + side
    full = GbeRates(g_x, g_y, g_z, g_x, 0.5 * s_z, 0.5 * (g_y + g_z), 0.25 * sx_q)
    weak = weak_drive_rates(gamma1, 0.5 * s_z)
    rate_max = max(full.gamma_X, full.gamma_Y, full.gamma_Z)
    if nu_r < 10.0 * rate_max:
        warnings.warn(f"nu_R={nu_r:g} Hz is not large against the rates ({rate_max:g} 1/s)",
                      RegimeWarning, stacklevel=2)
    return replace(weak, full=full)


@dataclass(frozen=True)
class SteadyState:
    sx_ss: float
    sy_ss: float
    sz_ss: float
    sz_prime_ss: float
    sx_first_order: float
    eta: float


def steady_state(params: QubitParams, drive: DriveParams, model_delta: NoiseModel | None = None,
                 model_epsilon: NoiseModel | None = None, temperature: float | None = None,
                 polarizations: tuple | None = None) -> SteadyState:
    """Long-time polarization of the locked qubit under a small detuning.

    ``sz_prime_ss`` is the polarization along the tilted effective field
    built from the thermal factors tanh(h nu / 2 k T) at nu_q and nu_R;
    ``polarizations`` overrides those two factors. The X component points
    against the detuning: ``sx_ss = -cos(eta) * sz_prime_ss``, and
    ``sx_first_order = -sin(eta) S_x' / (S_x'/2 + S_z')``.
    """
    nu_r = drive.rabi(params)
    if not nu_r > 0:
        raise ValueError("steady state needs a positive Rabi frequency")
    eta = math.atan(drive.detuning(params) / nu_r)
    temp = params.temperature if temperature is None else temperature
    if polarizations is None:
        p_q = thermal_polarization(params.nu_q, temp)
        p_r = thermal_polarization(nu_r, temp)
    else:
        p_q, p_r = polarizations
    sx_q = 2.0 * params.gamma1
    s_z = frame_psd(model_delta, model_epsilon, params.theta, nu_r).s_zprime
    rate_max = max(0.5 * sx_q + 0.5 * s_z, 1e-300)
    if nu_r < 10.0 * rate_max:
        warnings.warn("weak-coupling condition nu_R >> rates is violated", RegimeWarning,
                      stacklevel=2)
    se, ce2 = math.sin(eta), math.cos(eta) ** 2
    denom = 0.5 * (1.0 + se * se) * sx_q + ce2 * s_z
    if denom == 0:
        return SteadyState(0.0, 0.0, 0.0, 0.0, 0.0, eta)
    szp = (se * sx_q * p_q + ce2 * s_z * p_r) / denom
    first = -se * sx_q / (0.5 * sx_q + s_z)
    return SteadyState(-math.cos(eta) * szp, 0.0, 0.0, szp, first, eta)


def sl5_signals(gamma_1rho: float, sx_ss: float, tau, visibility: float = 1.0,
                offset: float = 0.0):
    """Readout of the a and b halves of the interleaved pair and their mean.

    The a half locks along +X, the b half along -X and reads out -X.
    """
    tau = np.asarray(tau, dtype=float)
    decay = np.exp(-gamma_1rho * tau)
    x_a = sx_ss + (1.0 - sx_ss) * decay
    x_b = sx_ss + (-1.0 - sx_ss) * decay
    p_a = offset + visibility * (1.0 + x_a) / 2.0
    p_b = offset + visibility * (1.0 - x_b) / 2.0
    return p_a, p_b, 0.5 * (p_a + p_b)


def rabi_algebraic_factor(var_nu: float, nu_r: float, tau):
    """[1 + (2 pi <dnu^2> tau / nu_R)^2]^(-1/4)."""
    tau = np.asarray(tau, dtype=float)
    return (1.0 + (TWO_PI * var_nu * tau / nu_r) ** 2) ** -0.25


_DECAY_PROTOCOLS = ("inversion_recovery", "t1", "fid", "ramsey", "t1rho", "spin_lock",
                    "sl3", "sl5a", "sl5b", "rabi", "rabi_envelope")


def decay_law(protocol: str, params: QubitParams, drive: DriveParams, moments: dict,
              rates: GbeRates, tau):
    """Normalized signal predicted for ``protocol`` after delay ``tau``.

    ``moments`` holds ``var_nu`` and ``var_nuR`` in Hz^2 (quasistatic
    variances of the detuning and of the Rabi frequency).
    """
    tau = np.asarray(tau, dtype=float)
    if np.any(tau < 0):
        raise ValueError("tau must be non-negative")
    var_nu = float(moments.get("var_nu", 0.0))
    var_nur = float(moments.get("var_nuR", 0.0))
    gamma1 = rates.gamma_Z
    if protocol in ("inversion_recovery", "t1"):
        return np.exp(-gamma1 * tau)
    if protocol in ("fid", "ramsey"):
        dnu = drive.detuning(params)
        return (np.exp(-0.5 * gamma1 * tau - 0.5 * TWO_PI**2 * var_nu * tau**2)
                * np.cos(TWO_PI * dnu * tau))
    if protocol in ("t1rho", "spin_lock", "sl3", "sl5a", "sl5b"):
        return np.exp(-rates.gamma_1rho * tau)
    if protocol in ("rabi", "rabi_envelope"):
        nu_r = drive.rabi(params)
        env = (np.exp(-rates.gamma_rabi_dagger * tau - 0.5 * TWO_PI**2 * var_nur * tau**2)
               * rabi_algebraic_factor(var_nu, nu_r, tau))
        return env if protocol == "rabi_envelope" else env * np.cos(TWO_PI * nu_r * tau)
    raise ValueError(f"no decay law for protocol {protocol!r}")


# ---------------------------------------------------------------- filter functions

def switching_times(protocol: str, tau: float, n_pi: int = 1) -> np.ndarray:
    """Instants in (0, tau) where the toggling function flips sign."""
    if protocol in ("ramsey", "fid"):
        return np.array([])
    if protocol == "spin_echo":
        return np.array([tau / 2])
    if protocol == "cpmg":
        if n_pi < 1:
            raise ValueError("cpmg needs n_pi >= 1")
        return tau * (np.arange(n_pi) + 0.5) / n_pi
    raise ValueError(f"no filter function for protocol {protocol!r}")


@dataclass(frozen=True)
class Toggling:
    """Piecewise-constant toggling function: ``values[j]`` on [edges[j], edges[j+1])."""

    edges: np.ndarray
    values: np.ndarray

    @property
    def duration(self) -> float:
        return float(self.edges[-1] - self.edges[0])

    @property
    def area(self) -> float:
        return float(np.sum(self.values * np.diff(self.edges)))

    @property
    def jumps(self) -> np.ndarray:
        """Steps of y(t) at every edge, including the switch-on and switch-off."""
        return np.diff(np.concatenate(([0.0], self.values, [0.0])))


# rotation angles (signed, about the y axis) of each protocol's pulses
def _pulse_train(protocol: str, tau: float, n_pi: int):
    half = math.pi / 2
    if protocol in ("ramsey", "fid"):
        return [half, tau, half]
    if protocol == "spin_echo":
        return [half, tau / 2, math.pi, tau / 2, -half]
    if protocol == "cpmg":
        if n_pi < 1:
            raise ValueError("cpmg needs n_pi >= 1")
        out = [half, tau / (2 * n_pi)]
        for i in range(n_pi):
            out += [math.pi, tau / n_pi if i < n_pi - 1 else tau / (2 * n_pi)]
        return out + [-half if n_pi % 2 else half]
    raise ValueError(f"no filter function for protocol {protocol!r}")


def toggling_function(protocol: str, tau: float, n_pi: int = 1,
                      pulse_sigma: float | None = None, dt: float = 0.5e-9) -> Toggling:
    """Sensitivity y(t) of the echo phase to longitudinal noise.

    With ``pulse_sigma=None`` pulses are instantaneous and y = +-1 over the
    free evolution of total length ``tau``. Otherwise every pulse is the
    truncated Gaussian of the simulator (duration 4 sigma, sampled at
    ``dt``) and y(t) = sin(phi(t)), phi being the rotation accumulated about
    the pulse axis; this first-order toggling-frame weight also counts the
    noise picked up while the pulses are on.
    """
    train = _pulse_train(protocol, tau, n_pi)
    if pulse_sigma is None:
        edges = np.concatenate(([0.0], switching_times(protocol, tau, n_pi), [tau]))
        return Toggling(edges, (-1.0) ** np.arange(edges.size - 1))
    from .dynamics import PulseSegment, sampled_envelope

    g = sampled_envelope(PulseSegment("gaussian_pulse", 4 * pulse_sigma, 1.0,
                                      sigma=pulse_sigma), dt)
    step = 4 * pulse_sigma / g.size
    frac = np.cumsum(g) / g.sum()
    frac_mid = frac - 0.5 * g / g.sum()
    edges, values, phi, t = [0.0], [], 0.0, 0.0
    for k, item in enumerate(train):
        if k % 2 == 0:
            values.extend(np.sin(phi + item * frac_mid))
            edges.extend(t + step * np.arange(1, g.size + 1))
            phi += item
            t += g.size * step
        else:
            values.append(math.sin(phi))
            t += item
            edges.append(t)
    return Toggling(np.asarray(edges), np.asarray(values))


def toggling_weight(f, tog: Toggling, block: int = 4096):
    """|Y(f)|^2 (s^2) for a piecewise-constant toggling function."""
    f = np.atleast_1d(np.asarray(f, dtype=float))
    d = tog.jumps
    keep = d != 0.0
    edges, d = tog.edges[keep], d[keep]
    out = np.empty_like(f)
    small = np.abs(f) * tog.duration < 1e-6
    out[small] = tog.area**2
    idx = np.flatnonzero(~small)
    for start in range(0, idx.size, block):
        sel = idx[start:start + block]
        w = TWO_PI * f[sel]
        # summation by parts: Y = (1 / i w) sum_k d_k exp(-i w t_k)
        y = np.exp(-1j * np.outer(w, edges)) @ d
        out[sel] = (y.real**2 + y.imag**2) / w**2
    return out


def filter_weight(f, tau: float, protocol: str = "ramsey", n_pi: int = 1,
                  pulse_sigma: float | None = None, dt: float = 0.5e-9):
    """|Y(f, tau)|^2 of the sequence's toggling function (s^2)."""
    return toggling_weight(f, toggling_function(protocol, tau, n_pi, pulse_sigma, dt))


def _features(model: NoiseModel) -> list:
    pts = []
    for c in model.components:
        if isinstance(c, LorentzianBump) and c.center > 0:
            pts += [c.center - c.width, c.center, c.center + c.width]
        elif isinstance(c, PowerLaw):
            pts.append(c.f_low)
            if math.isfinite(c.f_high):
                pts.append(c.f_high)
    return [p for p in pts if p > 0]


_GL_X, _GL_W = np.polynomial.legendre.leggauss(16)


def _max_step(model: NoiseModel, a: float, lobe: float) -> float:
    """Largest quadrature panel starting at ``a`` that resolves every feature."""
    step = 0.25 * lobe
    for c in model.components:
        if isinstance(c, LorentzianBump):
            step = min(step, max(0.5 * c.width, 0.25 * abs(a - c.center)))
        elif isinstance(c, PowerLaw) and a >= c.f_low:
            step = min(step, 0.5 * a)
        elif isinstance(c, RtnLorentzian) and c.switch_rate > 0:
            corner = c.switch_rate / math.pi
            step = min(step, 0.5 * max(corner, a))
    return step


def _panel_edges(model: NoiseModel, breaks: list, lobe: float) -> np.ndarray:
    edges = [breaks[0]]
    for b in breaks[1:]:
        a = edges[-1]
        while a < b:
            a = min(b, a + _max_step(model, a, lobe))
            edges.append(a)
    return np.asarray(edges)


def _chi_gauss(model: NoiseModel, tog: Toggling, nodes: list) -> float:
    edges = _panel_edges(model, nodes, 1.0 / tog.duration)
    mid, half = 0.5 * (edges[1:] + edges[:-1]), 0.5 * np.diff(edges)
    f = (mid[:, None] + half[:, None] * _GL_X[None, :]).ravel()
    w = (half[:, None] * _GL_W[None, :]).ravel()
    return float(np.sum(w * model.psd(f) * toggling_weight(f, tog)))


def _chi_quad(model: NoiseModel, tog: Toggling, nodes: list, rtol: float) -> float:
    def integrand(f):
        return float(model.psd(f) * toggling_weight(f, tog)[0])

    total = 0.0
    for a, b in zip(nodes[:-1], nodes[1:]):
        val, _ = integrate.quad(integrand, a, b, epsrel=rtol, epsabs=0.0, limit=200)
        total += val
    return total


def dephasing_exponent(model: NoiseModel, protocol: str, tau: float, n_pi: int = 1,
                       n_lobes: int = 60, rtol: float = 1e-6, method: str = "gauss",
                       pulse_sigma: float | None = None, dt: float = 0.5e-9) -> float:
    """chi(tau) = integral_0^inf S(f) |Y(f, tau)|^2 df plus quasistatic offsets.

    ``method="gauss"`` integrates with fixed 16-point Gauss-Legendre panels
    sized to the filter lobes and to every spectral feature, vectorized over
    all panels. ``method="quad"`` runs adaptive quadrature lobe by lobe; it
    is much slower and serves as a reference. ``pulse_sigma`` switches to
    finite Gaussian pulses (see :func:`toggling_function`).
    """
    if not tau > 0:
        raise ValueError("tau must be positive")
    if method not in ("gauss", "quad"):
        raise ValueError(f"unknown method {method!r}")
    tog = toggling_function(protocol, tau, n_pi, pulse_sigma, dt)
    chi = 0.0
    for c in model.components:
        if isinstance(c, Quasistatic):
            chi += 0.5 * c.sigma**2 * tog.area**2
    spectral = NoiseModel([c for c in model.components if not isinstance(c, Quasistatic)])
    if not spectral:
        return chi

    lobe = 1.0 / tog.duration
    f_cut = n_lobes * lobe
    feats = sorted(_features(spectral))
    f_cut = max(f_cut, 20.0 * max(feats, default=0.0))
    if method == "quad":
        nodes = sorted(set([0.0, f_cut] + [k * lobe for k in range(1, int(f_cut / lobe))]
                           + [p for p in feats if p < f_cut]))
        total = _chi_quad(spectral, tog, nodes, rtol)
    else:
        nodes = sorted(set([0.0, f_cut] + [p for p in feats if p < f_cut]))
        total = _chi_gauss(spectral, tog, nodes)
    # beyond f_cut the filter oscillates fast; use its mean (sum of squared jumps) / (2 pi f)^2
    mean_coeff = float(np.sum(tog.jumps**2))
    white = sum(c.level for c in spectral.components if isinstance(c, White))
    colored = NoiseModel([c for c in spectral.components if not isinstance(c, White)])
    tail = white * mean_coeff / (TWO_PI**2 * f_cut)
    if colored:
        # with u = f_cut / f the tail integral becomes a bounded integrand on (0, 1]
        val, _ = integrate.quad(lambda u: float(colored.psd(f_cut / u)) if u > 0 else 0.0,
                                0.0, 1.0, epsrel=rtol, limit=200)
        tail += val * mean_coeff / (TWO_PI**2 * f_cut)
    total += tail
    if not math.isfinite(total):
        raise NonConvergentError("dephasing integral does not converge")
    return chi + total


def filter_function_decay(model: NoiseModel, protocol: str, tau, n_pi: int = 1,
                          pulse_sigma: float | None = None, dt: float = 0.5e-9):
    """Coherence exp(-chi(tau)) for ramsey, spin_echo or cpmg."""
    taus = np.atleast_1d(np.asarray(tau, dtype=float))
    out = np.array([math.exp(-dephasing_exponent(model, protocol, t, n_pi,
                                                 pulse_sigma=pulse_sigma, dt=dt))
                    for t in taus])
    return float(out[0]) if np.ndim(tau) == 0 else out


def quasistatic_variance_hz2(model: NoiseModel, f_max: float = math.inf) -> float:
    """<dnu^2> in Hz^2 of the power below ``f_max``."""
    from .noisegen import psd_variance

    return psd_variance(model, f_max) / TWO_PI**2


def larmor_estimate(field: float) -> float:
    """Electron-spin Larmor frequency (Hz) in a field given in tesla."""
    if field < 0:
        raise ValueError("field must be non-negative")
    return ELECTRON_GYRO_HZ_PER_T * field
