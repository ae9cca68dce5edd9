import math
import warnings

import numpy as np
import pytest
from scipy import integrate

from spinlock.model import DriveParams, QubitParams, amplitude_for_rabi
from spinlock.noisegen import LorentzianBump, NoiseModel, PowerLaw, Quasistatic, RtnLorentzian, White
from spinlock.theory import (
    RegimeWarning, decay_law, dephasing_exponent, filter_function_decay, filter_weight,
    frame_psd, gbe_rates, larmor_estimate, rabi_algebraic_factor, sl5_signals, steady_state,
    switching_times, weak_drive_rates,
)

TWO_PI = 2 * math.pi


def _drive(p, nu_r, detuning=0.0):
    return DriveParams(amplitude_for_rabi(nu_r, p), p.nu_q - detuning)


# ------------------------------------------------------------------ frame spectra

def test_frame_psd_at_symmetry_point():
    fp = frame_psd(NoiseModel([White(3.0)]), NoiseModel([White(5.0)]), 0.0, 1e6)
    assert (fp.s_zprime, fp.s_xprime) == (3.0, 5.0)


def test_frame_psd_at_right_angle():
    fp = frame_psd(NoiseModel([White(3.0)]), NoiseModel([White(5.0)]), math.pi / 2, 1e6)
    assert fp.s_zprime == pytest.approx(5.0)
    assert fp.s_xprime == pytest.approx(3.0)


def test_frame_psd_at_forty_five_degrees():
    fp = frame_psd(NoiseModel([White(3.0)]), NoiseModel([White(5.0)]), math.pi / 4, 1e6)
    assert fp.s_zprime == pytest.approx(4.0) and fp.s_xprime == pytest.approx(4.0)


def test_frame_psd_rejects_zero_frequency():
    with pytest.raises(ValueError):
        frame_psd(None, None, 0.0, 0.0)


# ------------------------------------------------------------------ rates

def test_spin_lock_rate_with_white_longitudinal_noise():
    p = QubitParams(5.4e9, gamma1=1 / 12e-6)
    level = 2 * p.gamma1
    r = gbe_rates(p, _drive(p, 5e6), NoiseModel([White(level)]))
    assert r.gamma_nu == pytest.approx(p.gamma1)
    assert r.gamma_1rho == pytest.approx(1.5 * p.gamma1)
    assert r.gamma_Z == pytest.approx(p.gamma1)


def test_full_rates_match_weak_forms_for_flat_transverse_spectrum():
    p = QubitParams(5.4e9, epsilon=1e9, gamma1=1e5)
    r = gbe_rates(p, _drive(p, 40e6), NoiseModel([PowerLaw(1e12, 0.9, 1e3)]),
                  NoiseModel([LorentzianBump(1e8, 40e6, 1e6)]))
    for name in ("gamma_X", "gamma_Y", "gamma_Z", "gamma_1rho", "gamma_nu"):
        assert getattr(r.full, name) == pytest.approx(getattr(r, name), rel=1e-12)


def test_rates_from_transverse_model():
    p = QubitParams(5.4e9, gamma1=0.0)
    r = gbe_rates(p, _drive(p, 4e6), None, NoiseModel([White(2e5)]), transverse_from_models=True)
    assert r.full.gamma_Z == pytest.approx(1e5)
    assert r.gamma1 == pytest.approx(1e5)


def test_weak_drive_rates():
    r = weak_drive_rates(1e5, 3e4)
    assert r.gamma_1rho == pytest.approx(8e4)
    assert r.gamma_rabi_dagger == pytest.approx(0.75e5 + 1.5e4)
    with pytest.raises(ValueError):
        weak_drive_rates(-1.0, 0.0)


def test_regime_warning_for_slow_drive():
    p = QubitParams(5.4e9, gamma1=1e6)
    with pytest.warns(RegimeWarning):
        gbe_rates(p, _drive(p, 2e6))
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        gbe_rates(p, _drive(p, 50e6))


# ------------------------------------------------------------------ steady state

def test_steady_state_on_resonance():
    p = QubitParams(5.4e9, gamma1=1e5)
    ss = steady_state(p, _drive(p, 3e6), NoiseModel([White(2e5)]), polarizations=(1.0, 0.5))
    assert ss.eta == 0.0 and ss.sx_first_order == 0.0
    # [DERIVED] S_z p_R / (S_x/2 + S_z) with S_x = 2 Gamma_1
    assert ss.sz_prime_ss == pytest.approx(2e5 * 0.5 / (1e5 + 2e5))


def test_steady_state_first_order_form():
    p = QubitParams(5.4e9, gamma1=1e5)
    model = NoiseModel([White(2e5)])
    etas, errs = [0.08, 0.04, 0.02], []
    for eta in etas:
        ss = steady_state(p, _drive(p, 3e6, 3e6 * math.tan(eta)), model, polarizations=(1.0, 0.0))
        assert ss.eta == pytest.approx(eta)
        errs.append(abs(ss.sx_ss - ss.sx_first_order))
    slope = np.polyfit(np.log(etas), np.log(errs), 1)[0]
    assert slope >= 2.0


def test_sl5_pair_signals():
    tau = np.array([0.0, 1e-6, 1e-3])
    pa, pb, avg = sl5_signals(1e5, 0.2, tau)
    assert pa[0] == pytest.approx(1.0) and pb[0] == pytest.approx(1.0)
    # the plateaus move in opposite directions and the mean does not see them
    assert pa[-1] - 0.5 == pytest.approx(-(pb[-1] - 0.5))
    assert avg == pytest.approx((1 + np.exp(-1e5 * tau)) / 2)


# ------------------------------------------------------------------ decay laws

def test_rabi_envelope_against_quadrature():
    # [DERIVED] |<exp(i 2 pi dnu^2 tau / 2 nu_R)>| over dnu ~ N(0, var)
    var, nu_r = (0.3e6) ** 2, 5e6
    for tau in (0.2e-6, 1e-6, 3e-6):
        def part(fn):
            return integrate.quad(
                lambda x: fn(math.pi * x * x * tau / nu_r) * math.exp(-x * x / (2 * var)),
                -12 * math.sqrt(var), 12 * math.sqrt(var), limit=400)[0] / math.sqrt(TWO_PI * var)
        mag = math.hypot(part(math.cos), part(math.sin))
        assert float(rabi_algebraic_factor(var, nu_r, tau)) == pytest.approx(mag, rel=1e-7)


def test_decay_law_examples():
    p = QubitParams(5.4e9, gamma1=1e5)
    d = _drive(p, 3e6)
    r = gbe_rates(p, d, NoiseModel([White(1e5)]))
    tau = np.array([0.0, 5e-6])
    assert decay_law("t1", p, d, {}, r, tau) == pytest.approx(np.exp(-1e5 * tau))
    assert decay_law("sl5a", p, d, {}, r, tau) == pytest.approx(np.exp(-1e5 * tau))
    fid = decay_law("ramsey", p, d, {"var_nu": 1e10}, r, tau)
    assert fid[1] == pytest.approx(math.exp(-0.25 - 0.5 * TWO_PI**2 * 1e10 * 25e-12))
    with pytest.raises(ValueError):
        decay_law("nmr", p, d, {}, r, tau)


# ------------------------------------------------------------------ filter functions

def test_switching_times():
    assert switching_times("ramsey", 1.0).size == 0
    assert switching_times("spin_echo", 2.0) == pytest.approx([1.0])
    assert switching_times("cpmg", 4.0, 2) == pytest.approx([1.0, 3.0])


def test_filter_weight_closed_forms():
    tau = 2e-6
    f = np.geomspace(1e3, 1e8, 200)
    w = TWO_PI * f
    assert filter_weight(f, tau, "ramsey") == pytest.approx(
        4 * np.sin(w * tau / 2) ** 2 / w**2, rel=1e-9, abs=1e-30)
    assert filter_weight(f, tau, "spin_echo") == pytest.approx(
        16 * np.sin(w * tau / 4) ** 4 / w**2, rel=1e-9, abs=1e-30)
    assert filter_weight(0.0, tau, "ramsey")[0] == pytest.approx(tau**2)
    assert filter_weight(0.0, tau, "spin_echo")[0] == 0.0


@pytest.mark.parametrize("protocol", ["ramsey", "spin_echo", "cpmg"])
def test_white_noise_limit(protocol):
    level, tau = 3e4, 4e-6
    chi = dephasing_exponent(NoiseModel([White(level)]), protocol, tau, n_pi=4)
    assert chi == pytest.approx(level * tau / 2, rel=0.01)


def test_quasistatic_limit_of_slow_telegraph_noise():
    var, tau = (TWO_PI * 0.2e6) ** 2, 1e-6
    chi = dephasing_exponent(NoiseModel([RtnLorentzian(var, 50.0)]), "ramsey", tau)
    assert chi == pytest.approx(0.5 * var * tau**2, rel=0.01)
    chi_q = dephasing_exponent(NoiseModel([Quasistatic(math.sqrt(var))]), "ramsey", tau)
    assert chi_q == pytest.approx(0.5 * var * tau**2, rel=1e-12)


def test_echo_removes_static_offsets():
    m = NoiseModel([Quasistatic(1e7)])
    assert filter_function_decay(m, "spin_echo", 1e-6) == 1.0
    assert filter_function_decay(m, "ramsey", [1e-7, 2e-7]) == pytest.approx(
        np.exp(-0.5 * 1e14 * np.array([1e-14, 4e-14])))


def test_larmor_estimate():
    assert larmor_estimate(1e-3) == pytest.approx(28.025e6, rel=1e-3)
    with pytest.raises(ValueError):
        larmor_estimate(-1.0)


@pytest.mark.filterwarnings("ignore::scipy.integrate.IntegrationWarning")
@pytest.mark.parametrize("protocol", ["ramsey", "spin_echo", "cpmg"])
def test_panel_quadrature_matches_adaptive_quadrature(protocol):
    m = NoiseModel([PowerLaw(1e11, 0.9, 1e3), LorentzianBump(3e8, 1e6, 0.1e6),
                    RtnLorentzian(1e11, 2e5)])
    for tau in (0.3e-6, 2e-6):
        fast = dephasing_exponent(m, protocol, tau, n_pi=3)
        ref = dephasing_exponent(m, protocol, tau, n_pi=3, method="quad", rtol=1e-10)
        assert fast == pytest.approx(ref, rel=1e-8)


@pytest.mark.parametrize("tau", [3e-6, 1e-5, 4e-5])
def test_echo_under_telegraph_noise_closed_form(tau):
    # [DERIVED] correlation var exp(-g |t|) with g = 2 * switch_rate gives
    # <phi^2> = (2 var / g^2) (g tau - 3 + 4 exp(-g tau / 2) - exp(-g tau)) and chi = <phi^2> / 2
    var, rate = 1e11, 5e4
    g = 2 * rate
    x = g * tau
    want = var / g**2 * (x - 3 + 4 * math.exp(-x / 2) - math.exp(-x))
    assert dephasing_exponent(NoiseModel([RtnLorentzian(var, rate)]), "spin_echo", tau) == \
        pytest.approx(want, rel=1e-7)
