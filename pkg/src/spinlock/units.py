"""Unit conventions shared by every module.

Frequencies are stored in Hz. Noise traces are angular-frequency
fluctuations in rad/s. A power spectral density ``S(f)`` is the Fourier
transform of the autocorrelation of such a trace,

    S(f) = integral dt <lambda(0) lambda(t)> exp(-i 2 pi f t),

in rad^2/s, evaluated at f > 0 and symmetric in f. With this convention the
variance of the fluctuation is ``integral_{-inf}^{inf} S df``, i.e. twice the
integral over positive frequencies, and the detuning variance in Hz^2 is that
number divided by (2 pi)^2.
"""

import math

TWO_PI = 2.0 * math.pi

PLANCK = 6.62607015e-34
BOLTZMANN = 1.380649e-23

#: electron gyromagnetic ratio / 2 pi, Hz per tesla
ELECTRON_GYRO_HZ_PER_T = 28.0e9


def variance_from_positive_band(integral_positive):
    """Convert ``integral_0^inf S df`` (rad^2/s^2) to the total variance."""
    return 2.0 * integral_positive


def rad2_to_hz2(variance_rad2):
    """Angular variance (rad^2/s^2) to frequency variance (Hz^2)."""
    return variance_rad2 / TWO_PI**2


def hz_to_rad(nu):
    return TWO_PI * nu


def thermal_polarization(frequency, temperature):
    """tanh(h f / 2 k_B T); the magnitude of the thermal polarization."""
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    return math.tanh(PLANCK * frequency / (2.0 * BOLTZMANN * temperature))
