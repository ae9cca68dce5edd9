"""Device parameters and the lab / qubit / rotating reference frames.

Frequencies are in Hz throughout; factors of 2 pi only appear inside
formulas. Derived quantities (tilt angle, qubit splitting, Rabi frequency)
are properties computed on demand so they never go stale.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Literal

import numpy as np

Frame = Literal["lab", "qubit", "rotating"]

NORM_TOLERANCE = 1e-6


class FrameMismatchError(ValueError):
    """A Bloch state was handed to a transformation expecting another frame."""


@dataclass(frozen=True)
class QubitParams:
    delta: float
    epsilon: float = 0.0
    gamma1: float = 0.0
    temperature: float = 0.065

    def __post_init__(self):
        if not self.delta > 0:
            raise ValueError("delta must be positive")
        if self.gamma1 < 0:
            raise ValueError("gamma1 must be non-negative")
        if not self.temperature > 0:
            raise ValueError("temperature must be positive")

    @property
    def theta(self) -> float:
        """Tilt of the quantization axis from the lab z axis."""
        return math.atan(self.epsilon / self.delta)

    @property
    def nu_q(self) -> float:
        return math.hypot(self.epsilon, self.delta)


@dataclass(frozen=True)
class DriveParams:
    amplitude: float
    carrier: float
    phase: float = 0.0

    def __post_init__(self):
        if self.amplitude < 0:
            raise ValueError("drive amplitude must be non-negative")

    def rabi(self, params: QubitParams) -> float:
        return 0.5 * self.amplitude * math.cos(params.theta)

    def detuning(self, params: QubitParams) -> float:
        return params.nu_q - self.carrier


@dataclass(frozen=True)
class DerivedSummary:
    theta: float
    nu_q: float
    nu_r: float
    detuning: float
    eta: float | None
    nu_r_eff: float


def amplitude_for_rabi(nu_r: float, params: QubitParams) -> float:
    """Drive amplitude A_rf producing the resonant Rabi frequency ``nu_r``."""
    return 2.0 * nu_r / math.cos(params.theta)


def derived_params(params: QubitParams, drive: DriveParams) -> DerivedSummary:
    nu_r = drive.rabi(params)
    dnu = drive.detuning(params)
    eta = math.atan(dnu / nu_r) if nu_r > 0 else None
    return DerivedSummary(
        theta=params.theta,
        nu_q=params.nu_q,
        nu_r=nu_r,
        detuning=dnu,
        eta=eta,
        nu_r_eff=math.hypot(nu_r, dnu),
    )


@dataclass(frozen=True)
class BlochState:
    x: float
    y: float
    z: float
    frame: Frame = "rotating"

    def __post_init__(self):
        if self.frame not in ("lab", "qubit", "rotating"):
            raise ValueError(f"unknown frame {self.frame!r}")
        if self.norm > 1.0 + NORM_TOLERANCE:
            raise ValueError(f"Bloch vector norm {self.norm:.9f} exceeds 1")

    @property
    def norm(self) -> float:
        return math.sqrt(self.x * self.x + self.y * self.y + self.z * self.z)

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z])

    @classmethod
    def from_array(cls, v, frame: Frame = "rotating") -> "BlochState":
        return cls(float(v[0]), float(v[1]), float(v[2]), frame)


def _require(state: BlochState, frame: Frame):
    if state.frame != frame:
        raise FrameMismatchError(f"expected a {frame}-frame state, got {state.frame}")


def _axis_rotation(theta: float) -> np.ndarray:
    # rows are the qubit-frame axes x', y', z' written in lab coordinates
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, 0.0, -s], [0.0, 1.0, 0.0], [s, 0.0, c]])


def _carrier_rotation(angle: float) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[c, s, 0.0], [-s, c, 0.0], [0.0, 0.0, 1.0]])


def to_qubit_frame(state: BlochState, params: QubitParams) -> BlochState:
    _require(state, "lab")
    return BlochState.from_array(_axis_rotation(params.theta) @ state.as_array(), "qubit")


def from_qubit_frame(state: BlochState, params: QubitParams) -> BlochState:
    _require(state, "qubit")
    return BlochState.from_array(_axis_rotation(params.theta).T @ state.as_array(), "lab")


def to_rotating_frame(state: BlochState, carrier: float, t: float) -> BlochState:
    """Qubit frame -> frame co-rotating about z' at ``carrier``."""
    _require(state, "qubit")
    r = _carrier_rotation(2.0 * math.pi * carrier * t)
    return BlochState.from_array(r @ state.as_array(), "rotating")


def from_rotating_frame(state: BlochState, carrier: float, t: float) -> BlochState:
    _require(state, "rotating")
    r = _carrier_rotation(2.0 * math.pi * carrier * t)
    return BlochState.from_array(r.T @ state.as_array(), "qubit")


def rotating_to_qubit_array(xyz: np.ndarray, carrier: float, t) -> np.ndarray:
    """Vectorized inverse carrier rotation for arrays of shape (..., 3)."""
    a = 2.0 * np.pi * carrier * np.asarray(t)
    c, s = np.cos(a), np.sin(a)
    out = np.empty_like(xyz)
    out[..., 0] = c * xyz[..., 0] - s * xyz[..., 1]
    out[..., 1] = s * xyz[..., 0] + c * xyz[..., 1]
    out[..., 2] = xyz[..., 2]
    return out


def qubit_to_rotating_array(xyz: np.ndarray, carrier: float, t) -> np.ndarray:
    a = 2.0 * np.pi * carrier * np.asarray(t)
    c, s = np.cos(a), np.sin(a)
    out = np.empty_like(xyz)
    out[..., 0] = c * xyz[..., 0] + s * xyz[..., 1]
    out[..., 1] = -s * xyz[..., 0] + c * xyz[..., 1]
    out[..., 2] = xyz[..., 2]
    return out


# Hamiltonians are returned as field vectors h with H = (h/2) * (h . sigma),
# components in Hz.

def lab_field(params: QubitParams, drive: DriveParams, t: float) -> np.ndarray:
    rf = drive.amplitude * math.cos(2.0 * math.pi * drive.carrier * t + drive.phase)
    return np.array([params.epsilon + rf, 0.0, params.delta])


def qubit_field(params: QubitParams, drive: DriveParams, t: float) -> np.ndarray:
    th = params.theta
    rf = drive.amplitude * math.cos(2.0 * math.pi * drive.carrier * t + drive.phase)
    return np.array([rf * math.cos(th), 0.0, params.nu_q + rf * math.sin(th)])


def rwa_field(params: QubitParams, drive: DriveParams) -> np.ndarray:
    nu_r = drive.rabi(params)
    return np.array([
        nu_r * math.cos(drive.phase),
        nu_r * math.sin(drive.phase),
        drive.detuning(params),
    ])


PAULI = np.array([
    [[0, 1], [1, 0]],
    [[0, -1j], [1j, 0]],
    [[1, 0], [0, -1]],
], dtype=complex)


def field_matrix(field) -> np.ndarray:
    """Matrix of (1/2) h . sigma for a field vector h."""
    return 0.5 * np.tensordot(np.asarray(field, dtype=float), PAULI, axes=1)
