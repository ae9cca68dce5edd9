"""Pulse-sequence builders and the experiment runner.

Phase conventions: X = 0, Y = pi/2, X-bar = pi, Y-bar = -pi/2. Starting
from the ground state (Z = -1), a pi/2 pulse about Y-bar prepares +X and a
pi/2 pulse about Y prepares -X. Every protocol ends with the final state
read out along Z.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import _kernels
from .dynamics import (
    DEFAULT_SIGMA, EnsembleNoise, PulseCal, PulseSegment, SimConfig,
    _check_stability, _to_rotating, _z_eq, calibrated_pulse, map_chunks,
    readout, render,
)
from .model import QubitParams, amplitude_for_rabi
from .noisegen import NoiseModel, Quasistatic, _key_int

X, Y, XBAR, YBAR = 0.0, math.pi / 2, math.pi, -math.pi / 2

PROTOCOLS = (
    "inversion_recovery", "ramsey", "spin_echo", "cpmg", "rabi", "rotary_echo",
    "sl3", "sl5a", "sl5b", "sl5_interleaved",
)
_DRIVEN = ("rabi", "rotary_echo", "sl3", "sl5a", "sl5b", "sl5_interleaved")


class UnsupportedProtocolError(ValueError):
    pass


@dataclass(frozen=True)
class ExperimentSpec:
    protocol: str
    tau_grid: tuple
    lock_rabi: float | None = None
    detuning: float = 0.0
    gap: float = 5e-9
    n_pi: int = 1
    edge_sigma: float = 2.5e-9
    pulse_sigma: float = DEFAULT_SIGMA
    name: str = ""

    def __post_init__(self):
        object.__setattr__(self, "tau_grid", tuple(float(t) for t in self.tau_grid))
        if self.protocol not in PROTOCOLS:
            raise UnsupportedProtocolError(f"unsupported protocol {self.protocol!r}")
        tg = np.asarray(self.tau_grid)
        if tg.size == 0:
            raise ValueError("tau_grid is empty")
        if np.any(tg <= 0) or np.any(np.diff(tg) <= 0):
            raise ValueError("tau_grid must be strictly increasing and positive")
        if self.protocol in _DRIVEN and not (self.lock_rabi and self.lock_rabi > 0):
            raise ValueError(f"{self.protocol} needs lock_rabi > 0")
        if self.protocol == "cpmg" and self.n_pi < 1:
            raise ValueError("cpmg needs n_pi >= 1")
        if self.gap < 0:
            raise ValueError("gap must be non-negative")

    @property
    def label(self) -> str:
        return self.name or (f"cpmg{self.n_pi}" if self.protocol == "cpmg" else self.protocol)


@dataclass
class DecayCurve:
    tau: np.ndarray
    value: np.ndarray
    stderr: np.ndarray
    label: str = ""

    def __post_init__(self):
        self.tau = np.asarray(self.tau, dtype=float)
        self.value = np.asarray(self.value, dtype=float)
        self.stderr = np.asarray(self.stderr, dtype=float)
        if not (self.tau.shape == self.value.shape == self.stderr.shape):
            raise ValueError("tau, value and stderr lengths differ")
        if np.any(self.stderr < 0):
            raise ValueError("stderr must be non-negative")

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["tau_s", "psw", "stderr"])
            for row in zip(self.tau, self.value, self.stderr):
                w.writerow([repr(float(v)) for v in row])

    def to_dict(self) -> dict:
        return {"label": self.label, "tau_s": self.tau.tolist(),
                "psw": self.value.tolist(), "stderr": self.stderr.tolist()}


@dataclass
class InterleavedCurves:
    a: DecayCurve
    b: DecayCurve
    average: DecayCurve
    offsets: np.ndarray = field(default=None)


def _gap(spec: ExperimentSpec, duration: float) -> list:
    if duration <= 0:
        return []
    return [PulseSegment("idle", duration, carrier_detuning=spec.detuning, label="gap")]


def build_schedule(spec: ExperimentSpec, tau: float, params: QubitParams,
                   dt: float, protocol: str | None = None) -> list:
    """Segment list realizing ``spec`` at delay ``tau``.

    ``dt`` is the integration step the pulses are calibrated for.
    ``protocol`` overrides ``spec.protocol`` (used to expand the interleaved
    pair into its a and b halves).
    """
    proto = protocol or spec.protocol
    if proto == "sl5_interleaved":
        raise UnsupportedProtocolError("build the sl5a and sl5b halves separately")
    if not any(abs(tau - t) <= 1e-12 * max(t, 1e-30) for t in spec.tau_grid):
        raise ValueError(f"tau={tau:g} is not on the experiment grid")

    det = spec.detuning

    def pulse(angle, phase, label):
        return calibrated_pulse(angle, phase, params, dt, spec.pulse_sigma, det, label)

    def wait(d):
        return [PulseSegment("idle", d, carrier_detuning=det, label="idle")]

    def drive(d, phase, label, edge):
        amp = amplitude_for_rabi(spec.lock_rabi, params)
        return PulseSegment("flat_top", d, amp, phase, edge_sigma=edge,
                            carrier_detuning=det, label=label)

    if proto == "sl3":
        return ([pulse(math.pi / 2, YBAR, "pi/2_-Y")] + _gap(spec, spec.gap)
                + [drive(tau, X, "lock_X", spec.edge_sigma)] + _gap(spec, spec.gap)
                + [pulse(math.pi / 2, YBAR, "pi/2_-Y")])
    if proto in ("sl5a", "sl5b"):
        end = YBAR if proto == "sl5a" else Y
        tag = "pi/2_-Y" if proto == "sl5a" else "pi/2_Y"
        half = _gap(spec, spec.gap / 2)
        return ([pulse(math.pi / 2, end, tag)] + half + [pulse(math.pi, X, "pi_X")] + half
                + [drive(tau, X, "lock_X", spec.edge_sigma)]
                + half + [pulse(math.pi, X, "pi_X")] + half + [pulse(math.pi / 2, end, tag)])
    if proto == "inversion_recovery":
        return [pulse(math.pi, X, "pi_X")] + wait(tau)
    if proto == "ramsey":
        return [pulse(math.pi / 2, Y, "pi/2_Y")] + wait(tau) + [pulse(math.pi / 2, Y, "pi/2_Y")]
    if proto == "spin_echo":
        return ([pulse(math.pi / 2, Y, "pi/2_Y")] + wait(tau / 2) + [pulse(math.pi, Y, "pi_Y")]
                + wait(tau / 2) + [pulse(math.pi / 2, YBAR, "pi/2_-Y")])
    if proto == "cpmg":
        n = spec.n_pi
        segs = [pulse(math.pi / 2, Y, "pi/2_Y")] + wait(tau / (2 * n))
        for i in range(n):
            segs.append(pulse(math.pi, Y, "pi_Y"))
            segs += wait(tau / n if i < n - 1 else tau / (2 * n))
        final = YBAR if n % 2 else Y
        segs.append(pulse(math.pi / 2, final, "pi/2_-Y" if n % 2 else "pi/2_Y"))
        return segs
    if proto == "rabi":
        return [drive(tau, X, "drive_X", 0.0)]
    if proto == "rotary_echo":
        return [drive(tau / 2, X, "drive_X", 0.0), drive(tau / 2, XBAR, "drive_-X", 0.0)]
    raise UnsupportedProtocolError(f"unsupported protocol {proto!r}")


def point_offsets(models: dict, params: QubitParams, n_points: int, master_seed: int) -> np.ndarray:
    """Longitudinal drift (rad/s) for each measurement point, shared by its shots."""
    out = np.zeros(n_points)
    weights = {"delta": math.cos(params.theta), "epsilon": math.sin(params.theta)}
    for ch, w in weights.items():
        model = models.get(ch)
        if model is None:
            continue
        for j, comp in enumerate(model.components):
            if not (isinstance(comp, Quasistatic) and comp.scope == "point"):
                continue
            for i in range(n_points):
                ss = np.random.SeedSequence(_key_int(master_seed),
                                            spawn_key=(_key_int("point"), i, _key_int(ch), j))
                out[i] += w * comp.sigma * np.random.default_rng(ss).standard_normal()
    return out


def _simulate_final_z(protocols: Sequence[str], spec: ExperimentSpec, params: QubitParams,
                      models: dict, config: SimConfig, offsets: np.ndarray) -> list:
    """Final Z per trajectory for each protocol and tau: list of (n_traj, n_tau)."""
    progs = [[render(build_schedule(spec, t, params, config.dt, p), params, config)
              for t in spec.tau_grid] for p in protocols]
    n_max = max(pr.n_steps for row in progs for pr in row)
    noises = [EnsembleNoise(params, models.get("delta"), models.get("epsilon"),
                            config.dt, n_max, config.master_seed, stream=s)
              for s in range(len(protocols))]
    g1 = params.gamma1 if config.include_t1 else 0.0
    z_eq = _z_eq(params)
    s0 = np.array([0.0, 0.0, -1.0])
    rec_final = {}

    def work(a, b):
        res = []
        for p_idx, row in enumerate(progs):
            lam = noises[p_idx].chunk(a, b)
            peak = float(np.max(np.abs(lam), initial=0.0))
            z = np.empty((b - a, len(row)))
            for i, prog in enumerate(row):
                _check_stability(prog, peak + abs(offsets[i]))
                rec = rec_final.setdefault(prog.n_steps, np.array([prog.n_steps], dtype=np.int64))
                out = np.zeros((b - a, 1, 3))
                _kernels.evolve_batch(s0, prog.omx, prog.omy, prog.omz,
                                      np.ascontiguousarray(lam[:, : prog.n_steps]),
                                      np.full(b - a, offsets[i]), g1, z_eq, config.dt, rec, out)
                out = _to_rotating(out, prog, rec, config)
                z[:, i] = out[:, 0, 2]
            res.append(z)
        return res

    for row in progs:
        for prog in row:
            rec_final.setdefault(prog.n_steps, np.array([prog.n_steps], dtype=np.int64))
    parts = map_chunks(work, config.n_trajectories, config.threads)
    return [np.concatenate([p[i] for p in parts], axis=0) for i in range(len(protocols))]


def _curve(z: np.ndarray, spec: ExperimentSpec, cal: PulseCal, label: str) -> DecayCurve:
    p = readout(z, cal)
    n = p.shape[0]
    err = p.std(axis=0, ddof=1) / math.sqrt(n) if n > 1 else np.zeros(p.shape[1])
    return DecayCurve(np.array(spec.tau_grid), p.mean(axis=0), err, label)


def run_experiment(spec: ExperimentSpec, params: QubitParams, models: dict | None = None,
                   config: SimConfig = SimConfig(), cal: PulseCal = PulseCal()):
    """Simulate every tau of ``spec`` and return the readout curve.

    Trajectory ``k`` sees the same fast-noise realization at every tau
    (common random numbers), which keeps curves smooth for fitting. Drift
    components with point scope are redrawn per tau. For
    ``sl5_interleaved`` the a and b halves share that drift but get
    independent fast noise, and an :class:`InterleavedCurves` is returned.
    """
    models = models or {}
    offsets = point_offsets(models, params, len(spec.tau_grid), config.master_seed)
    if spec.protocol == "sl5_interleaved":
        za, zb = _simulate_final_z(("sl5a", "sl5b"), spec, params, models, config, offsets)
        a = _curve(za, spec, cal, "sl5a")
        b = _curve(zb, spec, cal, "sl5b")
        avg = DecayCurve(a.tau, 0.5 * (a.value + b.value),
                         0.5 * np.hypot(a.stderr, b.stderr), "sl5_average")
        return InterleavedCurves(a, b, avg, offsets)
    (z,) = _simulate_final_z((spec.protocol,), spec, params, models, config, offsets)
    return _curve(z, spec, cal, spec.label)
