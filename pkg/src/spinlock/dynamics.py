"""Stochastic Bloch-vector dynamics under shaped drive and classical noise.

Only the longitudinal qubit-frame fluctuation
``lambda_z = cos(theta) dDelta + sin(theta) dEpsilon`` is propagated as a
trace. Transverse noise at the qubit frequency enters through the
phenomenological Gamma_1 damping, which relaxes z' toward the thermal value
and damps the transverse components at Gamma_1 / 2.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Literal, Sequence

import numpy as np
from scipy import fft as sfft

from . import _kernels
from .model import BlochState, QubitParams, qubit_to_rotating_array
from .noisegen import NoiseModel, NoiseTrace, Synthesizer
from .units import TWO_PI, thermal_polarization

SegmentKind = Literal["gaussian_pulse", "flat_top", "idle"]

#: default Gaussian width; truncation at +-2 sigma gives a 10 ns pulse
DEFAULT_SIGMA = 2.5e-9
STABILITY_LIMIT = 0.05
CHUNK = 64


class StabilityError(ValueError):
    """The time step is too coarse for the fields being integrated."""


class CoverageError(ValueError):
    """A noise trace does not span the pulse schedule."""


@dataclass(frozen=True)
class PulseSegment:
    kind: SegmentKind
    duration: float
    amplitude: float = 0.0
    phase: float = 0.0
    sigma: float = DEFAULT_SIGMA
    edge_sigma: float = 0.0
    carrier_detuning: float = 0.0
    label: str = ""

    def __post_init__(self):
        if self.kind not in ("gaussian_pulse", "flat_top", "idle"):
            raise ValueError(f"unknown segment kind {self.kind!r}")
        if not self.duration > 0:
            raise ValueError("segment duration must be positive")
        if self.amplitude < 0:
            raise ValueError("segment amplitude must be non-negative")
        if self.kind == "gaussian_pulse":
            if not self.sigma > 0:
                raise ValueError("gaussian pulse needs sigma > 0")
            if self.duration < 4 * self.sigma * (1 - 1e-9):
                raise ValueError("gaussian pulse duration must be at least 4 sigma")
        if self.kind == "flat_top":
            if self.edge_sigma < 0:
                raise ValueError("edge_sigma must be non-negative")
            if self.duration < 4 * self.edge_sigma * (1 - 1e-9):
                raise ValueError("flat_top duration must be at least 4 edge_sigma")


def idle(duration: float, carrier_detuning: float = 0.0) -> PulseSegment:
    return PulseSegment("idle", duration, carrier_detuning=carrier_detuning, label="idle")


def _truncated_gaussian(u, sigma):
    """Gaussian of width sigma centred at 0, cut at +-2 sigma and shifted to 0 there."""
    floor = math.exp(-2.0)
    g = (np.exp(-0.5 * (u / sigma) ** 2) - floor) / (1.0 - floor)
    return np.where(np.abs(u) <= 2.0 * sigma, np.maximum(g, 0.0), 0.0)


def envelope(segment: PulseSegment, t) -> np.ndarray:
    """Unit-peak envelope g(t) for 0 <= t <= duration."""
    t = np.asarray(t, dtype=float)
    d = segment.duration
    if segment.kind == "idle":
        return np.zeros_like(t)
    if segment.kind == "gaussian_pulse":
        return _truncated_gaussian(t - 0.5 * d, segment.sigma)
    es = segment.edge_sigma
    g = np.ones_like(t)
    if es > 0:
        rise = t < 2 * es
        fall = t > d - 2 * es
        g = np.where(rise, _truncated_gaussian(t - 2 * es, es), g)
        g = np.where(fall, _truncated_gaussian(t - (d - 2 * es), es), g)
    return np.where((t >= 0) & (t <= d), g, 0.0)


def segment_steps(segment: PulseSegment, dt: float) -> int:
    return max(1, int(round(segment.duration / dt)))


def sampled_envelope(segment: PulseSegment, dt: float) -> np.ndarray:
    """Envelope at the step midpoints of the quantized segment."""
    n = segment_steps(segment, dt)
    return envelope(segment, (np.arange(n) + 0.5) * (segment.duration / n))


@dataclass(frozen=True)
class PulseCal:
    """Readout calibration: P_SW = offset + visibility (1 + z) / 2."""

    visibility: float = 1.0
    offset: float = 0.0

    def __post_init__(self):
        if not 0.0 < self.visibility <= 1.0:
            raise ValueError("visibility must lie in (0, 1]")
        if not 0.0 <= self.offset < 1.0:
            raise ValueError("offset must lie in [0, 1)")


def readout(state, cal: PulseCal = PulseCal()):
    """Switching probability for a state (or z values) measured along Z."""
    z = state.z if isinstance(state, BlochState) else np.asarray(state, dtype=float)
    return cal.offset + cal.visibility * (1.0 + z) / 2.0


def calibrate_amplitude(segment: PulseSegment, angle: float, params: QubitParams,
                        dt: float) -> float:
    """Drive amplitude A_rf that rotates the Bloch vector by ``angle`` radians.

    Uses the discrete envelope sum the integrator sees, so the nominal
    rotation is exact on the simulation grid.
    """
    g = sampled_envelope(segment, dt)
    step = segment.duration / g.size
    area = float(g.sum()) * step
    if area <= 0:
        raise ValueError("cannot calibrate a segment with zero envelope area")
    # angle = 2 pi * (A cos(theta) / 2) * area
    return angle / (math.pi * math.cos(params.theta) * area)


def calibrated_pulse(angle: float, phase: float, params: QubitParams, dt: float,
                     sigma: float = DEFAULT_SIGMA, carrier_detuning: float = 0.0,
                     label: str = "") -> PulseSegment:
    seg = PulseSegment("gaussian_pulse", 4.0 * sigma, 0.0, phase, sigma=sigma,
                       carrier_detuning=carrier_detuning, label=label)
    return replace(seg, amplitude=calibrate_amplitude(seg, angle, params, dt))


@dataclass(frozen=True)
class SimConfig:
    dt: float = 0.5e-9
    n_trajectories: int = 1000
    master_seed: int = 0
    integration_frame: Literal["rotating_rwa", "qubit_full"] = "rotating_rwa"
    include_t1: bool = True
    threads: int = 1

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if self.n_trajectories < 1:
            raise ValueError("n_trajectories must be at least 1")
        if self.integration_frame not in ("rotating_rwa", "qubit_full"):
            raise ValueError(f"unknown integration frame {self.integration_frame!r}")
        if self.threads < 1:
            raise ValueError("threads must be at least 1")


@dataclass
class TrajectoryResult:
    times: np.ndarray
    mean: np.ndarray
    stderr: np.ndarray
    n_trajectories: int = 1

    @property
    def mean_state(self) -> list:
        return [BlochState.from_array(v) for v in self.mean]

    @property
    def final(self) -> BlochState:
        return BlochState.from_array(self.mean[-1])


@dataclass
class FieldProgram:
    """A schedule rendered onto the integration grid."""

    omx: np.ndarray
    omy: np.ndarray
    omz: np.ndarray
    dt: float
    boundaries: np.ndarray = field(default=None)
    carrier: float = 0.0

    @property
    def n_steps(self) -> int:
        return self.omx.size

    @property
    def duration(self) -> float:
        return self.n_steps * self.dt


def schedule_duration(schedule: Sequence[PulseSegment], dt: float) -> float:
    return sum(segment_steps(s, dt) for s in schedule) * dt


def render(schedule: Sequence[PulseSegment], params: QubitParams, config: SimConfig) -> FieldProgram:
    """Per-step field components (rad/s) for the chosen integration frame."""
    if not schedule:
        raise ValueError("empty schedule")
    dt = config.dt
    cos_t = math.cos(params.theta)
    parts_x, parts_y, parts_z, bounds = [], [], [], [0]
    t0 = 0.0
    carrier = params.nu_q - schedule[-1].carrier_detuning
    for seg in schedule:
        g = sampled_envelope(seg, dt)
        n = g.size
        bounds.append(bounds[-1] + n)
        if config.integration_frame == "rotating_rwa":
            nu_r = 0.5 * seg.amplitude * cos_t * g
            parts_x.append(TWO_PI * nu_r * math.cos(seg.phase))
            parts_y.append(TWO_PI * nu_r * math.sin(seg.phase))
            parts_z.append(np.full(n, TWO_PI * seg.carrier_detuning))
        else:
            t = t0 + (np.arange(n) + 0.5) * dt
            nu_rf = params.nu_q - seg.carrier_detuning
            rf = seg.amplitude * g * np.cos(TWO_PI * nu_rf * t + seg.phase)
            parts_x.append(TWO_PI * rf * cos_t)
            parts_y.append(np.zeros(n))
            parts_z.append(TWO_PI * (params.nu_q + rf * math.sin(params.theta)))
        t0 += n * dt
    return FieldProgram(np.concatenate(parts_x), np.concatenate(parts_y),
                        np.concatenate(parts_z), dt, np.asarray(bounds), carrier)


def _check_stability(prog: FieldProgram, noise_max: float):
    w_drive = np.sqrt(prog.omx**2 + prog.omy**2 + prog.omz**2)
    w = max(float(w_drive.max(initial=0.0)), noise_max)
    if w / TWO_PI * prog.dt >= STABILITY_LIMIT:
        raise StabilityError(
            f"max field {w / TWO_PI:.4g} Hz times dt={prog.dt:g} s exceeds {STABILITY_LIMIT}")


def _z_eq(params: QubitParams) -> float:
    return -thermal_polarization(params.nu_q, params.temperature)


def _record_indices(prog: FieldProgram, record) -> np.ndarray:
    if not isinstance(record, str):
        return _record_times(prog, record)
    if record == "final":
        return np.array([prog.n_steps], dtype=np.int64)
    if record == "segments":
        return prog.boundaries.astype(np.int64)
    if record == "all":
        return np.arange(prog.n_steps + 1, dtype=np.int64)
    raise ValueError(f"unknown record mode {record!r}")


def _record_times(prog: FieldProgram, record) -> np.ndarray:
    times = np.asarray(record, dtype=float)
    idx = np.rint(times / prog.dt).astype(np.int64)
    if np.any(idx < 0) or np.any(idx > prog.n_steps):
        raise ValueError("record times fall outside the schedule")
    if np.any(np.diff(idx) < 0):
        raise ValueError("record times must be non-decreasing")
    return idx


def _to_rotating(states: np.ndarray, prog: FieldProgram, rec: np.ndarray, config: SimConfig):
    if config.integration_frame == "rotating_rwa":
        return states
    return qubit_to_rotating_array(states, prog.carrier, rec * prog.dt)


def _trace_on_grid(trace: NoiseTrace | None, n_steps: int, dt: float) -> np.ndarray:
    if trace is None:
        return np.zeros(n_steps)
    need = n_steps * dt
    if trace.samples.size * trace.dt < need * (1 - 1e-12):
        raise CoverageError(
            f"noise trace covers {trace.samples.size * trace.dt:g} s, schedule needs {need:g} s")
    if trace.dt > dt * (1 + 1e-12):
        raise CoverageError("noise trace is coarser than the integration step")
    if abs(trace.dt - dt) <= 1e-12 * dt:
        return trace.samples[:n_steps]
    idx = np.floor((np.arange(n_steps) + 0.5) * dt / trace.dt).astype(np.int64)
    return trace.samples[idx]


def integrate_trajectory(params: QubitParams, schedule: Sequence[PulseSegment],
                         noise: dict | None = None, config: SimConfig = SimConfig(),
                         initial=(0.0, 0.0, -1.0), record="segments") -> TrajectoryResult:
    """Integrate one trajectory for given noise traces.

    ``noise`` may hold ``"delta"`` and ``"epsilon"`` NoiseTrace entries
    (rad/s). States are returned in the rotating frame at the requested
    record points: ``"final"``, ``"segments"`` (every segment boundary),
    ``"all"`` or an array of times. ``stderr`` is zero.
    """
    noise = noise or {}
    prog = render(schedule, params, config)
    lam = (math.cos(params.theta) * _trace_on_grid(noise.get("delta"), prog.n_steps, config.dt)
           + math.sin(params.theta) * _trace_on_grid(noise.get("epsilon"), prog.n_steps, config.dt))
    _check_stability(prog, float(np.max(np.abs(lam), initial=0.0)))
    rec = _record_indices(prog, record)
    out = np.zeros((1, rec.size, 3))
    g1 = params.gamma1 if config.include_t1 else 0.0
    _kernels.evolve_batch(np.asarray(initial, dtype=float), prog.omx, prog.omy, prog.omz,
                          lam[None, :], np.zeros(1), g1, _z_eq(params), config.dt, rec, out)
    states = _to_rotating(out[0], prog, rec, config)
    return TrajectoryResult(rec * config.dt, states, np.zeros_like(states), 1)


def noise_length(n_steps: int) -> int:
    """FFT length used for ensemble noise traces covering ``n_steps``."""
    return sfft.next_fast_len(max(2 * n_steps, 16), real=True)


class EnsembleNoise:
    """Per-trajectory longitudinal noise for an ensemble run.

    Trajectory ``k`` of channel ``c`` is seeded by (master, "traj", k, c), so
    a trajectory's noise never depends on how work is split across threads.
    Power below the lowest resolvable frequency is drawn as a per-trajectory
    offset.
    """

    def __init__(self, params: QubitParams, model_delta: NoiseModel | None,
                 model_epsilon: NoiseModel | None, dt: float, n_steps: int, master_seed: int,
                 stream: int = 0):
        self.n = noise_length(n_steps)
        self.stream = stream
        self.n_steps = n_steps
        self.master = master_seed
        c, s = math.cos(params.theta), math.sin(params.theta)
        self._channels = []
        for name, model, w in (("delta", model_delta, c), ("epsilon", model_epsilon, s)):
            if model is None or w == 0.0:
                continue
            shot = NoiseModel(model.shot_components())
            if shot:
                syn = Synthesizer(shot, dt, self.n, lump_unresolved=True, merge=True)
                self._channels.append((name, w, syn))

    def seed_sequence(self, k: int, channel: str) -> np.random.SeedSequence:
        from .noisegen import _key_int
        key = (_key_int("traj"), k, _key_int(channel))
        if self.stream:
            key += (self.stream,)
        return np.random.SeedSequence(_key_int(self.master), spawn_key=key)

    def trace(self, k: int, channel: str) -> np.ndarray:
        for name, _, syn in self._channels:
            if name == channel:
                return syn.draw(self.seed_sequence(k, channel))
        return np.zeros(self.n)

    def chunk(self, start: int, stop: int) -> np.ndarray:
        lam = np.zeros((stop - start, self.n_steps))
        for name, w, syn in self._channels:
            for i, k in enumerate(range(start, stop)):
                lam[i] += w * syn.draw(self.seed_sequence(k, name))[: self.n_steps]
        return lam


def _chunks(n: int, size: int = CHUNK):
    return [(a, min(a + size, n)) for a in range(0, n, size)]


def map_chunks(fn, n: int, threads: int):
    """Apply ``fn(start, stop)`` to fixed-size chunks, returning results in order."""
    parts = _chunks(n)
    if threads <= 1 or len(parts) == 1:
        return [fn(a, b) for a, b in parts]
    with ThreadPoolExecutor(max_workers=min(threads, len(parts))) as pool:
        return list(pool.map(lambda ab: fn(*ab), parts))


def resolve_threads(threads: int | None) -> int:
    if threads is None or threads <= 0:
        return os.cpu_count() or 1
    return threads


def run_ensemble(params: QubitParams, schedule: Sequence[PulseSegment],
                 model_delta: NoiseModel | None = None, model_epsilon: NoiseModel | None = None,
                 config: SimConfig = SimConfig(), initial=(0.0, 0.0, -1.0),
                 record="segments", point_offset: float = 0.0) -> TrajectoryResult:
    """Average ``config.n_trajectories`` independently seeded trajectories.

    ``point_offset`` (rad/s) is a longitudinal offset shared by every
    trajectory, used for drifts slower than a whole measurement point.
    Chunk sums are combined in index order, so the result is bit-identical
    for any thread count.
    """
    prog = render(schedule, params, config)
    rec = _record_indices(prog, record)
    noise = EnsembleNoise(params, model_delta, model_epsilon, config.dt, prog.n_steps,
                          config.master_seed)
    g1 = params.gamma1 if config.include_t1 else 0.0
    z_eq = _z_eq(params)
    s0 = np.asarray(initial, dtype=float)

    def work(a, b):
        lam = noise.chunk(a, b)
        _check_stability(prog, float(np.max(np.abs(lam), initial=0.0)) + abs(point_offset))
        out = np.zeros((b - a, rec.size, 3))
        _kernels.evolve_batch(s0, prog.omx, prog.omy, prog.omz, lam,
                              np.full(b - a, point_offset), g1, z_eq, config.dt, rec, out)
        out = _to_rotating(out, prog, rec, config)
        return out.sum(axis=0), (out * out).sum(axis=0)

    parts = map_chunks(work, config.n_trajectories, config.threads)
    total = np.zeros((rec.size, 3))
    total_sq = np.zeros((rec.size, 3))
    for s1, s2 in parts:
        total += s1
        total_sq += s2
    n = config.n_trajectories
    mean = total / n
    if n > 1:
        var = np.maximum(total_sq - n * mean * mean, 0.0) / (n - 1)
        stderr = np.sqrt(var / n)
    else:
        stderr = np.zeros_like(mean)
    return TrajectoryResult(rec * config.dt, mean, stderr, n)
