"""Parametric noise spectra, time-domain synthesis and periodogram estimates.

PSD convention: see :mod:`spinlock.units`. ``evaluate_psd`` returns rad^2/s
at f > 0, and a trace synthesized from a model has variance
``integral_{-f_N}^{f_N} S df`` (white noise of level L sampled at dt has
variance L/dt).
"""

from __future__ import annotations

import csv
import math
import zlib
from dataclasses import asdict, dataclass, field
from typing import Sequence, Union

import numpy as np
from scipy import fft as sfft

__all__ = [
    "PowerLaw", "LorentzianBump", "RtnLorentzian", "White", "Quasistatic",
    "NoiseModel", "NoiseTrace", "SpectrumEstimate",
    "evaluate_psd", "synthesize", "synthesize_rtn", "synthesize_batch",
    "estimate_psd", "subseed", "lorentzian", "psd_variance",
]


class BandTooShortError(ValueError):
    pass


class TimestepTooCoarseError(ValueError):
    pass


def lorentzian(f, center, width):
    """Unit-peak Lorentzian W^2 / ((f - F)^2 + W^2)."""
    f = np.asarray(f, dtype=float)
    return width**2 / ((f - center) ** 2 + width**2)


@dataclass(frozen=True)
class PowerLaw:
    """A / f^alpha between f_low and f_high.

    Below ``f_low`` the PSD is held at its ``f_low`` value (a quasistatic
    plateau keeps the total power finite); above ``f_high`` it is zero.
    """

    amplitude: float
    alpha: float
    f_low: float
    f_high: float = math.inf

    def __post_init__(self):
        if self.amplitude < 0:
            raise ValueError("power-law amplitude must be non-negative")
        if not 0.0 <= self.alpha <= 2.0:
            raise ValueError("alpha must lie in [0, 2]")
        if not 0.0 < self.f_low < self.f_high:
            raise ValueError("power law needs 0 < f_low < f_high")

    def psd(self, f):
        f = np.asarray(f, dtype=float)
        fc = np.maximum(f, self.f_low)
        return np.where(f > self.f_high, 0.0, self.amplitude / fc**self.alpha)


@dataclass(frozen=True)
class LorentzianBump:
    """Finite-frequency feature S_peak * L(f; F, W) (a coherent-TLS bump)."""

    s_peak: float
    center: float
    width: float

    def __post_init__(self):
        if self.s_peak < 0:
            raise ValueError("s_peak must be non-negative")
        if not self.width > 0:
            raise ValueError("Lorentzian width must be positive")

    def psd(self, f):
        return self.s_peak * lorentzian(f, self.center, self.width)


@dataclass(frozen=True)
class RtnLorentzian:
    """Symmetric random telegraph noise, values +-sqrt(variance)."""

    variance: float
    switch_rate: float

    def __post_init__(self):
        if self.variance < 0 or self.switch_rate < 0:
            raise ValueError("RTN variance and switch rate must be non-negative")

    @property
    def correlation_time(self) -> float:
        return math.inf if self.switch_rate == 0 else 1.0 / (2.0 * self.switch_rate)

    def psd(self, f):
        f = np.asarray(f, dtype=float)
        tc = self.correlation_time
        if math.isinf(tc):
            return np.zeros_like(f)
        return 2.0 * self.variance * tc / (1.0 + (2.0 * np.pi * f * tc) ** 2)


@dataclass(frozen=True)
class White:
    level: float

    def __post_init__(self):
        if self.level < 0:
            raise ValueError("white level must be non-negative")

    def psd(self, f):
        return np.full(np.shape(f), self.level, dtype=float)


@dataclass(frozen=True)
class Quasistatic:
    """A constant offset with standard deviation ``sigma`` (rad/s).

    ``scope="shot"`` draws a new offset for every trace; ``scope="point"``
    marks an ultra-slow drift whose value is drawn once per experimental
    point by the caller and shared by every shot taken there. Its spectral
    weight sits at f = 0 and contributes nothing to ``evaluate_psd``.
    """

    sigma: float
    scope: str = "shot"

    def __post_init__(self):
        if self.sigma < 0:
            raise ValueError("sigma must be non-negative")
        if self.scope not in ("shot", "point"):
            raise ValueError("scope must be 'shot' or 'point'")

    def psd(self, f):
        return np.zeros(np.shape(f), dtype=float)


NoiseComponent = Union[PowerLaw, LorentzianBump, RtnLorentzian, White, Quasistatic]

_COMPONENT_TYPES = {
    "power_law": PowerLaw,
    "lorentzian": LorentzianBump,
    "rtn": RtnLorentzian,
    "white": White,
    "quasistatic": Quasistatic,
}
_TYPE_NAMES = {v: k for k, v in _COMPONENT_TYPES.items()}


@dataclass(frozen=True)
class NoiseModel:
    components: tuple = ()

    def __init__(self, components: Sequence[NoiseComponent] = ()):
        object.__setattr__(self, "components", tuple(components))

    def __add__(self, other: "NoiseModel") -> "NoiseModel":
        return NoiseModel(self.components + other.components)

    def __bool__(self):
        return len(self.components) > 0

    def psd(self, f):
        f = np.asarray(f, dtype=float)
        total = np.zeros_like(f)
        for c in self.components:
            total = total + c.psd(f)
        return total

    def shot_components(self):
        return [c for c in self.components
                if not (isinstance(c, Quasistatic) and c.scope == "point")]

    def point_components(self):
        return [c for c in self.components
                if isinstance(c, Quasistatic) and c.scope == "point"]

    def min_resolvable_frequency(self) -> float:
        """Lowest f_low among power laws (0 if there are none)."""
        lows = [c.f_low for c in self.components if isinstance(c, PowerLaw)]
        return min(lows) if lows else 0.0

    def scaled(self, factor: float) -> "NoiseModel":
        """Model of sqrt(factor) * noise, i.e. PSD times ``factor``."""
        if factor < 0:
            raise ValueError("scale factor must be non-negative")
        out = []
        for c in self.components:
            if isinstance(c, PowerLaw):
                out.append(PowerLaw(c.amplitude * factor, c.alpha, c.f_low, c.f_high))
            elif isinstance(c, LorentzianBump):
                out.append(LorentzianBump(c.s_peak * factor, c.center, c.width))
            elif isinstance(c, RtnLorentzian):
                out.append(RtnLorentzian(c.variance * factor, c.switch_rate))
            elif isinstance(c, White):
                out.append(White(c.level * factor))
            else:
                out.append(Quasistatic(c.sigma * math.sqrt(factor), c.scope))
        return NoiseModel(out)

    def to_list(self) -> list:
        return [{"type": _TYPE_NAMES[type(c)], **asdict(c)} for c in self.components]

    @classmethod
    def from_list(cls, items) -> "NoiseModel":
        comps = []
        for item in items:
            item = dict(item)
            kind = item.pop("type")
            comps.append(_COMPONENT_TYPES[kind](**item))
        return cls(comps)


def evaluate_psd(model: NoiseModel, f):
    """Model PSD in rad^2/s at frequencies f > 0 (Hz)."""
    f_arr = np.asarray(f, dtype=float)
    if np.any(f_arr <= 0):
        raise ValueError("PSD is only defined for f > 0")
    out = model.psd(f_arr)
    return float(out) if np.ndim(f) == 0 else out


def psd_variance(model: NoiseModel, f_max: float = math.inf,
                 include_quasistatic: bool = True) -> float:
    """Variance (rad^2/s^2) carried by the band |f| < f_max.

    Counts both frequency signs; quasistatic offsets are added unless
    ``include_quasistatic`` is false.
    """
    total = 0.0
    for c in model.components:
        if isinstance(c, Quasistatic):
            if include_quasistatic:
                total += c.sigma**2
        elif isinstance(c, White):
            if math.isinf(f_max):
                return math.inf
            total += 2.0 * c.level * f_max
        elif isinstance(c, RtnLorentzian):
            if c.switch_rate == 0:
                total += c.variance
            else:
                tc = c.correlation_time
                total += 2.0 * c.variance * math.atan(2 * math.pi * f_max * tc) / math.pi
        elif isinstance(c, PowerLaw):
            hi = min(c.f_high, f_max)
            part = c.amplitude / c.f_low**c.alpha * min(c.f_low, hi)
            if hi > c.f_low:
                if abs(c.alpha - 1.0) < 1e-12:
                    part += c.amplitude * math.log(hi / c.f_low)
                elif math.isinf(hi):
                    if c.alpha <= 1.0:
                        return math.inf
                    part += c.amplitude * c.f_low ** (1 - c.alpha) / (c.alpha - 1)
                else:
                    part += c.amplitude * (hi ** (1 - c.alpha) - c.f_low ** (1 - c.alpha)) / (1 - c.alpha)
            total += 2.0 * part
        else:
            upper = math.pi / 2 if math.isinf(f_max) else math.atan((f_max - c.center) / c.width)
            lower = math.atan(-c.center / c.width)
            total += 2.0 * c.s_peak * c.width * (upper - lower)
    return total


@dataclass
class NoiseTrace:
    dt: float
    samples: np.ndarray
    seed: object = None

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=float)
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if self.samples.ndim != 1 or self.samples.size < 2:
            raise ValueError("a trace needs at least two samples")

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.samples.size) * self.dt

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t_s", "value_rad_per_s"])
            for t, v in zip(self.times, self.samples):
                w.writerow([repr(float(t)), repr(float(v))])


@dataclass
class SpectrumEstimate:
    """(frequency, PSD, uncertainty) samples; ``flagged`` marks unusable points."""

    freq: np.ndarray
    psd: np.ndarray
    err: np.ndarray
    channel: str | None = None
    flagged: np.ndarray = field(default=None)

    def __post_init__(self):
        self.freq = np.asarray(self.freq, dtype=float)
        self.psd = np.asarray(self.psd, dtype=float)
        self.err = np.asarray(self.err, dtype=float)
        if self.flagged is None:
            self.flagged = np.zeros(self.freq.shape, dtype=bool)
        self.flagged = np.asarray(self.flagged, dtype=bool)
        if not (self.freq.shape == self.psd.shape == self.err.shape == self.flagged.shape):
            raise ValueError("spectrum arrays must have matching shapes")
        if self.freq.size > 1 and np.any(np.diff(self.freq) <= 0):
            raise ValueError("frequencies must be strictly increasing")
        if np.any(self.psd[~self.flagged] < 0):
            raise ValueError("negative PSD values must be flagged")

    def to_dict(self) -> dict:
        return {
            "channel": self.channel,
            "freq_hz": self.freq.tolist(),
            "psd_rad2_per_s": self.psd.tolist(),
            "err": self.err.tolist(),
            "flagged": self.flagged.tolist(),
        }

    @classmethod
    def from_dict(cls, d) -> "SpectrumEstimate":
        return cls(d["freq_hz"], d["psd_rad2_per_s"], d["err"], d.get("channel"),
                   d.get("flagged"))

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["freq_hz", "psd_rad2_per_s", "err", "flagged"])
            for f, s, e, fl in zip(self.freq, self.psd, self.err, self.flagged):
                w.writerow([repr(float(f)), repr(float(s)), repr(float(e)), int(fl)])


def _key_int(k) -> int:
    if isinstance(k, (int, np.integer)):
        if k < 0:
            raise ValueError("seed keys must be non-negative")
        return int(k)
    return zlib.crc32(str(k).encode())


def subseed(master, *keys) -> np.random.Generator:
    """Independent generator for the stream addressed by ``(master, *keys)``.

    Streams depend only on the address, never on evaluation order, so
    ensembles are reproducible for any worker count.
    """
    if isinstance(master, np.random.SeedSequence):
        ss = np.random.SeedSequence(master.entropy,
                                    spawn_key=master.spawn_key + tuple(_key_int(k) for k in keys))
    else:
        ss = np.random.SeedSequence(_key_int(master), spawn_key=tuple(_key_int(k) for k in keys))
    return np.random.default_rng(ss)


def _seed_sequence(seed) -> np.random.SeedSequence:
    if isinstance(seed, np.random.SeedSequence):
        return seed
    if isinstance(seed, tuple):
        return np.random.SeedSequence(_key_int(seed[0]), spawn_key=tuple(_key_int(k) for k in seed[1:]))
    return np.random.SeedSequence(_key_int(seed))


def _check_band(model: NoiseModel, dt: float, n: int):
    f_min = 1.0 / (n * dt)
    for c in model.shot_components():
        if isinstance(c, PowerLaw) and f_min > c.f_low * (1 + 1e-9):
            raise BandTooShortError(
                f"trace of {n} samples at dt={dt:g} resolves down to {f_min:g} Hz, "
                f"above the power-law f_low={c.f_low:g} Hz")


class _SpectralShaper:
    """Per-bin amplitudes for one (component, dt, n) combination."""

    def __init__(self, components, dt, n):
        freqs = np.fft.rfftfreq(n, dt)
        s = np.zeros_like(freqs)
        for c in components:
            s[1:] += c.psd(freqs[1:])
        scale = np.sqrt(s * n / dt)
        scale[0] = 0.0
        self.scale = scale
        self.nyquist = n % 2 == 0
        self.n = n

    def draw(self, rng: np.random.Generator) -> np.ndarray:
        nb = self.scale.size
        spec = rng.standard_normal(2 * nb).view(np.complex128) * (self.scale / math.sqrt(2.0))
        if self.nyquist:
            spec[-1] = spec[-1].real * math.sqrt(2.0)
        return spec


def _telegraph(variance, switch_rate, dt, n, rng) -> np.ndarray:
    if switch_rate * dt >= 0.5:
        raise TimestepTooCoarseError("switch_rate * dt must be below 0.5")
    amp = math.sqrt(variance)
    start = 1.0 if rng.random() < 0.5 else -1.0
    if switch_rate == 0:
        return np.full(n, start * amp)
    p_flip = 0.5 * (1.0 - math.exp(-2.0 * switch_rate * dt))
    flips = rng.random(n - 1) < p_flip
    parity = np.concatenate(([0], np.cumsum(flips))) & 1
    return np.where(parity == 0, start * amp, -start * amp)


def synthesize_rtn(variance, switch_rate, dt, n, seed) -> NoiseTrace:
    """Two-state Poisson-switching trace; autocorrelation var * exp(-2 rate t)."""
    if n < 2 or dt <= 0:
        raise ValueError("need n >= 2 and dt > 0")
    rng = np.random.default_rng(_seed_sequence(seed))
    return NoiseTrace(dt, _telegraph(variance, switch_rate, dt, n, rng), seed)


class Synthesizer:
    """Reusable synthesis plan for a model on a fixed (dt, n) grid.

    Component ``j`` of trace ``s`` draws from ``subseed(s, j)``, so the trace
    of a multi-component model is the sum of the single-component traces.

    With ``lump_unresolved=True`` the band check is skipped and the power of
    each Gaussian component below half the first FFT bin is drawn as one
    constant offset per trace. That keeps ensemble traces as short as the
    pulse schedule even when a power law extends to very low frequencies.

    ``merge=True`` shapes all Gaussian components with one FFT from a single
    stream (key ``"gauss"``). The statistics are unchanged and synthesis is
    several times faster, but traces no longer decompose per component.
    """

    def __init__(self, model: NoiseModel, dt: float, n: int,
                 lump_unresolved: bool = False, merge: bool = False):
        if dt <= 0 or n < 2:
            raise ValueError("need dt > 0 and n >= 2")
        if not lump_unresolved:
            _check_band(model, dt, n)
        self.model = model
        self.dt = dt
        self.n = n
        self._plan = []
        if merge:
            gauss = [c for c in model.components
                     if not isinstance(c, (Quasistatic, RtnLorentzian))]
            if gauss:
                key = _key_int("gauss")
                self._plan.append((key, "gauss", _SpectralShaper(gauss, dt, n)))
                if lump_unresolved:
                    low = psd_variance(NoiseModel(gauss), 0.5 / (n * dt))
                    if low > 0:
                        self._plan.append((key, "lump", math.sqrt(low)))
        for j, c in enumerate(model.components):
            if merge and not isinstance(c, (Quasistatic, RtnLorentzian)):
                continue
            if isinstance(c, Quasistatic):
                if c.scope == "shot":
                    self._plan.append((j, "offset", c))
            elif isinstance(c, RtnLorentzian):
                self._plan.append((j, "rtn", c))
            else:
                self._plan.append((j, "gauss", _SpectralShaper([c], dt, n)))
                if lump_unresolved:
                    low = psd_variance(NoiseModel([c]), 0.5 / (n * dt))
                    if low > 0:
                        self._plan.append((j, "lump", math.sqrt(low)))

    def draw(self, seq: np.random.SeedSequence) -> np.ndarray:
        spec = None
        direct = np.zeros(self.n)
        for j, kind, obj in self._plan:
            rng = np.random.default_rng(
                np.random.SeedSequence(seq.entropy, spawn_key=seq.spawn_key + (j,)))
            if kind == "gauss":
                s = obj.draw(rng)
                spec = s if spec is None else spec + s
            elif kind == "rtn":
                direct += _telegraph(obj.variance, obj.switch_rate, self.dt, self.n, rng)
            elif kind == "lump":
                lump_rng = np.random.default_rng(
                    np.random.SeedSequence(seq.entropy, spawn_key=seq.spawn_key + (j, 0)))
                direct += obj * lump_rng.standard_normal()
            else:
                direct += obj.sigma * rng.standard_normal()
        if spec is not None:
            direct += sfft.irfft(spec, self.n)
        return direct


def synthesize(model: NoiseModel, dt: float, n: int, seed) -> NoiseTrace:
    """Zero-mean realization whose expected periodogram is ``evaluate_psd``.

    Gaussian components are shaped in the frequency domain; RTN components
    are true telegraph processes. Deterministic for fixed arguments.
    """
    seq = _seed_sequence(seed)
    return NoiseTrace(dt, Synthesizer(model, dt, n).draw(seq), seed)


def synthesize_batch(model: NoiseModel, dt: float, n: int, seeds) -> np.ndarray:
    """Stack of traces, row k identical to ``synthesize(model, dt, n, seeds[k])``."""
    syn = Synthesizer(model, dt, n)
    out = np.empty((len(seeds), n))
    for k, s in enumerate(seeds):
        out[k] = syn.draw(_seed_sequence(s))
    return out


def estimate_psd(traces) -> SpectrumEstimate:
    """Averaged periodogram over equally shaped traces.

    Normalized as (dt/n) |FFT|^2 so white noise of level L returns L; the
    DC bin is dropped. ``err`` is the standard error across traces.
    """
    traces = list(traces)
    if not traces:
        raise ValueError("no traces to estimate from")
    dt = traces[0].dt
    n = traces[0].samples.size
    for tr in traces:
        if tr.dt != dt or tr.samples.size != n:
            raise ValueError("all traces must share dt and length")
    data = np.stack([tr.samples for tr in traces])
    spec = np.abs(np.fft.rfft(data, axis=1)) ** 2 * (dt / n)
    freqs = np.fft.rfftfreq(n, dt)
    spec = spec[:, 1:]
    mean = spec.mean(axis=0)
    if len(traces) > 1:
        err = spec.std(axis=0, ddof=1) / math.sqrt(len(traces))
    else:
        err = mean.copy()
    return SpectrumEstimate(freqs[1:], mean, err)
