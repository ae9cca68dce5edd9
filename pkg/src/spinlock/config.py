"""Run configuration: JSON with unit-suffixed keys, canonicalized to SI.

Every physical key carries its unit in the name, for example ``delta_ghz``,
``t1_us`` or ``dt_ns``. Any supported suffix of the right dimension is
accepted on input; ``dump_config`` writes plain SI suffixes (``_hz``,
``_s``, ``_k``) so a loaded, dumped and reloaded configuration is identical.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dynamics import PulseCal, SimConfig
from .model import QubitParams
from .noisegen import (
    LorentzianBump, NoiseModel, PowerLaw, Quasistatic, RtnLorentzian, White,
)
from .sequences import PROTOCOLS, ExperimentSpec


class ConfigError(ValueError):
    """Invalid configuration; the message names the offending location."""


UNITS = {
    "freq": {"hz": 1.0, "khz": 1e3, "mhz": 1e6, "ghz": 1e9},
    "time": {"s": 1.0, "ms": 1e-3, "us": 1e-6, "ns": 1e-9},
    "temp": {"k": 1.0, "mk": 1e-3},
}
SI_SUFFIX = {"freq": "hz", "time": "s", "temp": "k"}

# field -> dimension ("freq", "time", "temp", "num", "int", "bool", "str", "list")
QUBIT_FIELDS = {"delta": "freq", "epsilon": "freq", "t1": "time", "temperature": "temp"}
READOUT_FIELDS = {"visibility": "num", "offset": "num"}
SIM_FIELDS = {"dt": "time", "n_trajectories": "int", "seed": "int",
              "integration_frame": "str", "include_t1": "bool", "threads": "int"}
EXPERIMENT_FIELDS = {"protocol": "str", "tau": "time_list", "tau_grid": "grid",
                     "lock_rabi": "freq", "detuning": "freq", "gap": "time", "n_pi": "int",
                     "edge_sigma": "time", "pulse_sigma": "time", "name": "str"}
GRID_FIELDS = {"start": "same", "stop": "same", "num": "int", "spacing": "str"}
COMPONENT_FIELDS = {
    "power_law": {"amplitude": "num", "alpha": "num", "f_low": "freq", "f_high": "freq"},
    "lorentzian": {"s_peak": "num", "center": "freq", "width": "freq"},
    "rtn": {"variance": "num", "switch_rate": "freq"},
    "white": {"level": "num"},
    "quasistatic": {"sigma": "num", "scope": "str"},
}
SPECTROSCOPY_FIELDS = {
    "channel": "str", "rabi": "freq_list", "rabi_grid": "grid", "epsilon": "freq_list",
    "target_gamma_nu_ratio": "num", "tau": "time_list", "n_tau": "int",
    "decay_times": "num", "tau_min": "time", "t1_tau": "time_list", "t1_trajectories": "int",
    "t1_mode": "str", "delta_reference": "str", "rabi_calibration": "bool",
    "calibration_trajectories": "int", "n_lorentzians": "int", "alpha": "num",
    "fit_alpha": "bool", "fit_f_low": "freq", "gap": "time", "edge_sigma": "time",
    "max_sin2_theta": "num", "max_tilt": "num",
}
ECHO_FIELDS = {"tau": "time_list", "tau_grid": "grid", "protocol": "str", "n_pi": "int",
               "epsilon": "freq", "monte_carlo": "bool", "mc_tau": "time_list",
               "n_trajectories": "int"}
OUTPUT_FIELDS = {"dir": "str", "formats": "str_list"}
TOP_FIELDS = {"qubit", "readout", "noise", "sim", "experiments", "spectroscopy", "echo",
              "output"}


def _split_key(key: str, schema: dict, path: str):
    """Map ``delta_ghz`` to ("delta", factor); plain keys map to factor None."""
    if key in schema and schema[key] in ("num", "int", "bool", "str", "grid", "str_list"):
        return key, None
    if "_" in key:
        base, suffix = key.rsplit("_", 1)
        if base in schema:
            dim = schema[base]
            root = dim.replace("_list", "")
            if root in UNITS and suffix in UNITS[root]:
                return base, UNITS[root][suffix]
            if root in UNITS:
                raise ConfigError(f"{path}.{key}: unit '{suffix}' is not a {root} unit "
                                  f"(use one of {', '.join(UNITS[root])})")
    if key in schema:
        dim = schema[key]
        root = dim.replace("_list", "")
        if root in UNITS:
            raise ConfigError(f"{path}.{key}: missing unit suffix, e.g. {key}_{SI_SUFFIX[root]}")
    raise ConfigError(f"{path}.{key}: unknown key")


def _typed(value, dim: str, factor, path: str):
    if dim == "bool":
        if not isinstance(value, bool):
            raise ConfigError(f"{path}: expected true/false")
        return value
    if dim == "int":
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{path}: expected an integer")
        return value
    if dim == "str":
        if not isinstance(value, str):
            raise ConfigError(f"{path}: expected a string")
        return value
    if dim == "str_list":
        if not isinstance(value, list) or not all(isinstance(v, str) for v in value):
            raise ConfigError(f"{path}: expected a list of strings")
        return tuple(value)
    if dim.endswith("_list"):
        if isinstance(value, (int, float)) and not isinstance(value, bool):
            value = [value]
        if not isinstance(value, list):
            raise ConfigError(f"{path}: expected a list of numbers")
        out = []
        for i, v in enumerate(value):
            if isinstance(v, bool) or not isinstance(v, (int, float)):
                raise ConfigError(f"{path}[{i}]: expected a number")
            out.append(float(v) * (factor or 1.0))
        return tuple(out)
    if value is None and dim in UNITS:
        return None
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{path}: expected a number")
    return float(value) * (factor or 1.0)


def _section(raw, schema: dict, path: str) -> dict:
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: expected an object")
    out = {}
    for key, value in raw.items():
        base, factor = _split_key(key, schema, path)
        if base in out:
            raise ConfigError(f"{path}.{key}: '{base}' given more than once")
        dim = schema[base]
        if dim == "grid":
            out[base] = ("grid", value)
        else:
            out[base] = _typed(value, dim, factor, f"{path}.{key}")
    return out


def _grid(raw, dim: str, path: str) -> tuple:
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: expected an object with start/stop/num")
    schema = {"start": dim, "stop": dim, "num": "int", "spacing": "str"}
    g = _section(raw, schema, path)
    for k in ("start", "stop", "num"):
        if k not in g:
            raise ConfigError(f"{path}: missing '{k}'")
    spacing = g.get("spacing", "linear")
    if g["num"] < 1:
        raise ConfigError(f"{path}.num: must be at least 1")
    if spacing == "linear":
        vals = np.linspace(g["start"], g["stop"], g["num"])
    elif spacing == "log":
        if g["start"] <= 0:
            raise ConfigError(f"{path}.start: log spacing needs a positive start")
        vals = np.geomspace(g["start"], g["stop"], g["num"])
    else:
        raise ConfigError(f"{path}.spacing: expected 'linear' or 'log'")
    return tuple(float(v) for v in vals)


def _values(sec: dict, list_key: str, grid_key: str, dim: str, path: str):
    if list_key in sec and grid_key in sec:
        raise ConfigError(f"{path}: give either {list_key} or {grid_key}, not both")
    if grid_key in sec:
        return _grid(sec[grid_key][1], dim, f"{path}.{grid_key}")
    return sec.get(list_key)


def parse_noise(raw, path: str) -> NoiseModel:
    if raw is None:
        return NoiseModel()
    if not isinstance(raw, list):
        raise ConfigError(f"{path}: expected a list of noise components")
    comps = []
    for i, item in enumerate(raw):
        p = f"{path}[{i}]"
        if not isinstance(item, dict) or "type" not in item:
            raise ConfigError(f"{p}: each component needs a 'type'")
        kind = item["type"]
        if kind not in COMPONENT_FIELDS:
            raise ConfigError(f"{p}.type: unknown component '{kind}'")
        body = {k: v for k, v in item.items() if k != "type"}
        sec = _section(body, COMPONENT_FIELDS[kind], p)
        try:
            if kind == "power_law":
                comps.append(PowerLaw(sec["amplitude"], sec["alpha"], sec["f_low"],
                                      sec.get("f_high") or math.inf))
            elif kind == "lorentzian":
                comps.append(LorentzianBump(sec["s_peak"], sec["center"], sec["width"]))
            elif kind == "rtn":
                comps.append(RtnLorentzian(sec["variance"], sec["switch_rate"]))
            elif kind == "white":
                comps.append(White(sec["level"]))
            else:
                comps.append(Quasistatic(sec["sigma"], sec.get("scope", "shot")))
        except KeyError as exc:
            raise ConfigError(f"{p}: missing field {exc.args[0]!r}") from None
        except ValueError as exc:
            raise ConfigError(f"{p}: {exc}") from None
    return NoiseModel(comps)


def dump_noise(model: NoiseModel) -> list:
    out = []
    for c in model.components:
        if isinstance(c, PowerLaw):
            d = {"type": "power_law", "amplitude": c.amplitude, "alpha": c.alpha,
                 "f_low_hz": c.f_low}
            if math.isfinite(c.f_high):
                d["f_high_hz"] = c.f_high
        elif isinstance(c, LorentzianBump):
            d = {"type": "lorentzian", "s_peak": c.s_peak, "center_hz": c.center,
                 "width_hz": c.width}
        elif isinstance(c, RtnLorentzian):
            d = {"type": "rtn", "variance": c.variance, "switch_rate_hz": c.switch_rate}
        elif isinstance(c, White):
            d = {"type": "white", "level": c.level}
        else:
            d = {"type": "quasistatic", "sigma": c.sigma, "scope": c.scope}
        out.append(d)
    return out


@dataclass(frozen=True)
class SpectroscopyConfig:
    channel: str = "epsilon"
    rabi: tuple = ()
    epsilon: tuple | None = None
    target_gamma_nu_ratio: float = 1.0
    tau: tuple | None = None
    n_tau: int = 12
    decay_times: float = 3.0
    tau_min: float = 50e-9
    t1_tau: tuple | None = None
    t1_trajectories: int = 64
    t1_mode: str = "per_bias"
    delta_reference: str = "measure"
    rabi_calibration: bool = True
    calibration_trajectories: int = 64
    n_lorentzians: int = 2
    alpha: float = 0.9
    fit_alpha: bool = False
    fit_f_low: float = 1e3
    gap: float = 5e-9
    edge_sigma: float = 2.5e-9
    max_sin2_theta: float = 0.5
    max_tilt: float = 0.1

    def __post_init__(self):
        if self.channel not in ("delta", "epsilon", "both"):
            raise ValueError("channel must be delta, epsilon or both")
        if not self.rabi:
            raise ValueError("the Rabi-frequency grid is empty")
        if any(r <= 0 for r in self.rabi):
            raise ValueError("Rabi frequencies must be positive")
        if self.epsilon is not None and len(self.epsilon) not in (1, len(self.rabi)):
            raise ValueError("epsilon must be one value or one per grid point")
        if self.t1_mode not in ("per_bias", "once"):
            raise ValueError("t1_mode must be per_bias or once")
        if self.delta_reference not in ("measure", "model"):
            raise ValueError("delta_reference must be measure or model")
        if self.n_tau < 6:
            raise ValueError("n_tau must be at least 6")


@dataclass(frozen=True)
class EchoConfig:
    tau: tuple = ()
    protocol: str = "spin_echo"
    n_pi: int = 1
    epsilon: float | None = None
    monte_carlo: bool = False
    mc_tau: tuple | None = None
    n_trajectories: int | None = None

    def __post_init__(self):
        if not self.tau:
            raise ValueError("echo tau grid is empty")
        if any(t <= 0 for t in self.tau) or any(b <= a for a, b in zip(self.tau, self.tau[1:])):
            raise ValueError("echo tau grid must be positive and increasing")
        if self.protocol not in ("ramsey", "spin_echo", "cpmg"):
            raise ValueError("echo protocol must be ramsey, spin_echo or cpmg")


@dataclass(frozen=True)
class RunConfig:
    qubit: QubitParams
    readout: PulseCal = PulseCal()
    noise_delta: NoiseModel = NoiseModel()
    noise_epsilon: NoiseModel = NoiseModel()
    sim: SimConfig = SimConfig()
    experiments: tuple = ()
    spectroscopy: SpectroscopyConfig | None = None
    echo: EchoConfig | None = None
    output_dir: str = "out"
    formats: tuple = ("csv", "json")

    @property
    def models(self) -> dict:
        return {"delta": self.noise_delta or None, "epsilon": self.noise_epsilon or None}


def _require(sec: dict, key: str, path: str):
    if key not in sec:
        raise ConfigError(f"{path}: missing required key '{key}'")
    return sec[key]


def parse_config(raw) -> RunConfig:
    """Validate a decoded JSON document and build a :class:`RunConfig`."""
    if not isinstance(raw, dict):
        raise ConfigError("config: top level must be an object")
    for key in raw:
        if key not in TOP_FIELDS:
            raise ConfigError(f"config.{key}: unknown key")
    q = _section(_require(raw, "qubit", "config"), QUBIT_FIELDS, "qubit")
    try:
        t1 = q.get("t1")
        qubit = QubitParams(
            delta=_require(q, "delta", "qubit"),
            epsilon=q.get("epsilon", 0.0),
            gamma1=0.0 if t1 is None else 1.0 / t1,
            temperature=q.get("temperature", 0.065),
        )
    except (ValueError, ZeroDivisionError) as exc:
        raise ConfigError(f"qubit: {exc}") from None

    r = _section(raw.get("readout", {}), READOUT_FIELDS, "readout")
    try:
        readout = PulseCal(r.get("visibility", 1.0), r.get("offset", 0.0))
    except ValueError as exc:
        raise ConfigError(f"readout: {exc}") from None

    noise_raw = raw.get("noise", {})
    if not isinstance(noise_raw, dict):
        raise ConfigError("noise: expected an object with 'delta' and/or 'epsilon'")
    for key in noise_raw:
        if key not in ("delta", "epsilon"):
            raise ConfigError(f"noise.{key}: unknown key")
    nd = parse_noise(noise_raw.get("delta"), "noise.delta")
    ne = parse_noise(noise_raw.get("epsilon"), "noise.epsilon")

    s = _section(raw.get("sim", {}), SIM_FIELDS, "sim")
    try:
        sim = SimConfig(dt=s.get("dt", 0.5e-9), n_trajectories=s.get("n_trajectories", 1000),
                        master_seed=s.get("seed", 0),
                        integration_frame=s.get("integration_frame", "rotating_rwa"),
                        include_t1=s.get("include_t1", True), threads=s.get("threads", 1))
    except ValueError as exc:
        raise ConfigError(f"sim: {exc}") from None

    exps = []
    raw_exps = raw.get("experiments", [])
    if not isinstance(raw_exps, list):
        raise ConfigError("experiments: expected a list")
    for i, e in enumerate(raw_exps):
        p = f"experiments[{i}]"
        sec = _section(e, EXPERIMENT_FIELDS, p)
        proto = _require(sec, "protocol", p)
        if proto not in PROTOCOLS:
            raise ConfigError(f"{p}.protocol: unsupported protocol '{proto}'")
        taus = _values(sec, "tau", "tau_grid", "time", p)
        if not taus:
            raise ConfigError(f"{p}: empty tau grid")
        try:
            exps.append(ExperimentSpec(
                protocol=proto, tau_grid=taus, lock_rabi=sec.get("lock_rabi"),
                detuning=sec.get("detuning", 0.0), gap=sec.get("gap", 5e-9),
                n_pi=sec.get("n_pi", 1), edge_sigma=sec.get("edge_sigma", 2.5e-9),
                pulse_sigma=sec.get("pulse_sigma", 2.5e-9), name=sec.get("name", "")))
        except ValueError as exc:
            raise ConfigError(f"{p}: {exc}") from None
    names = [e.label for e in exps]
    if len(set(names)) != len(names):
        raise ConfigError("experiments: labels must be unique (set 'name')")

    spec_cfg = None
    if "spectroscopy" in raw:
        p = "spectroscopy"
        sec = _section(raw["spectroscopy"], SPECTROSCOPY_FIELDS, p)
        rabi = _values(sec, "rabi", "rabi_grid", "freq", p)
        kwargs = {k: v for k, v in sec.items() if k not in ("rabi", "rabi_grid")}
        try:
            spec_cfg = SpectroscopyConfig(rabi=tuple(rabi or ()), **kwargs)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"{p}: {exc}") from None

    echo_cfg = None
    if "echo" in raw:
        p = "echo"
        sec = _section(raw["echo"], ECHO_FIELDS, p)
        taus = _values(sec, "tau", "tau_grid", "time", p)
        kwargs = {k: v for k, v in sec.items() if k not in ("tau", "tau_grid")}
        try:
            echo_cfg = EchoConfig(tau=tuple(taus or ()), **kwargs)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"{p}: {exc}") from None

    o = _section(raw.get("output", {}), OUTPUT_FIELDS, "output")
    formats = o.get("formats", ("csv", "json"))
    for f in formats:
        if f not in ("csv", "json", "png"):
            raise ConfigError(f"output.formats: unsupported format '{f}'")
    return RunConfig(qubit, readout, nd, ne, sim, tuple(exps), spec_cfg, echo_cfg,
                     o.get("dir", "out"), tuple(formats))


def _reject_duplicates(pairs):
    seen = {}
    for key, value in pairs:
        if key in seen:
            raise ConfigError(f"config: key '{key}' appears twice in the same object")
        seen[key] = value
    return seen


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read config ({exc.strerror})") from None
    try:
        raw = json.loads(text, object_pairs_hook=_reject_duplicates)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}:{exc.colno}: invalid JSON ({exc.msg})") from None
    return parse_config(raw)


def _si(name: str, dim: str) -> str:
    return f"{name}_{SI_SUFFIX[dim]}"


def dump_config(cfg: RunConfig) -> dict:
    """SI-suffixed JSON document that parses back to an identical config."""
    q = cfg.qubit
    qubit = {"delta_hz": q.delta, "epsilon_hz": q.epsilon, "temperature_k": q.temperature}
    if q.gamma1 > 0:
        qubit["t1_s"] = 1.0 / q.gamma1
    out = {
        "qubit": qubit,
        "readout": {"visibility": cfg.readout.visibility, "offset": cfg.readout.offset},
        "noise": {"delta": dump_noise(cfg.noise_delta), "epsilon": dump_noise(cfg.noise_epsilon)},
        "sim": {"dt_s": cfg.sim.dt, "n_trajectories": cfg.sim.n_trajectories,
                "seed": cfg.sim.master_seed, "integration_frame": cfg.sim.integration_frame,
                "include_t1": cfg.sim.include_t1, "threads": cfg.sim.threads},
        "experiments": [],
        "output": {"dir": cfg.output_dir, "formats": list(cfg.formats)},
    }
    for e in cfg.experiments:
        d = {"protocol": e.protocol, "tau_s": list(e.tau_grid), "detuning_hz": e.detuning,
             "gap_s": e.gap, "n_pi": e.n_pi, "edge_sigma_s": e.edge_sigma,
             "pulse_sigma_s": e.pulse_sigma}
        if e.lock_rabi is not None:
            d["lock_rabi_hz"] = e.lock_rabi
        if e.name:
            d["name"] = e.name
        out["experiments"].append(d)
    if cfg.spectroscopy is not None:
        sc = cfg.spectroscopy
        d = {}
        for name, dim in SPECTROSCOPY_FIELDS.items():
            if dim == "grid" or name == "rabi_grid":
                continue
            val = getattr(sc, name)
            if val is None:
                continue
            root = dim.replace("_list", "")
            key = _si(name, root) if root in UNITS else name
            d[key] = list(val) if isinstance(val, tuple) else val
        out["spectroscopy"] = d
    if cfg.echo is not None:
        ec = cfg.echo
        d = {"tau_s": list(ec.tau), "protocol": ec.protocol, "n_pi": ec.n_pi,
             "monte_carlo": ec.monte_carlo}
        if ec.epsilon is not None:
            d["epsilon_hz"] = ec.epsilon
        if ec.mc_tau is not None:
            d["mc_tau_s"] = list(ec.mc_tau)
        if ec.n_trajectories is not None:
            d["n_trajectories"] = ec.n_trajectories
        out["echo"] = d
    return out


def config_hash(raw_text: str) -> str:
    return hashlib.sha256(raw_text.encode()).hexdigest()


def canonical_hash(cfg: RunConfig) -> str:
    return config_hash(json.dumps(dump_config(cfg), sort_keys=True))
