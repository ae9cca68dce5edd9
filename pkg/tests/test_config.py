import json
import math

import pytest

from spinlock.config import (
    ConfigError, canonical_hash, dump_config, load_config, parse_config,
)
from spinlock.noisegen import LorentzianBump, PowerLaw

FULL = {
    "qubit": {"delta_ghz": 5.4, "epsilon_mhz": 400, "t1_us": 12, "temperature_mk": 50},
    "readout": {"visibility": 0.9, "offset": 0.05},
    "noise": {
        "delta": [{"type": "white", "level": 1e5}, {"type": "quasistatic", "sigma": 1e5,
                                                      "scope": "point"}],
        "epsilon": [{"type": "power_law", "amplitude": 1.668e13, "alpha": 0.9, "f_low_khz": 1},
                    {"type": "lorentzian", "s_peak": 7e8, "center_mhz": 1.05, "width_mhz": 0.25},
                    {"type": "rtn", "variance": 1e10, "switch_rate_khz": 10}],
    },
    "sim": {"dt_ns": 0.5, "n_trajectories": 32, "seed": 7, "threads": 2},
    "experiments": [
        {"protocol": "sl5_interleaved", "lock_rabi_mhz": 3,
         "tau_grid": {"start_us": 0.1, "stop_us": 10, "num": 8, "spacing": "log"}},
        {"protocol": "cpmg", "n_pi": 4, "tau_us": [1, 2, 3]},
    ],
    "spectroscopy": {"channel": "both", "rabi_grid": {"start_mhz": 0.5, "stop_mhz": 20, "num": 4,
                                                      "spacing": "log"},
                     "tau_min_ns": 40, "max_tilt": 0.2},
    "echo": {"tau_grid": {"start_us": 0.1, "stop_us": 3, "num": 30}, "monte_carlo": True,
             "mc_tau_us": [0.5, 1.0], "epsilon_mhz": 500},
    "output": {"dir": "results", "formats": ["csv"]},
}


def _parse(**changes):
    raw = json.loads(json.dumps(FULL))
    for path, value in changes.items():
        node = raw
        keys = path.split("__")
        for k in keys[:-1]:
            node = node[int(k)] if isinstance(node, list) else node[k]
        if value is ...:
            del node[keys[-1]]
        else:
            node[keys[-1]] = value
    return parse_config(raw)


def test_units_are_converted_to_si():
    cfg = _parse()
    assert cfg.qubit.delta == 5.4e9
    assert cfg.qubit.epsilon == 400e6
    assert cfg.qubit.gamma1 == pytest.approx(1 / 12e-6)
    assert cfg.qubit.temperature == pytest.approx(0.05)
    assert cfg.sim.dt == pytest.approx(0.5e-9)
    assert cfg.noise_epsilon.components[0] == PowerLaw(1.668e13, 0.9, 1e3)
    assert cfg.noise_epsilon.components[1] == LorentzianBump(7e8, 1.05e6, 0.25e6)
    assert cfg.spectroscopy.tau_min == pytest.approx(40e-9)
    assert cfg.echo.epsilon == 500e6


def test_grids():
    cfg = _parse()
    taus = cfg.experiments[0].tau_grid
    assert len(taus) == 8
    assert taus[0] == pytest.approx(0.1e-6) and taus[-1] == pytest.approx(10e-6)
    assert taus[1] / taus[0] == pytest.approx(taus[2] / taus[1])
    echo = cfg.echo.tau
    assert echo[1] - echo[0] == pytest.approx(echo[2] - echo[1])


def test_round_trip_through_si_document():
    cfg = _parse()
    again = parse_config(json.loads(json.dumps(dump_config(cfg))))
    assert again == cfg
    assert canonical_hash(again) == canonical_hash(cfg)


@pytest.mark.parametrize("change, fragment", [
    ({"qubit__delta_gauss": 1.0}, "qubit.delta_gauss: unit 'gauss'"),
    ({"qubit__colour": "red"}, "qubit.colour: unknown key"),
    ({"qubit__delta": 5.4e9}, "missing unit suffix"),
    ({"qubit__delta_mhz": 5400}, "given more than once"),
    ({"sim__n_trajectories": 3.5}, "sim.n_trajectories: expected an integer"),
    ({"experiments__1__protocol": "hahn"}, "unsupported protocol"),
    ({"experiments__1__tau_us": []}, "experiments[1]: empty tau grid"),
    ({"experiments__0__lock_rabi_mhz": ...}, "experiments[0]"),
    ({"noise__epsilon__2__type": "pink"}, "noise.epsilon[2].type"),
    ({"noise__epsilon__1__width_mhz": ...}, "missing field 'width'"),
    ({"spectroscopy__channel": "phase"}, "spectroscopy"),
    ({"echo__protocol": "rotary_echo"}, "echo"),
    ({"output__formats": ["xml"]}, "unsupported format 'xml'"),
    ({"extras": {}}, "config.extras: unknown key"),
])
def test_errors_name_the_offending_location(change, fragment):
    with pytest.raises(ConfigError) as info:
        _parse(**change)
    assert fragment in str(info.value)


def test_qubit_section_is_required():
    with pytest.raises(ConfigError, match="missing required key 'qubit'"):
        parse_config({"sim": {}})


def test_load_missing_file(tmp_path):
    with pytest.raises(ConfigError, match="cannot read config"):
        load_config(tmp_path / "absent.json")


def test_load_invalid_json(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text('{"qubit": {"delta_ghz": 5.4,}}')
    with pytest.raises(ConfigError, match=r"bad.json:1:\d+: invalid JSON"):
        load_config(p)


def test_load_rejects_repeated_keys(tmp_path):
    p = tmp_path / "dup.json"
    p.write_text('{"qubit": {"delta_ghz": 5.4, "delta_ghz": 5.5}}')
    with pytest.raises(ConfigError, match="appears twice"):
        load_config(p)


def test_defaults():
    cfg = parse_config({"qubit": {"delta_ghz": 5.4}})
    assert cfg.qubit.gamma1 == 0.0
    assert cfg.sim.n_trajectories == 1000
    assert not cfg.noise_delta and cfg.models == {"delta": None, "epsilon": None}
    assert cfg.experiments == () and cfg.spectroscopy is None and cfg.echo is None
    assert math.isclose(cfg.qubit.temperature, 0.065)
