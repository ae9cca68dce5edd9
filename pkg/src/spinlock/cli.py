"""Command-line front end: ``spinlock {run,spectroscopy,predict-echo,validate}``.

Exit status is 0 on success, 1 for an unreadable or invalid config and 2 for
a failure while running. Log messages go to standard error. Every command
that writes results also writes ``manifest.json`` with the config hash,
seed and library versions; it contains no timestamps, so reruns with the
same config and seed produce byte-identical output directories.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import platform
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, RunConfig, config_hash, dump_config, load_config

log = logging.getLogger("spinlock")


class _Outputs:
    """Tracks written files so the manifest can list them with checksums."""

    def __init__(self, root: Path, formats: tuple):
        self.root = root
        self.formats = formats
        self.files: list[Path] = []
        root.mkdir(parents=True, exist_ok=True)

    def want(self, fmt: str) -> bool:
        return fmt in self.formats

    def path(self, name: str) -> Path:
        p = self.root / name
        self.files.append(p)
        return p

    def json(self, name: str, obj):
        self.path(name).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")

    def csv(self, name: str, header: list, rows):
        with open(self.path(name), "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            for row in rows:
                w.writerow([repr(float(v)) if not isinstance(v, (bool, str)) else v
                            for v in row])


def _versions() -> dict:
    import numba
    import scipy
    return {"spinlock": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
            "numba": numba.__version__, "python": platform.python_version()}


def _manifest(out: _Outputs, command: str, cfg: RunConfig, raw_hash: str, extra=None):
    files = {}
    for p in sorted(set(out.files)):
        files[p.name] = hashlib.sha256(p.read_bytes()).hexdigest()
    resolved = dump_config(cfg)
    # thread count changes speed only, so it is left out to keep manifests identical
    resolved["sim"].pop("threads", None)
    doc = {"command": command, "config_sha256": raw_hash, "master_seed": cfg.sim.master_seed,
           "versions": _versions(), "resolved_config": resolved, "outputs": files}
    if extra:
        doc.update(extra)
    (out.root / "manifest.json").write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def _curve_out(out: _Outputs, name: str, curve):
    if out.want("csv"):
        out.csv(f"{name}.csv", ["tau_s", "psw", "stderr"],
                zip(curve.tau, curve.value, curve.stderr))
    if out.want("json"):
        out.json(f"{name}.json", curve.to_dict())


def _spectrum_out(out: _Outputs, name: str, est):
    if out.want("csv"):
        out.csv(f"{name}.csv", ["freq_hz", "psd_rad2_per_s", "err", "flagged"],
                zip(est.freq, est.psd, est.err, [bool(f) for f in est.flagged]))
    if out.want("json"):
        out.json(f"{name}.json", est.to_dict())


def _plot(out: _Outputs, name: str, series: list, xlabel: str, ylabel: str, loglog=False):
    try:
        import matplotlib
        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
    except ImportError:
        log.warning("matplotlib is not installed; skipping %s.png", name)
        return
    fig, ax = plt.subplots(figsize=(6, 4))
    for x, y, err, label in series:
        if err is None:
            ax.plot(x, y, label=label)
        else:
            ax.errorbar(x, y, yerr=err, fmt="o", ms=3, label=label)
    if loglog:
        ax.set_xscale("log")
        ax.set_yscale("log")
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    ax.legend()
    fig.tight_layout()
    fig.savefig(out.path(f"{name}.png"), dpi=100, metadata={"Software": None})
    plt.close(fig)


# ----------------------------------------------------------------- commands

def cmd_run(cfg: RunConfig, out: _Outputs) -> dict:
    from .pipeline import derive_seed
    from .sequences import InterleavedCurves, run_experiment

    if not cfg.experiments:
        raise ConfigError("experiments: the run command needs at least one experiment")
    for i, spec in enumerate(cfg.experiments):
        sim = replace(cfg.sim, master_seed=derive_seed(cfg.sim.master_seed, "experiment", i))
        log.info("running %s (%d tau points, %d trajectories)", spec.label,
                 len(spec.tau_grid), sim.n_trajectories)
        res = run_experiment(spec, cfg.qubit, cfg.models, sim, cfg.readout)
        curves = ([(f"{spec.label}_a", res.a), (f"{spec.label}_b", res.b),
                   (spec.label, res.average)] if isinstance(res, InterleavedCurves)
                  else [(spec.label, res)])
        for name, c in curves:
            _curve_out(out, name, c)
        if out.want("png"):
            _plot(out, spec.label, [(c.tau, c.value, c.stderr, n) for n, c in curves],
                  "tau (s)", "switching probability")
    return {}


def cmd_spectroscopy(cfg: RunConfig, out: _Outputs) -> dict:
    from .pipeline import run_spectroscopy

    if cfg.spectroscopy is None:
        raise ConfigError("spectroscopy: section is required for this command")
    res = run_spectroscopy(cfg)
    for ch, est in res.estimates.items():
        _spectrum_out(out, f"spectrum_{ch}", est)
    rows = [p.to_dict() for p in res.points]
    if out.want("csv"):
        keys = ["channel", "nu_r_nominal", "nu_r", "nu_r_err", "epsilon", "theta", "gamma_1",
                "gamma_1_err", "gamma_1rho", "gamma_1rho_err"]
        out.csv("rates.csv", [k if k in ("channel", "theta") else
                              k + ("_hz" if k.startswith(("nu", "eps")) else "_per_s")
                              for k in keys], ([r[k] for k in keys] for r in rows))
    report = {"points": rows, "warnings": res.warnings,
              "fit": res.fit.to_dict() if res.fit else None}
    out.json("spectroscopy_report.json", report)
    for w in res.warnings:
        log.warning("%s", w)
    if out.want("png"):
        series = [(e.freq, e.psd, e.err, ch) for ch, e in res.estimates.items()]
        if res.fit is not None:
            est = next(iter(res.estimates.values()))
            f = np.geomspace(est.freq.min(), est.freq.max(), 200)
            series.append((f, res.fit.model.psd(f), None, "fit"))
        _plot(out, "spectrum", series, "frequency (Hz)", "PSD (rad^2/s)", loglog=True)
    return {}


def cmd_predict_echo(cfg: RunConfig, out: _Outputs) -> dict:
    from .pipeline import predict_echo

    if cfg.echo is None:
        raise ConfigError("echo: section is required for this command")
    pred = predict_echo(cfg)
    rep = pred.report
    if out.want("csv"):
        out.csv("echo_prediction.csv", ["tau_s", "coherence", "baseline"],
                zip(rep.tau, rep.coherence, rep.baseline))
    if out.want("json"):
        out.json("echo_prediction.json", rep.to_dict())
    doc = {"dip_tau_s": rep.dip_tau, "raw_dip_tau_s": rep.raw_dip_tau}
    if pred.mc is not None:
        if out.want("csv"):
            out.csv("echo_mc.csv", ["tau_s", "coherence", "stderr", "analytic"],
                    zip(pred.mc.tau, pred.mc.value, pred.mc.stderr, pred.mc_analytic))
        z = pred.mc_zscores
        doc["mc_max_abs_z"] = float(np.max(np.abs(z)))
        doc["mc_zscores"] = [float(v) for v in z]
    out.json("echo_report.json", doc)
    if out.want("png"):
        series = [(rep.tau, rep.coherence, None, "filter function"),
                  (rep.tau, rep.baseline, None, "without bumps")]
        if pred.mc is not None:
            series.append((pred.mc.tau, pred.mc.value, pred.mc.stderr, "Monte Carlo"))
        _plot(out, "echo", series, "tau (s)", "coherence")
    return {}


COMMANDS = {"run": cmd_run, "spectroscopy": cmd_spectroscopy,
            "predict-echo": cmd_predict_echo}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="spinlock", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    for name, help_ in (("run", "simulate the configured experiments"),
                        ("spectroscopy", "measure a noise spectrum over a Rabi grid"),
                        ("predict-echo", "predict echo decay from a noise model"),
                        ("validate", "check a config file and exit")):
        s = sub.add_parser(name, help=help_)
        s.add_argument("--config", required=True, type=Path, help="JSON config file")
        s.add_argument("--seed", type=int, help="override sim.seed")
        s.add_argument("--out", type=Path, help="override output.dir")
        s.add_argument("--threads", type=int, help="worker threads (results do not change)")
        s.add_argument("--format", choices=("csv", "json"),
                       help="write only this data format")
        s.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(stream=sys.stderr, format="spinlock: %(levelname)s: %(message)s",
                        level=logging.DEBUG if args.verbose else logging.INFO, force=True)
    try:
        cfg = load_config(args.config)
        raw_hash = config_hash(args.config.read_text())
        sim = cfg.sim
        if args.seed is not None:
            sim = replace(sim, master_seed=args.seed)
        if args.threads is not None:
            if args.threads < 1:
                raise ConfigError("--threads must be at least 1")
            sim = replace(sim, threads=args.threads)
        cfg = replace(cfg, sim=sim)
        if args.format:
            extra = tuple(f for f in cfg.formats if f == "png")
            cfg = replace(cfg, formats=(args.format,) + extra)
    except ConfigError as exc:
        log.error("%s", exc)
        return 1

    if args.command == "validate":
        log.info("config OK: %d experiment(s)%s%s", len(cfg.experiments),
                 ", spectroscopy" if cfg.spectroscopy else "", ", echo" if cfg.echo else "")
        return 0

    out = _Outputs(args.out or Path(cfg.output_dir), cfg.formats)
    try:
        extra = COMMANDS[args.command](cfg, out)
    except ConfigError as exc:
        log.error("%s", exc)
        return 1
    except Exception as exc:  # noqa: BLE001 - any failure while running maps to exit 2
        log.error("%s failed: %s: %s", args.command, type(exc).__name__, exc)
        log.debug("traceback", exc_info=True)
        return 2
    _manifest(out, args.command, cfg, raw_hash, extra)
    log.info("wrote %d file(s) to %s", len(set(out.files)) + 1, out.root)
    return 0


if __name__ == "__main__":
    sys.exit(main())
