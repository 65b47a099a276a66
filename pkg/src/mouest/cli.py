"""Command-line entry point.

Every subcommand reads a flat TOML config (or a ``manifest.json`` written by
an earlier run), writes CSV tables plus ``manifest.json`` into the output
directory, and exits with 0 on success, 2 on configuration errors, 3 on
numerical failures and 4 on I/O or file-format errors.
"""
import argparse
import csv
import datetime as _dt
import json
import logging
import math
import os
import subprocess
import sys
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from . import __version__
from .errors import ConfigError, FormatError, NumericalError
from .estimators import LyapunovFitConfig, accuracy, estimate
from .experiments import cohort, sweeps
from .synth import NetworkConfig, TimeSeries, draw_params, simulate

log = logging.getLogger("mouest")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_IO = 0, 2, 3, 4
COMMANDS = ("simulate", "estimate", "sweep-nodes", "sweep-samples", "diagnose", "classify")
OUT_ENV = "MOUEST_OUT"

_PROTOCOL = dict(density=0.2, tau_x=1.0, euler_dt=0.05, sample_interval=1.0)
_FIT = {f.name: f.default for f in fields(LyapunovFitConfig) if f.name not in ("mask",)}

#: Default values for every recognised key, per subcommand.
SCHEMAS = {
    "simulate": dict(m=10, n=500, **_PROTOCOL),
    "estimate": dict(input="", truth_dir="", sample_interval=None, methods=["bayesian", "lyapunov"], lag_steps=1, **_FIT),
    "sweep-nodes": dict(m_values=[10, 30, 60], n=500, repeats=100, record_time=False, lag_steps=1, **_PROTOCOL, **_FIT),
    "sweep-samples": dict(n_values=[250, 500, 1000, 2000], m=50, repeats=100, record_time=False, lag_steps=1, **_PROTOCOL, **_FIT),
    "diagnose": dict(m_values=[10, 50, 100], n=500, repeats=100, **_PROTOCOL),
    "classify": dict(
        subjects=10, sessions=5, m=50, n=300, feature_mask="true-adjacency", train_fraction=0.8,
        repetitions=30, methods=["lyapunov", "bayesian"], l2_penalty=1e-3, lr=0.1, max_epochs=2000,
        **_PROTOCOL, **_FIT,
    ),
}


@dataclass
class RunConfig:
    command: str
    config_path: str
    output_dir: str
    seed: int
    workers: int = 1
    dt: float = None
    input: str = None
    truth_dir: str = None


def _parser():
    p = argparse.ArgumentParser(prog="mouest", description="Network connectivity estimation from multivariate OU time series.")
    sub = p.add_subparsers(dest="command", metavar="COMMAND")
    sub.required = True
    for name in COMMANDS:
        s = sub.add_parser(name, help=f"run {name}")
        s.add_argument("--config", help="TOML config or manifest.json to replay", required=name != "estimate")
        s.add_argument("--out", help=f"output directory (default: ${OUT_ENV})")
        s.add_argument("--seed", type=int, help="base seed (default: from manifest, else 0)")
        s.add_argument("--workers", type=int, default=1, help="worker processes")
        if name == "estimate":
            s.add_argument("--input", help="series CSV written by `simulate`")
            s.add_argument("--dt", type=float, help="sampling interval in seconds")
            s.add_argument("--truth", dest="truth_dir", help="directory holding connectivity.csv and sigma.csv")
    return p


def parse_args(argv):
    """Parse `argv` into a :class:`RunConfig`; argparse exits on usage errors."""
    p = _parser()
    a = p.parse_args(argv)
    out = a.out or os.environ.get(OUT_ENV)
    if not out:
        p.error(f"--out is required (or set {OUT_ENV})")
    if a.workers < 1:
        p.error("--workers must be >= 1")
    if a.config is not None and not Path(a.config).is_file():
        raise OSError(f"cannot read config file {a.config}")
    return RunConfig(
        command=a.command,
        config_path=a.config,
        output_dir=out,
        seed=a.seed,
        workers=a.workers,
        dt=getattr(a, "dt", None),
        input=getattr(a, "input", None),
        truth_dir=getattr(a, "truth_dir", None),
    )


def load_config(command, path):
    """Resolved settings and the manifest seed (or None) for `command`.

    Unknown keys are rejected; missing keys take their defaults.
    """
    conf = dict(SCHEMAS[command])
    seed = None
    if path is None:
        return conf, seed
    raw = Path(path).read_bytes()
    if str(path).endswith(".json"):
        man = json.loads(raw)
        if man.get("command") != command:
            raise ConfigError(f"manifest {path} is for {man.get('command')!r}, not {command!r}")
        user, seed = man["config"], man.get("seed")
    else:
        try:
            user = tomllib.loads(raw.decode())
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from None
    unknown = sorted(set(user) - set(conf))
    if unknown:
        raise ConfigError(f"{path}: unknown keys for {command}: {', '.join(unknown)}")
    conf.update(user)
    return conf, seed


def _fit_config(conf, mask=None):
    kw = {k: conf[k] for k in _FIT}
    return LyapunovFitConfig(mask=mask, **kw)


def _settings(conf):
    return sweeps.TrialSettings(
        density=conf["density"],
        tau_x=conf["tau_x"],
        euler_dt=conf["euler_dt"],
        sample_interval=conf["sample_interval"],
        lag_steps=conf.get("lag_steps", 1),
        record_time=conf.get("record_time", False),
        fit=_fit_config(conf) if "learning_rate_j" in conf else LyapunovFitConfig(),
    )


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return "nan" if math.isnan(v) else repr(float(v))
    return str(v)


def write_table(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(row[h]) for h in header])


def _write_matrix(path, A):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        for row in np.atleast_2d(A):
            w.writerow([repr(float(v)) for v in row])


def _read_matrix(path):
    try:
        return np.loadtxt(path, delimiter=",", ndmin=2)
    except ValueError as exc:
        raise FormatError(f"{path}: {exc}") from None


def version_string():
    """``git describe`` of the source tree, else the package version."""
    try:
        r = subprocess.run(
            ["git", "describe", "--always", "--dirty", "--tags"],
            cwd=Path(__file__).resolve().parent,
            capture_output=True,
            text=True,
            timeout=5,
        )
        if r.returncode == 0 and r.stdout.strip():
            return f"{__version__}+g{r.stdout.strip()}"
    except (OSError, subprocess.SubprocessError):
        pass
    return __version__


def _write_manifest(out, command, conf, seed, workers, outputs, extra=None):
    man = {
        "command": command,
        "config": conf,
        "seed": seed,
        "workers": workers,
        "version": version_string(),
        "timestamp": _dt.datetime.now(_dt.timezone.utc).isoformat(),
        "outputs": outputs,
    }
    man.update(extra or {})
    (out / "manifest.json").write_text(json.dumps(man, indent=2, sort_keys=True) + "\n")


def _cmd_simulate(conf, seed, out, rc):
    rng = np.random.default_rng([seed, conf["m"], conf["n"]])
    params, rejected = draw_params(NetworkConfig(conf["m"], conf["density"]), rng, conf["tau_x"])
    X = simulate(params, conf["n"] * conf["sample_interval"], rng, euler_dt=conf["euler_dt"], sample_interval=conf["sample_interval"])
    X.to_csv(out / "series.csv")
    _write_matrix(out / "connectivity.csv", params.C)
    _write_matrix(out / "sigma.csv", params.sigma_diag[None, :])
    return ["series.csv", "connectivity.csv", "sigma.csv"], {"sample_interval": X.sample_interval, "rejected_draws": rejected}


def load_timeseries(path, dt=None):
    """Read a series CSV; the interval comes from `dt` or a sibling manifest."""
    path = Path(path)
    if dt is None:
        man = path.parent / "manifest.json"
        if man.is_file():
            dt = json.loads(man.read_text()).get("sample_interval")
    if dt is None:
        raise FormatError(f"{path}: sampling interval unknown; pass --dt or keep the manifest beside the series")
    return TimeSeries.from_csv(path, dt)


ESTIMATE_FIELDS = [
    "method", "m", "accuracy_c", "accuracy_sigma", "iterations", "fit_value", "tau_x_hat",
    "imag_ratio", "sigma_offdiag", "stop_reason", "c_hat_shape", "c_hat", "sigma_hat",
]


def _cmd_estimate(conf, seed, out, rc):
    src = rc.input or conf["input"]
    if not src:
        raise ConfigError("estimate needs --input or an `input` key")
    X = load_timeseries(src, rc.dt or conf["sample_interval"])
    conf["input"] = str(src)
    conf["sample_interval"] = X.sample_interval
    truth = rc.truth_dir or conf["truth_dir"]
    c_true = sig_true = None
    if truth:
        conf["truth_dir"] = str(truth)
        c_true = _read_matrix(Path(truth) / "connectivity.csv")
        sig_true = _read_matrix(Path(truth) / "sigma.csv").ravel()
    rows = []
    for method in conf["methods"]:
        est = estimate(X, method, conf["lag_steps"], _fit_config(conf))
        rec = est.to_record()
        rec["accuracy_c"], rec["accuracy_sigma"] = (
            accuracy(c_true, est, sig_true) if c_true is not None else (float("nan"), float("nan"))
        )
        rows.append(rec)
    write_table(out / "estimate.csv", ESTIMATE_FIELDS, rows)
    return ["estimate.csv"], {"sample_interval": X.sample_interval}


def _cmd_sweep(conf, seed, out, rc, kind):
    st = _settings(conf)
    if kind == "nodes":
        recs = sweeps.sweep_nodes(conf["m_values"], conf["n"], conf["repeats"], seed, st, rc.workers)
    else:
        recs = sweeps.sweep_samples(conf["n_values"], conf["m"], conf["repeats"], seed, st, rc.workers)
    name = f"sweep_{kind}.csv"
    write_table(out / name, sweeps.ACCURACY_FIELDS, sweeps.records_to_rows(recs))
    return [name], {}


def _cmd_diagnose(conf, seed, out, rc):
    recs = sweeps.diagnose_bayes(conf["m_values"], conf["n"], conf["repeats"], seed, _settings(conf), rc.workers)
    write_table(out / "diagnose.csv", sweeps.DIAGNOSIS_FIELDS, sweeps.records_to_rows(recs))
    return ["diagnose.csv"], {}


def _cmd_classify(conf, seed, out, rc):
    cfg = cohort.CohortConfig(
        subjects=conf["subjects"], sessions=conf["sessions"], m=conf["m"], n=conf["n"],
        density=conf["density"], feature_mask=conf["feature_mask"], train_fraction=conf["train_fraction"],
        repetitions=conf["repetitions"], seed=seed, tau_x=conf["tau_x"], euler_dt=conf["euler_dt"],
        sample_interval=conf["sample_interval"], fit=_fit_config(conf),
    )
    train = dict(l2_penalty=conf["l2_penalty"], lr=conf["lr"], max_epochs=conf["max_epochs"])
    outputs = []
    for method in conf["methods"]:
        accs = cohort.classify_experiment(cfg, [method], rc.workers, **train)[method]
        name = f"classify_{method}.csv"
        write_table(out / name, ["method", "repetition", "accuracy"],
                    [{"method": method, "repetition": i, "accuracy": a} for i, a in enumerate(accs)])
        outputs.append(name)
    return outputs, {}


_DISPATCH = {
    "simulate": _cmd_simulate,
    "estimate": _cmd_estimate,
    "sweep-nodes": lambda *a: _cmd_sweep(*a, kind="nodes"),
    "sweep-samples": lambda *a: _cmd_sweep(*a, kind="samples"),
    "diagnose": _cmd_diagnose,
    "classify": _cmd_classify,
}


def run(rc):
    """Execute `rc`; returns the process exit code."""
    seed = rc.seed
    try:
        conf, man_seed = load_config(rc.command, rc.config_path)
        seed = rc.seed if rc.seed is not None else (man_seed if man_seed is not None else 0)
        out = Path(rc.output_dir)
        out.mkdir(parents=True, exist_ok=True)
        outputs, extra = _DISPATCH[rc.command](conf, seed, out, rc)
        _write_manifest(out, rc.command, conf, seed, rc.workers, outputs, extra)
    except (ConfigError, KeyError, TypeError) as exc:
        log.error("configuration error: %s", exc)
        return EXIT_CONFIG
    except NumericalError as exc:
        log.error("numerical failure (seed %s): %s", seed, exc)
        return EXIT_NUMERIC
    except (OSError, FormatError, json.JSONDecodeError) as exc:
        log.error("I/O error: %s", exc)
        return EXIT_IO
    return EXIT_OK


def main(argv=None):
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    try:
        rc = parse_args(sys.argv[1:] if argv is None else argv)
    except OSError as exc:
        log.error("I/O error: %s", exc)
        return EXIT_IO
    return run(rc)


if __name__ == "__main__":
    sys.exit(main())
