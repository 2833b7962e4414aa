"""Command-line interface.

Subcommands: ``detect``, ``experiment``, ``theta``, ``net-gen``. Settings come from an
optional TOML file (``--config``) whose keys match the long flag names (dashes or
underscores); flags given on the command line win. Reports go to stdout as JSON,
diagnostics and machine-readable errors to stderr.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np
import tomli

from . import __version__, plnet
from .exceptions import (
    ConfigError,
    DataError,
    DimensionError,
    InvariantViolation,
    NotACandidateError,
    NumericalError,
)
from .harness import (
    SyntheticSpec,
    ingest_csv,
    read_numeric_csv,
    run,
    run_tabular,
    write_trials_csv,
)
from .inference import DEFAULT_METHODS, Method, analyze, screen_instance
from .knnad import Metric, ScreeningConfig, choose_theta
from .model import StatKind

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4

log = logging.getLogger("statknnad")

DEFAULTS = {
    "alpha": 0.05,
    "k": 1,
    "k_candidates": None,
    "theta": None,
    "theta_quantile": 0.95,
    "methods": ",".join(m.value for m in DEFAULT_METHODS),
    "metric": Metric.SQUARED_L2.value,
    "statistic": StatKind.L1.value,
    "net": None,
    "seed": 0,
    "out_dir": "results",
    "sigma": None,
    "columns": None,
    "standardize": True,
    "mode": "null",
    "n": 100,
    "d": 2,
    "delta": 0.0,
    "trials": 1000,
    "target_screened": None,
    "pipeline": "input",
    "sweep": None,
    "data": None,
    "calibration_sets": 20,
    "input_dim": 16,
    "hidden": "16",
    "output_dim": 4,
    "pool": 2,
    "out": None,
}


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="TOML file with default settings")
    p.add_argument("--seed", type=int)
    p.add_argument("--alpha", type=float)
    p.add_argument("--k", type=int)
    p.add_argument("--k-candidates", help="comma-separated increasing list, e.g. 1,2,5,10")
    p.add_argument("--theta-quantile", type=float)
    p.add_argument("--methods", help="comma-separated subset of stat,wopp,naive,bonferroni,opa1,opa2")
    p.add_argument("--metric", choices=[m.value for m in Metric])
    p.add_argument("--statistic", choices=[k.value for k in StatKind])
    p.add_argument("--net", help="piecewise-linear network JSON (latent-space search)")
    p.add_argument("--out-dir")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="statknnad", description=__doc__.split("\n\n")[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("detect", help="screen test instances and report selective p-values")
    _add_common(p)
    p.add_argument("--train", help="training CSV (header row required)")
    p.add_argument("--test", help="CSV of test instances, same columns as --train")
    p.add_argument("--sigma", help="noise covariance as a headerless d x d CSV")
    p.add_argument("--columns", help="comma-separated feature columns (default: all numeric)")
    p.add_argument("--theta", type=float, help="screening threshold (default: LOO quantile)")
    p.add_argument("--no-standardize", dest="standardize", action="store_const", const=False)

    p = sub.add_parser("experiment", help="Monte Carlo type I error / power experiments")
    _add_common(p)
    p.add_argument("--mode", choices=["null", "power"])
    p.add_argument("--n", type=int)
    p.add_argument("--d", type=int)
    p.add_argument("--delta", type=float)
    p.add_argument("--trials", type=int, help="maximum number of draws per configuration")
    p.add_argument("--target-screened", type=int, help="stop after this many screened draws")
    p.add_argument("--pipeline", choices=["input", "latent"])
    p.add_argument("--sweep", help="parameter sweep NAME=v1,v2,... with NAME in n,d,k,delta")
    p.add_argument("--data", help="tabular CSV to resample instead of synthetic data")
    p.add_argument("--columns")
    p.add_argument("--calibration-sets", type=int)

    p = sub.add_parser("theta", help="calibrate the screening threshold on training data")
    _add_common(p)
    p.add_argument("--train")
    p.add_argument("--columns")
    p.add_argument("--no-standardize", dest="standardize", action="store_const", const=False)

    p = sub.add_parser("net-gen", help="write a random piecewise-linear network as JSON")
    p.add_argument("--config")
    p.add_argument("--seed", type=int)
    p.add_argument("--input-dim", type=int)
    p.add_argument("--hidden", help="comma-separated hidden widths")
    p.add_argument("--output-dim", type=int)
    p.add_argument("--pool", type=int, help="max-pool window (0 or 1 disables pooling)")
    p.add_argument("--out", help="output path (default: stdout)")
    p.add_argument("-v", "--verbose", action="store_true")
    return parser


def resolve(args: argparse.Namespace) -> dict:
    """Merge defaults < config file < command-line flags."""
    settings = dict(DEFAULTS)
    if getattr(args, "config", None):
        path = Path(args.config)
        try:
            with open(path, "rb") as fh:
                file_cfg = tomli.load(fh)
        except FileNotFoundError:
            raise ConfigError(f"{path}: no such config file") from None
        except tomli.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from None
        section = file_cfg.get(args.command, {})
        flat = {k: v for k, v in file_cfg.items() if not isinstance(v, dict)}
        for key, value in {**flat, **section}.items():
            key = key.replace("-", "_")
            if key not in DEFAULTS and key not in ("train", "test"):
                raise ConfigError(f"unknown config key {key!r}")
            settings[key] = value
    for key, value in vars(args).items():
        if value is not None and key not in ("command", "config"):
            settings[key] = value
    if not 0 < float(settings["alpha"]) < 1:
        raise ConfigError("alpha must lie in (0, 1)")
    return settings


def _int_list(value) -> tuple[int, ...]:
    if isinstance(value, (list, tuple)):
        return tuple(int(v) for v in value)
    try:
        return tuple(int(v) for v in str(value).split(",") if v.strip())
    except ValueError:
        raise ConfigError(f"expected a comma-separated integer list, got {value!r}") from None


def _str_list(value) -> list[str]:
    if isinstance(value, (list, tuple)):
        return [str(v) for v in value]
    return [v.strip() for v in str(value).split(",") if v.strip()]


def _k_setting(s: dict):
    if s.get("k_candidates"):
        return _int_list(s["k_candidates"])
    return int(s["k"])


def _methods(s: dict) -> tuple[Method, ...]:
    try:
        return tuple(Method(m) for m in _str_list(s["methods"]))
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def _require(s: dict, key: str) -> str:
    if not s.get(key):
        raise ConfigError(f"--{key.replace('_', '-')} is required")
    return s[key]


def _load_net(s: dict):
    return plnet.load(s["net"]) if s.get("net") else None


def _latent_train(net, train):
    if net is None:
        return train
    latent, _ = plnet.forward_batch(net, train)
    return latent


def _verdict(report, alpha: float) -> str:
    if report.p_selective is None:
        return "unknown"
    return "anomaly" if report.p_selective <= alpha else "normal"


def _finite(v):
    return None if v is None or not math.isfinite(v) else float(v)


def cmd_detect(s: dict) -> dict:
    columns = _str_list(s["columns"]) if s.get("columns") else None
    dataset = ingest_csv(_require(s, "train"), columns, s.get("sigma"), bool(s["standardize"]))
    X_test, _ = read_numeric_csv(_require(s, "test"), list(dataset.columns))
    X_test = dataset.transform(X_test)
    net = _load_net(s)
    k = _k_setting(s)
    methods = _methods(s)
    kind = StatKind(s["statistic"])
    theta = s.get("theta")
    if theta is None:
        theta = choose_theta(_latent_train(net, dataset.train), ScreeningConfig(k=k), float(s["theta_quantile"]))
    config = ScreeningConfig(k=k, theta=float(theta), metric=s["metric"])
    alpha = float(s["alpha"])
    results = []
    for i, x in enumerate(X_test):
        scr = screen_instance(x, dataset.train, config, net)
        entry = {
            "index": i,
            "score": _finite(scr.score),
            "k_star": scr.outcome.k_star,
            "neighbors": list(scr.outcome.neighbors),
            "screened": scr.selected,
        }
        if not scr.selected:
            entry["verdict"] = "not-a-candidate"
        else:
            report = analyze(x, dataset.train, config, dataset.sigma, kind, net, methods, screening=scr).report
            entry.update(
                verdict=_verdict(report, alpha),
                p_values=report.p_values(),
                z_obs=report.z_obs,
                sigma2=report.sigma2,
                Z=report.Z.to_list(),
                n_inequalities=report.n_inequalities,
            )
        results.append(entry)
    return {
        "command": "detect",
        "alpha": alpha,
        "theta": float(theta),
        "k": list(k) if isinstance(k, tuple) else k,
        "statistic": kind.value,
        "latent": net is not None,
        "columns": list(dataset.columns),
        "results": results,
    }


SWEEPABLE = {"n": int, "d": int, "k": int, "delta": float}


def _parse_sweep(value) -> tuple[str, list]:
    if not value:
        return "", [None]
    name, _, rest = str(value).partition("=")
    name = name.strip()
    if name not in SWEEPABLE or not rest:
        raise ConfigError(f"--sweep must look like NAME=v1,v2 with NAME in {sorted(SWEEPABLE)}")
    try:
        values = [SWEEPABLE[name](v) for v in rest.split(",") if v.strip()]
    except ValueError:
        raise ConfigError(f"bad sweep values {rest!r}") from None
    return name, values


def cmd_experiment(s: dict) -> dict:
    mode = s["mode"]
    if mode not in ("null", "power"):
        raise ConfigError("mode must be 'null' or 'power'")
    base = SyntheticSpec(
        n=int(s["n"]),
        d=int(s["d"]),
        k=_k_setting(s),
        delta=0.0 if mode == "null" else float(s["delta"]),
        trials=int(s["trials"]),
        seed=int(s["seed"]),
        theta_quantile=float(s["theta_quantile"]),
        alpha=float(s["alpha"]),
        target_screened=None if s.get("target_screened") is None else int(s["target_screened"]),
        methods=tuple(m.value for m in _methods(s)),
        statistic=s["statistic"],
        pipeline=s["pipeline"],
        calibration_sets=int(s["calibration_sets"]),
    )
    name, values = _parse_sweep(s.get("sweep"))
    if mode == "null" and name == "delta":
        raise ConfigError("sweeping delta only makes sense in power mode")
    net = _load_net(s)
    dataset = None
    if s.get("data"):
        columns = _str_list(s["columns"]) if s.get("columns") else None
        dataset = ingest_csv(s["data"], columns, s.get("sigma"))
    out_dir = Path(s["out_dir"])
    out_dir.mkdir(parents=True, exist_ok=True)

    points = []
    for value in values:
        spec = base if name == "" else replace(base, **{name: value})
        if mode == "power" and spec.delta <= 0:
            raise ConfigError("power mode needs delta > 0")
        if dataset is not None:
            result = run_tabular(dataset, spec)
        else:
            result = run(spec, net)
        tag = "" if name == "" else f"_{name}={value}"
        trials_path = out_dir / f"trials{tag}.csv"
        write_trials_csv(result, trials_path)
        point = result.to_json()
        point["x"] = value
        point["trials_csv"] = trials_path.name
        points.append(point)
        log.info("%s=%s: %d screened of %d draws", name or "run", value, result.screened, result.draws)

    methods = list(base.methods)
    with open(out_dir / "plot.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x"] + methods)
        for point in points:
            rates = [point["methods"][m]["rate"] for m in methods]
            w.writerow(["" if point["x"] is None else point["x"]] + ["" if r is None else repr(r) for r in rates])

    summary = {
        "command": "experiment",
        "mode": mode,
        "sweep": name or None,
        "seed": base.seed,
        "data": s.get("data"),
        "points": points,
    }
    (out_dir / "results.json").write_text(json.dumps(summary, indent=2, sort_keys=True))
    return summary


def cmd_theta(s: dict) -> dict:
    columns = _str_list(s["columns"]) if s.get("columns") else None
    dataset = ingest_csv(_require(s, "train"), columns, None, bool(s["standardize"]))
    net = _load_net(s)
    k = _k_setting(s)
    q = float(s["theta_quantile"])
    theta = choose_theta(_latent_train(net, dataset.train), ScreeningConfig(k=k), q)
    return {
        "command": "theta",
        "theta": theta,
        "quantile": q,
        "k": list(k) if isinstance(k, tuple) else k,
        "n": dataset.n,
    }


def cmd_net_gen(s: dict) -> dict:
    rng = np.random.default_rng(int(s["seed"]))
    hidden = _int_list(s["hidden"])
    pool = int(s["pool"]) if s.get("pool") else None
    try:
        net = plnet.random_network(rng, int(s["input_dim"]), hidden, int(s["output_dim"]), pool)
    except DimensionError as exc:
        raise ConfigError(str(exc)) from None
    obj = plnet.to_dict(net)
    if s.get("out"):
        Path(s["out"]).write_text(json.dumps(obj))
    return obj


COMMANDS = {
    "detect": cmd_detect,
    "experiment": cmd_experiment,
    "theta": cmd_theta,
    "net-gen": cmd_net_gen,
}


def _fail(code: int, exc: BaseException) -> int:
    json.dump({"error": type(exc).__name__, "message": str(exc), "exit_code": code}, sys.stderr)
    sys.stderr.write("\n")
    return code


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
        stream=sys.stderr,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        settings = resolve(args)
        out = COMMANDS[args.command](settings)
    except (ConfigError, NotACandidateError) as exc:
        return _fail(EXIT_CONFIG, exc)
    except (DataError, DimensionError) as exc:
        return _fail(EXIT_DATA, exc)
    except (NumericalError, InvariantViolation) as exc:
        return _fail(EXIT_NUMERIC, exc)
    except (ValueError, TypeError) as exc:
        return _fail(EXIT_CONFIG, exc)
    if not (args.command == "net-gen" and settings.get("out")):
        json.dump(out, sys.stdout, indent=2, sort_keys=True)
        sys.stdout.write("\n")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
