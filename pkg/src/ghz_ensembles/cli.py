"""Command-line front end: ``ghz-ensembles {analytic,simulate,oracle,scaling}``.

Exit codes: 0 success, 2 configuration error, 3 engine guard or safety-cap abort.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import analytics
from .experiment import ORACLE_SCENARIOS, RunConfig, human_time, oracle, render, run_trials
from .loss import NoiseParams
from .protocol import (
    DEFAULT_SAFETY_CAP,
    ConfigError,
    GuardError,
    PrepParams,
    ProtocolConfig,
)

EXIT_OK, EXIT_CONFIG, EXIT_GUARD = 0, 2, 3

# built-in values applied after the config file and the command line
DEFAULTS = {
    "n": 4, "eta": 0.0, "p0": 0.01, "fp": 1e7, "trials": 1000, "seed": 0,
    "engine": "micro", "scheme": "improved", "phases": "mirrored", "restart": "all",
    "out": None, "format": "json", "workers": 1, "safety_cap": DEFAULT_SAFETY_CAP,
    "records": False, "scenario": "closure", "ns": "4,8,16,32,64", "etas": "0,0.1,0.2,0.3333333333333333",
}


def _bool(text: str) -> bool:
    lowered = text.strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


CONVERTERS = {
    "n": int, "eta": float, "p0": float, "fp": float, "trials": int, "seed": int,
    "workers": int, "safety_cap": int, "records": _bool,
}


def read_config_file(path: str) -> dict:
    """Parse ``key=value`` lines; blank lines and ``#`` comments are ignored."""
    values = {}
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc.strerror}") from None
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key=value")
        key, value = (part.strip() for part in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in DEFAULTS:
            raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
        try:
            values[key] = CONVERTERS.get(key, str)(value)
        except ValueError:
            raise ConfigError(f"{path}:{lineno}: bad value for {key}: {value!r}") from None
    return values


def _add_common(p: argparse.ArgumentParser, *names: str) -> None:
    # every default is None so that file values can fill gaps before DEFAULTS
    specs = {
        "n": dict(type=int, help="number of ensembles"),
        "eta": dict(type=float, help="overall loss probability"),
        "p0": dict(type=float, help="pair excitation probability per Raman attempt"),
        "fp": dict(type=float, help="Raman pulse repetition rate in Hz"),
        "trials": dict(type=int, help="independent trials"),
        "seed": dict(type=int, help="master seed"),
        "engine": dict(choices=["micro", "abstract"]),
        "scheme": dict(choices=["basic", "improved"]),
        "phases": dict(choices=["zero", "random", "mirrored"]),
        "restart": dict(choices=["all", "local"]),
        "out": dict(help="output file (stdout if omitted)"),
        "format": dict(choices=["json", "csv"]),
        "workers": dict(type=int, help="worker processes for trial fan-out"),
        "safety_cap": dict(type=int, help="pair preparations allowed per trial"),
    }
    for name in names:
        p.add_argument(f"--{name.replace('_', '-')}", dest=name, default=None, **specs[name])


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ghz-ensembles", description=__doc__.splitlines()[0])
    parser.add_argument("--config", help="key=value file; command-line flags override it")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("analytic", help="closed-form values for one configuration")
    _add_common(p, "n", "eta", "p0", "fp", "out", "format")

    p = sub.add_parser("simulate", help="Monte Carlo trials and report")
    _add_common(p, "n", "eta", "p0", "fp", "trials", "seed", "engine", "scheme",
                "phases", "restart", "out", "format", "workers", "safety_cap")
    p.add_argument("--records", action="store_const", const=True, default=None,
                   help="include per-trial records in the JSON report")

    p = sub.add_parser("oracle", help="exact posteriors for a named step (n <= 8)")
    _add_common(p, "n", "eta", "phases", "seed", "out")
    p.add_argument("--scenario", choices=ORACLE_SCENARIOS, default=None)

    p = sub.add_parser("scaling", help="analytic sweep over n and eta")
    _add_common(p, "p0", "fp", "out", "format")
    p.add_argument("--ns", default=None, help="comma-separated ensemble counts")
    p.add_argument("--etas", default=None, help="comma-separated loss probabilities")
    return parser


def resolve(args: argparse.Namespace) -> dict:
    """Merge command line over config file over built-in defaults."""
    file_values = read_config_file(args.config) if args.config else {}
    merged = {}
    for key, default in DEFAULTS.items():
        flag = getattr(args, key, None)
        merged[key] = flag if flag is not None else file_values.get(key, default)
    return merged


def _emit(text: str, out: str | None) -> None:
    if out is None:
        sys.stdout.write(text)
        return
    try:
        Path(out).write_text(text)
    except OSError as exc:
        raise OSError(f"cannot write {out}: {exc.strerror}") from None


def _floats(text: str) -> list[float]:
    return [float(x) for x in text.split(",") if x.strip()]


def _ints(text: str) -> list[int]:
    return [int(x) for x in text.split(",") if x.strip()]


def protocol_config(v: dict) -> ProtocolConfig:
    return ProtocolConfig(
        n=v["n"], noise=NoiseParams(v["eta"]), prep=PrepParams(v["p0"], v["fp"]),
        scheme=v["scheme"], phase_mode=v["phases"], engine=v["engine"],
        restart_mode=v["restart"], safety_cap=v["safety_cap"],
    )


def cmd_analytic(v: dict) -> int:
    report = analytics.ScalingReport([analytics.scaling_row(v["n"], v["eta"], v["p0"], v["fp"])])
    if v["format"] == "csv":
        _emit(report.to_csv(), v["out"])
    else:
        payload = json.loads(report.to_json())
        row = payload["rows"][0]
        payload["human"] = {k: human_time(row[k]) for k in ("t0_s", "basic_s", "improved_s") if row.get(k) is not None}
        _emit(json.dumps(payload, indent=2, sort_keys=True) + "\n", v["out"])
    return EXIT_OK


def cmd_simulate(v: dict) -> int:
    run = RunConfig(protocol_config(v), trials=v["trials"], master_seed=v["seed"],
                    output_path=v["out"], output_format=v["format"], include_records=bool(v["records"]))
    records = run_trials(run.protocol, run.trials, run.master_seed, workers=v["workers"])
    _emit(render(run, records), run.output_path)
    capped = sum(1 for r in records if r.status == "safety_cap")
    if capped:
        print(f"{capped} of {len(records)} trials hit the safety cap", file=sys.stderr)
        return EXIT_GUARD
    return EXIT_OK


def cmd_oracle(v: dict) -> int:
    result = oracle(v["scenario"], v["n"], v["eta"], v["phases"], v["seed"])
    _emit(json.dumps(result, indent=2, sort_keys=True) + "\n", v["out"])
    return EXIT_OK


def cmd_scaling(v: dict) -> int:
    report = analytics.scaling_report(_ints(v["ns"]), _floats(v["etas"]), v["p0"], v["fp"])
    _emit(report.to_json() + "\n" if v["format"] == "json" else report.to_csv(), v["out"])
    return EXIT_OK


COMMANDS = {"analytic": cmd_analytic, "simulate": cmd_simulate, "oracle": cmd_oracle, "scaling": cmd_scaling}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        values = resolve(args)
        return COMMANDS[args.command](values)
    except GuardError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_GUARD
    except (ConfigError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
