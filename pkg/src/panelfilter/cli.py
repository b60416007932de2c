"""Batch command-line front end.

    panelfilter run <config>       full preset run, writes all artifacts
    panelfilter validate <config>  config check only
    panelfilter simulate <config>  data generation only
    panelfilter loglik <config>    likelihood evaluation only

``--out DIR`` overrides the config's output directory and ``--threads N``
(or the PANELFILTER_THREADS environment variable) sets multistart
parallelism.  Exit codes: 0 success, 2 config validation failure, 3 runtime
model error, 4 capability limit exceeded.
"""

from __future__ import annotations

import argparse
import os
import sys

from .config import validate_config
from .errors import CapabilityError, ConfigError
from .presets import loglik_only, run_preset, simulate_only

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3
EXIT_CAPABILITY = 4


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="panelfilter",
        description="Seeded experiment runner for panel state-space inference.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, helptext in (
        ("run", "run the config's preset and write all artifacts"),
        ("validate", "validate a config file"),
        ("simulate", "generate and write the config's simulated data"),
        ("loglik", "evaluate the panel log-likelihood at the config's parameters"),
    ):
        cmd = sub.add_parser(name, help=helptext)
        cmd.add_argument("config", help="path to a flat key = value config file")
        if name != "validate":
            cmd.add_argument("--out", default=None, help="output directory")
            cmd.add_argument("--threads", type=int, default=None,
                             help="worker threads for independent runs")
    return parser


def _resolve_threads(arg_threads, cfg) -> int:
    if arg_threads is not None:
        return max(1, arg_threads)
    env = os.environ.get("PANELFILTER_THREADS")
    if env is not None:
        try:
            return max(1, int(env))
        except ValueError:
            raise ConfigError([f"PANELFILTER_THREADS: expected int, got {env!r}"]) from None
    return max(1, cfg["threads"])


def _resolve_out(arg_out, cfg) -> str:
    out = arg_out if arg_out is not None else cfg["out"]
    if not out:
        raise ConfigError(["out: no output directory given (config key 'out' or --out)"])
    return out


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        cfg = validate_config(args.config)
        if args.command == "validate":
            print(f"ok: preset={cfg.preset} seed={cfg.seed} hash={cfg.config_hash()[:12]}")
            return EXIT_OK
        out_dir = _resolve_out(args.out, cfg)
        if args.command == "run":
            threads = _resolve_threads(args.threads, cfg)
            run_preset(cfg, out_dir, threads)
        elif args.command == "simulate":
            simulate_only(cfg, out_dir)
        elif args.command == "loglik":
            loglik_only(cfg, out_dir)
        print(f"done: {args.command} preset={cfg.preset} out={out_dir}")
        return EXIT_OK
    except ConfigError as exc:
        for problem in exc.problems:
            print(f"config error: {problem}", file=sys.stderr)
        return EXIT_CONFIG
    except CapabilityError as exc:
        print(f"capability error: {exc}", file=sys.stderr)
        return EXIT_CAPABILITY
    except Exception as exc:   # noqa: BLE001 - surfaced as the runtime exit code
        print(f"runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
