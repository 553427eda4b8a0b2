"""Command-line front end.

Subcommands::

    folocate simulate --model M --scenario S --out data.csv [--seed N]
    folocate locate   --model M --measurements data.csv --out DIR [...]
    folocate pipeline --config run.yaml [...]

Exit status: 0 source found, 2 no FO detected, 3 invalid input,
4 numerical failure.  Flags override values read from a config file; the
output directory falls back to ``$FOLOCATE_OUTPUT_DIR``.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace

from . import __version__
from .model import ModelError, load_model
from .pipeline import (
    EXIT_NO_FO,
    EXIT_NUMERICAL,
    EXIT_OK,
    EXIT_VALIDATION,
    ConfigError,
    PipelineConfig,
    PipelineError,
    export_report,
    load_config,
    run_pipeline,
)
from .simulator import ScenarioError, SimulationError, load_scenario, simulate, write_measurements_csv

__all__ = ["main", "build_parser"]

log = logging.getLogger("folocate")


def _add_overrides(p: argparse.ArgumentParser) -> None:
    p.add_argument("--lambda", dest="stls_lambda", type=float, help="initial STLS threshold")
    p.add_argument("--max-freqs", dest="max_frequencies", type=int, help="at most this many FO frequencies (<= 3)")
    p.add_argument("--window-start", type=float, help="window start, s after the first sample")
    p.add_argument("--window-length", type=float, help="window length, s")
    p.add_argument("--smoothing-width", type=int, help="moving-average width before differencing")
    p.add_argument("--no-refine", dest="refine", action="store_false", default=None,
                   help="keep FO frequencies on the FFT grid")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="folocate", description="Forced-oscillation source localization.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="simulate a scenario and write measurements")
    p.add_argument("--model", required=True)
    p.add_argument("--scenario", required=True)
    p.add_argument("--out", required=True, help="measurement CSV to write")
    p.add_argument("--seed", type=int)

    p = sub.add_parser("locate", help="locate the FO source in a measurement CSV")
    p.add_argument("--model", required=True)
    p.add_argument("--measurements", required=True)
    p.add_argument("--out", help="report directory")
    _add_overrides(p)

    p = sub.add_parser("pipeline", help="run a configured end-to-end localization")
    p.add_argument("--config", required=True)
    p.add_argument("--out", help="report directory")
    p.add_argument("--seed", type=int)
    _add_overrides(p)
    return parser


def _overrides(args) -> dict:
    keys = ("stls_lambda", "max_frequencies", "window_start", "window_length", "smoothing_width",
            "refine", "seed")
    out = {k: getattr(args, k) for k in keys if getattr(args, k, None) is not None}
    if getattr(args, "out", None) is not None:
        out["output_dir"] = args.out
    return out


def _cmd_simulate(args) -> int:
    model = load_model(args.model)
    scenario = load_scenario(args.scenario)
    if args.seed is not None:
        scenario = replace(scenario, seed=args.seed)
    window = simulate(model, scenario)
    write_measurements_csv(window, args.out)
    print(f"wrote {window.n_samples} samples x {len(window.channel_names)} channels to {args.out}")
    return EXIT_OK


def _localize(config: PipelineConfig) -> int:
    result = run_pipeline(config)
    out = config.resolved_output_dir()
    export_report(result, out)
    loc = result.localization
    if result.fo_detected:
        print(f"source {loc.device} at {loc.frequency:.4f} Hz (zeta {loc.score:.4g}); report in {out}")
    else:
        print(f"no FO detected; report in {out}")
    return result.exit_code


def _cmd_locate(args) -> int:
    config = PipelineConfig(model_path=args.model, measurements_path=args.measurements, **_overrides(args))
    return _localize(config)


def _cmd_pipeline(args) -> int:
    config = load_config(args.config)
    return _localize(replace(config, **_overrides(args)))


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    handler = {"simulate": _cmd_simulate, "locate": _cmd_locate, "pipeline": _cmd_pipeline}[args.command]
    try:
        return handler(args)
    except PipelineError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except SimulationError as exc:
        where = "" if exc.time is None else f" at t={exc.time:g} s"
        print(f"error: {exc}{where}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (ConfigError, ModelError, ScenarioError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
