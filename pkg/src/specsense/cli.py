"""Command-line entry point.

    specsense <command> [--config PATH] [--preset NAME] [--seed N] [--out DIR]
                        [--threads K] [--set key.path=value ...]

Exit status: 0 on success, 2 for configuration errors, 3 for runtime errors.
"""

from __future__ import annotations

import argparse
import sys

from .config import COMMANDS, PRESETS, ConfigError, build_config, load_config

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="specsense", description="Spectrum-sensing experiments.")
    ap.add_argument("command", choices=COMMANDS)
    ap.add_argument("--config", help="YAML experiment config")
    ap.add_argument("--preset", action="append", default=[], choices=sorted(PRESETS), help="overlay a named preset")
    ap.add_argument("--seed", type=int, help="master seed (overrides the config)")
    ap.add_argument("--out", help="output directory (overrides the config)")
    ap.add_argument("--threads", type=int, default=1, help="worker threads for independent jobs")
    ap.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override a parameter leaf")
    ap.add_argument("--dump-config", action="store_true", help="print the effective config and exit")
    return ap


def resolve_config(args):
    if args.config:
        cfg = load_config(args.config, args.command)
        if args.preset:
            raise ConfigError("--preset only applies without --config; list presets in the file instead")
    else:
        cfg = build_config({"preset": args.preset}, args.command)
    if args.seed is not None:
        cfg.seed = args.seed
    if args.out:
        cfg.output_dir = args.out
    for item in args.set:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        cfg.set(key, value)
    return cfg


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = resolve_config(args)
    except (ConfigError, OSError) as exc:
        print(f"specsense: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if args.dump_config:
        sys.stdout.write(cfg.to_yaml())
        return EXIT_OK
    from .experiments import run_experiment

    try:
        manifest = run_experiment(cfg, threads=args.threads)
    except Exception as exc:  # noqa: BLE001 - one-line cause, nonzero status
        print(f"specsense: {cfg.command} failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    print(f"{cfg.command}: wrote {len(manifest.outputs)} file(s) to {cfg.output_dir} in {manifest.duration_s:.2f}s")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
