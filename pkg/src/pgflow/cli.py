"""Command line entry point: ``pgflow simulate|balayage <config>`` and ``pgflow verify``.

Exit codes: 0 when every check passes, 1 when a check fails, 2 for usage or
configuration errors. ``PGFLOW_OUT`` overrides the output directory.
"""
from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

from .errors import ConfigError
from .formats import load_config
from .runner import output_dir, run_balayage, run_simulate
from .verify import TOLERANCES, run_verify

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="pgflow", description="Hele-Shaw rational dynamics and partial balayage runs.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name, helptext in (("simulate", "integrate a trajectory"), ("balayage", "run a grid balayage")):
        sp = sub.add_parser(name, help=helptext)
        sp.add_argument("config", type=Path, help="TOML run configuration")
        sp.add_argument("--out", type=Path, default=None, help="output directory (default: ./pgflow-out/<config name>)")
    vp = sub.add_parser("verify", help="run the acceptance checks")
    vp.add_argument("--filter", default=None, help="only criteria whose name contains this text")
    vp.add_argument("--tolerance", action="append", default=[], metavar="NAME=VALUE",
                    help="override a tolerance (repeatable)")
    vp.add_argument("--out", type=Path, default=None, help="write report.json here")
    return p


def _print_report(report) -> None:
    for c in report.checks:
        status = "PASS" if c.passed else "FAIL"
        extra = f"  ({c.note})" if c.note else ""
        print(f"{status}  {c.name}: {c.actual}{extra}")
    for e in report.errors:
        print(f"ERROR {e}")
    print("overall:", "PASS" if report.passed else "FAIL")


def _overrides(items: list[str]) -> dict:
    out = {}
    for item in items:
        name, sep, value = item.partition("=")
        if not sep or name not in TOLERANCES:
            raise ConfigError(f"bad tolerance override {item!r}; known names: {', '.join(TOLERANCES)}")
        try:
            out[name] = float(value)
        except ValueError:
            raise ConfigError(f"tolerance {name} needs a number") from None
    return out


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "verify":
            report = run_verify(args.filter, _overrides(args.tolerance))
            out = output_dir(args.out) if (args.out or "PGFLOW_OUT" in os.environ) else None
            if out is not None:
                out.mkdir(parents=True, exist_ok=True)
                report.write(out / "report.json")
        else:
            cfg = load_config(args.config)
            if cfg.mode != args.command:
                raise ConfigError(f"config mode is {cfg.mode!r}, not {args.command!r}")
            out = output_dir(args.out or Path("pgflow-out") / args.config.stem)
            runner = run_simulate if args.command == "simulate" else run_balayage
            report = runner(cfg, out)
            print(f"outputs in {out}")
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    _print_report(report)
    return EXIT_OK if report.passed else EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
