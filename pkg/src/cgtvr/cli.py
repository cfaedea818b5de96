"""Command-line entry point: ``cgtvr run|check-bounds|plot``.

Exit codes: 0 success, 1 configuration error, 2 runtime error (including a
failed bound check).
"""

import argparse
import logging
import sys
from pathlib import Path

from .errors import ConfigurationError

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2

log = logging.getLogger("cgtvr")


def _cmd_run(args):
    from .experiment import load_experiment, run_experiment

    cfg = load_experiment(args.config)
    summary = run_experiment(cfg, write_plots=not args.no_plots)
    n_div = sum(c["diverged"] for c in summary["cells"])
    print(f"{len(summary['cells'])} runs written to {cfg.output_dir}"
          + (f" ({n_div} diverged)" if n_div else ""))
    return EXIT_OK


def _cmd_check_bounds(args):
    from .diagnostics import report_status
    from .experiment import check_bounds, load_experiment, write_report

    cfg = load_experiment(args.config)
    reports = check_bounds(cfg)
    cfg.output_dir.mkdir(parents=True, exist_ok=True)
    out = Path(args.output) if args.output else cfg.output_dir / "bounds.json"
    write_report(reports, out)
    for r in reports:
        print(f"{r['status']:>13}  {r['check']}  observed={r['observed']!r} bound={r['bound']!r}")
    status = report_status(reports)
    print(f"overall: {status}  ({out})")
    return EXIT_OK if status != "fail" else EXIT_RUNTIME


def _cmd_plot(args):
    from .plotting import render_svg

    missing = [p for p in args.csv if not Path(p).is_file()]
    if missing:
        raise ConfigurationError(f"no such file: {missing[0]}", key="csv")
    out = render_svg(args.csv, args.metric, args.output)
    if out is None:
        return EXIT_RUNTIME
    print(out)
    return EXIT_OK


def build_parser():
    p = argparse.ArgumentParser(prog="cgtvr", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run every algorithm x topology x seed cell of a config")
    r.add_argument("config")
    r.add_argument("--no-plots", action="store_true", help="skip SVG rendering")
    r.set_defaults(func=_cmd_run)

    c = sub.add_parser("check-bounds", help="run the diagnostics suite on a config")
    c.add_argument("config")
    c.add_argument("-o", "--output", help="report path (default: <outputDir>/bounds.json)")
    c.set_defaults(func=_cmd_check_bounds)

    q = sub.add_parser("plot", help="render metric CSVs to one SVG")
    q.add_argument("csv", nargs="+")
    q.add_argument("--metric", required=True)
    q.add_argument("-o", "--output", required=True)
    q.set_defaults(func=_cmd_plot)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigurationError as exc:
        key = f" [{exc.key}]" if getattr(exc, "key", None) else ""
        print(f"config error{key}: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
