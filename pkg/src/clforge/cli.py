"""Command-line entry point: ``clforge run | verify | bounds | plot``."""

from __future__ import annotations

import argparse
import logging
import sys
import time

from clforge import checks, config, harness, mnist
from clforge.errors import ClforgeError


def _cmd_run(args):
    cfg = config.load(args.config)
    result = harness.run(cfg, args.out, args.jobs)
    print(f"wrote {len(result['results'])} rows to {result['out_dir']}")
    return 0


def _cmd_verify(args):
    if args.full:
        try:
            images, labels = mnist.resolve(cache_dir=harness.MNIST_CACHE)
        except (FileNotFoundError, ImportError):
            images = labels = None
            print("MNIST files unavailable: skipping the MNIST check")
        suite = checks.full_suite(images, labels)
    else:
        suite = checks.quick_suite()
    failed = 0
    for fn in suite:
        start = time.perf_counter()
        result = fn()
        print(f"{result.line()} ({time.perf_counter() - start:.1f}s)", flush=True)
        failed += not result.passed
    print(f"{len(suite) - failed}/{len(suite)} checks passed")
    return 1 if failed else 0


def _cmd_bounds(args):
    harness.write_bounds(config.load(args.config), sys.stdout)
    return 0


def _cmd_plot(args):
    cfg = config.load(args.recipe)
    paths = harness.plot(args.inp, cfg.base["plot"], args.out, cfg.name)
    for p in paths:
        print(p)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="clforge", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run a config (or a packaged recipe name)")
    p.add_argument("--config", required=True)
    p.add_argument("--out", default=None)
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=_cmd_run)

    p = sub.add_parser("verify", help="run numerical self-checks")
    p.add_argument("--full", action="store_true", help="acceptance-scale checks (slow)")
    p.set_defaults(func=_cmd_verify)

    p = sub.add_parser("bounds", help="print bound values for every sweep cell as CSV")
    p.add_argument("--config", required=True)
    p.set_defaults(func=_cmd_bounds)

    p = sub.add_parser("plot", help="render SVG curves from results.csv")
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--recipe", required=True, help="recipe name (fig1 ... mnist) or config path")
    p.add_argument("--out", default=None)
    p.set_defaults(func=_cmd_plot)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ClforgeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
