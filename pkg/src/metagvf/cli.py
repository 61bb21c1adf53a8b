"""Command line: ``metagvf run | plot | verify | presets``."""
import argparse
import logging
import sys

from .core import ConfigurationError
from .harness import default_out_dir, load_config, preset_names, run_experiment


def _run(args):
    try:
        cfg = load_config(args.config)
        cfg = cfg.scaled(paper_scale=args.paper_scale, num_seeds=args.seeds,
                         total_steps=args.steps)
        if args.workers is not None:
            cfg.workers = args.workers
    except ConfigurationError as e:
        print(f"invalid config: {e}", file=sys.stderr)
        return 2
    agg = run_experiment(cfg, args.out)
    print(f"{cfg.name}: {len(agg['seeds'])} seeds, "
          f"mean eval reward {agg['mean_eval_reward']:.4f} ± {agg['mean_eval_reward_sem']:.4f}, "
          f"cumulative eval reward {agg['cumulative_eval_reward']:.2f} "
          f"± {agg['cumulative_eval_reward_sem']:.2f}, "
          f"success rate {agg['success_rate']:.2f} ({agg['runtime_s']:.1f}s)")
    print(f"records in {agg['out_dir']}")
    if agg["failed_seeds"]:
        print(f"aborted seeds: {agg['failed_seeds']}", file=sys.stderr)
        return 1
    return 0


def _plot(args):
    from .plots import emit_plots, write_csv
    written = emit_plots(args.records, args.out)
    for p in written:
        print(p)
    if written:
        print(write_csv(args.records))
    return 0


def _verify(args):
    from .checks import run_all
    failed = 0
    for name, value, tol, passed in run_all():
        print(f"{'PASS' if passed else 'FAIL'}  {name}: {value} (want {tol})")
        failed += not passed
    return 1 if failed else 0


def _presets(args):
    for name in preset_names():
        print(name)
    return 0


def build_parser():
    p = argparse.ArgumentParser(prog="metagvf", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true", help="log per-seed progress")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run a seed sweep from a config file or preset name")
    r.add_argument("config", help="YAML config path or preset name (see `presets`)")
    r.add_argument("--seeds", type=int, help="use seeds 0..N-1")
    r.add_argument("--steps", type=int, help="override total_steps")
    r.add_argument("--paper-scale", action="store_true",
                   help="apply the config's paper_scale overrides")
    r.add_argument("--out", help="output root (default $METAGVF_OUT or ./runs)")
    r.add_argument("--workers", type=int, help="parallel seed processes")
    r.set_defaults(func=_run)

    pl = sub.add_parser("plot", help="render SVG figures and a CSV from run records")
    pl.add_argument("records", help="a run directory or a root holding several")
    pl.add_argument("--out", help="figure directory (default <records>/figures)")
    pl.set_defaults(func=_plot)

    v = sub.add_parser("verify", help="run the gradient and fixed-point oracle checks")
    v.set_defaults(func=_verify)

    ps = sub.add_parser("presets", help="list bundled presets")
    ps.set_defaults(func=_presets)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "out", None) is None and args.command == "run":
        args.out = str(default_out_dir())
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
