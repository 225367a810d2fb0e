import argparse

from config_manager import cli_overrides, get_config

SUBCOMMANDS = ('assemble', 'nullspace', 'spectrum', 'sweep', 'simulate', 'verify', 'stokes-check')


def get_parser():
    args = argparse.ArgumentParser(
        description='flow-structure generator: assembly, spectra, resolvent sweeps and decay')

    args.add_argument('subcommand', type=str, choices=SUBCOMMANDS)
    args.add_argument('--config', type=str, default='',
                      help='JSON run configuration, missing keys fall back to the embedded default')
    args.add_argument('--out', type=str, default=None, help='output directory')
    args.add_argument('--seed', type=int, default=None)
    args.add_argument('--beta-max', dest='beta_max', type=float, default=None)
    args.add_argument('--refine', type=int, default=1,
                      help='run the job on this many nested grids (nx, ny doubled each level)')
    args.add_argument('--workers', type=int, default=None)

    args.add_argument('--dump-operators', dest='dump_operators', action='store_true',
                      help='assemble: write G, K and P in Matrix Market format')
    args.add_argument('--plot', action='store_true', help='emit SVG plots')
    args.add_argument('--tensorboard', action='store_true')
    args.add_argument('--verbose', action='store_true')
    return args


def get_param(known=None):
    args = get_parser().parse_args(known)
    if args.refine < 1:
        raise SystemExit('--refine must be >= 1')
    config = get_config(args.config, cli_overrides(args))
    return args, config


if __name__ == '__main__':
    print(get_param())
