import argparse
import copy
import json
import os
from glob import glob

from generator import PhysicalParams
from grid import GeometryConfig
from utils import ConfigError, GeometryError

DEFAULT_CONFIG = {
    'geometry': {'Lx': 1.0, 'Ly': 1.0, 'nx': 64, 'ny': 64},
    'physics': {'eta': 1.0, 'lambda': 0.5, 'nu': 1.0},
    'ambient': {'amplitude': 0.5},
    'stabilization': {'pressure': 0.05, 'stokes': 12.0},
    'sweep': {'beta_max': 50.0, 'n_samples': 101, 'extra_betas': [0.0, 0.5, 1.0, 2.0],
              'power_tol': 1e-4, 'power_maxiter': 200, 'dense_cap': 200000, 'tail_start': 25.0},
    'spectrum': {'shifts': [0.5, 1.0, 2.0, 5.0, 10.0, 25.0], 'k': 10,
                 'abscissa_shifts': [0.0, 0.5, 1.0, 2.0, 5.0, 10.0, 25.0, 50.0],
                 'abscissa_k': 6, 'eig_tol': 1e-8},
    'evolution': {'T': None, 'dt': 0.1, 'seed': 0, 'n_seeds': 5, 'fit_window': 0.5, 'smoothing': 0,
                  'startup_steps': 10, 'verify_dts': [0.01, 0.1], 'balance_T': 1.0,
                  'balance_dts': [0.08, 0.04, 0.02, 0.01], 'balance_smoothing': 2},
    'diagnostics': {'med_betas': [0.0, 1.0, 10.0], 'med_seeds': 5, 'n_random': 100,
                    'chueshov_states': 50, 'pressure_pairs': 10,
                    'stokes_levels': [8, 16, 32, 64], 'stokes_samples': 20},
    'tolerances': {'resolvent': 1e-8, 'null': 1e-10, 'compatibility': 1e-8,
                   'dissipation': 1e-11, 'complement': 1e-12},
    'output': {'dir': './output', 'plot': False},
    'workers': 1,
}

# dotted key -> (types, predicate, description)
_number = (int, float)
SCHEMA = {
    'geometry.Lx': (_number, lambda v: v > 0, 'length of the elastic edge, > 0'),
    'geometry.Ly': (_number, lambda v: v > 0, 'depth of the flow domain, > 0'),
    'geometry.nx': (int, lambda v: v >= 4, 'cells along x, >= 4'),
    'geometry.ny': (int, lambda v: v >= 4, 'cells along y, >= 4'),
    'physics.eta': (_number, lambda v: v > 0, 'drag coefficient, > 0'),
    'physics.lambda': (_number, lambda v: v >= 0, 'Lame coefficient, >= 0'),
    'physics.nu': (_number, lambda v: v > 0, 'shear coefficient, > 0'),
    'ambient.amplitude': (_number, lambda v: abs(v) < float('inf'), 'stream function amplitude'),
    'stabilization.pressure': (_number, lambda v: v >= 0, 'pressure stabilization tau0, >= 0'),
    'stabilization.stokes': (_number, lambda v: v > 0, 'Stokes PSPG constant C in h^2/(C nu), > 0'),
    'sweep.beta_max': (_number, lambda v: v > 0, 'largest sampled frequency, > 0'),
    'sweep.n_samples': (int, lambda v: v >= 3, 'uniform samples on [0, beta_max], >= 3'),
    'sweep.extra_betas': (list, lambda v: all(isinstance(b, _number) and b >= 0 for b in v),
                          'mandatory extra frequencies'),
    'sweep.power_tol': (_number, lambda v: 0 < v < 1, 'power iteration relative tolerance'),
    'sweep.power_maxiter': (int, lambda v: v >= 2, 'power iteration cap'),
    'sweep.dense_cap': (int, lambda v: v > 0, 'largest system factorized directly'),
    'sweep.tail_start': (_number, lambda v: v >= 0, 'start of the plateau tail'),
    'spectrum.shifts': (list, lambda v: all(isinstance(b, _number) for b in v), 'imaginary shifts'),
    'spectrum.k': (int, lambda v: v >= 1, 'eigenvalues per shift'),
    'spectrum.abscissa_shifts': (list, lambda v: all(isinstance(b, _number) for b in v),
                                 'shifts for the abscissa search'),
    'spectrum.abscissa_k': (int, lambda v: v >= 1, 'eigenvalues per abscissa shift'),
    'spectrum.eig_tol': (_number, lambda v: v > 0, 'eigen backward error tolerance'),
    'evolution.T': ((int, float, type(None)), lambda v: v is None or v > 0,
                    'final time, null = 8 / |abscissa|'),
    'evolution.dt': (_number, lambda v: v > 0, 'time step, > 0'),
    'evolution.seed': (int, lambda v: v >= 0, 'first random seed'),
    'evolution.n_seeds': (int, lambda v: v >= 1, 'number of trajectories'),
    'evolution.fit_window': (_number, lambda v: 0 < v <= 1, 'tail fraction used by the decay fit'),
    'evolution.smoothing': (int, lambda v: v >= 0, 'resolvent smoothing passes of random initial data'),
    'evolution.startup_steps': (int, lambda v: v >= 0,
                                'implicit Euler half step pairs before Crank-Nicolson'),
    'evolution.verify_dts': (list, lambda v: all(isinstance(b, _number) and b > 0 for b in v),
                             'time steps of the decay check'),
    'evolution.balance_T': (_number, lambda v: v > 0, 'final time of the energy balance study'),
    'evolution.balance_dts': (list, lambda v: len(v) >= 2 and all(b > 0 for b in v),
                              'halving time steps of the energy balance study'),
    'evolution.balance_smoothing': (int, lambda v: v >= 0,
                                    'smoothing passes of the energy balance initial data'),
    'diagnostics.med_betas': (list, lambda v: len(v) >= 1, 'frequencies of the med ratio'),
    'diagnostics.med_seeds': (int, lambda v: v >= 1, 'seeds of the med ratio'),
    'diagnostics.n_random': (int, lambda v: v >= 1, 'random states of identity checks'),
    'diagnostics.chueshov_states': (int, lambda v: v >= 2, 'random states of the Neumann check'),
    'diagnostics.pressure_pairs': (int, lambda v: v >= 1, 'resolvent pairs of the pressure identity'),
    'diagnostics.stokes_levels': (list, lambda v: len(v) >= 2 and all(isinstance(n, int) and n >= 4
                                                                       for n in v),
                                  'cells per side of the Stokes study'),
    'diagnostics.stokes_samples': (int, lambda v: v >= 1, 'random data sets of the Stokes estimate'),
    'tolerances.resolvent': (_number, lambda v: v > 0, 'resolvent residual'),
    'tolerances.null': (_number, lambda v: v > 0, 'null vector residual'),
    'tolerances.compatibility': (_number, lambda v: v > 0, 'compatibility conditions'),
    'tolerances.dissipation': (_number, lambda v: v > 0, 'dissipation identity'),
    'tolerances.complement': (_number, lambda v: v > 0, 'complement functional identity'),
    'output.dir': (str, lambda v: len(v) > 0, 'output directory'),
    'output.plot': (bool, lambda v: True, 'emit SVG plots'),
    'workers': (int, lambda v: v >= 1, 'threads for sweeps and eigen searches'),
}


class RunConfig:
    def __init__(self, config: dict):
        validate_config(config)
        self.content = copy.deepcopy(config)
        self.geometry = GeometryConfig.from_dict(config['geometry'])
        physics = dict(config['physics'], stabilization=config['stabilization']['pressure'])
        self.physics = PhysicalParams.from_dict(physics)
        self.amplitude = float(config['ambient']['amplitude'])
        self.sweep = config['sweep']
        self.spectrum = config['spectrum']
        self.evolution = config['evolution']
        self.diagnostics = config['diagnostics']
        self.tolerances = config['tolerances']
        self.stokes_stabilization = config['stabilization']['stokes']
        self.output_dir = config['output']['dir']
        self.plot = config['output']['plot']
        self.workers = config['workers']

    def to_dict(self):
        return copy.deepcopy(self.content)

    def __eq__(self, other):
        return isinstance(other, RunConfig) and self.content == other.content

    def __repr__(self):
        return f'RunConfig({json.dumps(self.content, sort_keys=True)})'


def _get(config, dotted):
    node = config
    for key in dotted.split('.'):
        if not isinstance(node, dict) or key not in node:
            raise ConfigError(dotted, msg=f'missing configuration key: {dotted}')
        node = node[key]
    return node


def _flatten(config, prefix=''):
    keys = []
    for key, value in config.items():
        name = f'{prefix}{key}'
        if isinstance(value, dict):
            keys += _flatten(value, name + '.')
        else:
            keys.append(name)
    return keys


def validate_config(config: dict):
    for key in _flatten(config):
        if key not in SCHEMA:
            raise ConfigError(key, msg=f'unknown configuration key: {key}')
    for key, (types, predicate, description) in SCHEMA.items():
        value = _get(config, key)
        if isinstance(value, bool) and types is not bool:
            raise ConfigError(key, value, msg=f'{key} must not be a boolean ({description})')
        if not isinstance(value, types):
            raise ConfigError(key, value, msg=f'{key} has type {type(value).__name__} ({description})')
        try:
            valid = predicate(value)
        except TypeError:
            valid = False
        if not valid:
            raise ConfigError(key, value, msg=f'{key} = {value!r} is out of range ({description})')
    try:
        GeometryConfig.from_dict(config['geometry'])
    except GeometryError as e:
        raise ConfigError(msg=str(e))
    return config


def save_config(path, name, config):
    if isinstance(config, RunConfig):
        config = config.to_dict()
    jsonpath = os.path.join(path, name)
    print(f'Save config as {name}')
    with open(jsonpath, 'w') as f:
        json.dump(config, f, sort_keys=True, indent=4)
    return jsonpath


def load_config(path, name=''):
    jsonpath = os.path.join(path, name) if name else path
    if not os.path.exists(jsonpath):
        raise ConfigError(jsonpath, msg=f"{jsonpath} config doesn't exist")
    with open(jsonpath, 'r') as f:
        text = f.read()
    try:
        return json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(jsonpath, e.lineno, e.colno,
                          msg=f'{jsonpath}:{e.lineno}:{e.colno}: {e.msg}')


def manage_version(path, name):
    ''' next free name_v_N.json in path '''
    base = os.path.splitext(name)[0].split('_v_')[0]
    configs = glob(os.path.join(path, f'{base}_v_*.json'))
    versions = [int(os.path.splitext(c)[0].split('_v_')[-1]) for c in configs]
    return f'{base}_v_{max(versions) + 1 if versions else 0}.json'


def over_write_config(loaded_config, config):
    ''' overwrite config to loaded_config, section by section '''
    for key in config.keys():
        if isinstance(config[key], dict) and isinstance(loaded_config.get(key), dict):
            loaded_config[key] = over_write_config(loaded_config[key], config[key])
        else:
            loaded_config[key] = config[key]
    return loaded_config


def cli_overrides(args: argparse.Namespace):
    overrides = {}
    if getattr(args, 'out', None):
        overrides['output'] = {'dir': args.out}
    if getattr(args, 'seed', None) is not None:
        overrides['evolution'] = {'seed': args.seed}
    if getattr(args, 'beta_max', None) is not None:
        overrides['sweep'] = {'beta_max': args.beta_max}
    if getattr(args, 'workers', None) is not None:
        overrides['workers'] = args.workers
    if getattr(args, 'plot', False):
        overrides.setdefault('output', {})['plot'] = True
    return overrides


def get_config(path='', overrides=None, verbose=True) -> RunConfig:
    '''
    embedded default <- config file (if given) <- command line overrides
    '''
    if verbose:
        print('---------------- config manager start ----------------')
    config = copy.deepcopy(DEFAULT_CONFIG)
    if path:
        config = over_write_config(config, load_config(path))
        if verbose:
            print(f'Loaded config: {path}')
    if overrides:
        config = over_write_config(config, copy.deepcopy(overrides))
    config = RunConfig(config)
    if verbose:
        print('----------------- config manager end -----------------')
    return config
