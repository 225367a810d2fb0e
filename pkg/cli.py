import os
import sys
from collections import OrderedDict

import numpy as np
from tensorboardX import SummaryWriter
from tqdm import tqdm

from config_manager import RunConfig
from diagnostics import rejects_incompatible, stokes_convergence, stokes_order, stokes_solve
from evolution import fit_decay, random_initial_state, simulate
from fields import gram_min_eigenvalue
from generator import build_pair, dissipation, export_operators, quadratic_form, random_state
from grid import GeometryConfig, build_grid
from metrics import cauchy_ratios, relative_change, tail_statistics
from params import get_param
from plots import emit_plot
from spectral import eigs_near, resolvent_sweep, spectral_abscissa_complement, unrestricted_gain
from utils import ConfigError, LabError
from verifier import Verifier, least_damped
from writer_manager import Writer

EXIT_OK, EXIT_VERIFY_FAILED, EXIT_ERROR = 0, 1, 2


class Job:
    ''' what a pipeline needs: config, writer, file prefix of the grid level, flags '''
    def __init__(self, config: RunConfig, writer: Writer, prefix='', dump_operators=False,
                 verbose=False, summary_writer=None):
        self.config = config
        self.writer = writer
        self.prefix = prefix
        self.dump_operators = dump_operators
        self.verbose = verbose
        self.summary_writer = summary_writer
        self._pair = None

    @property
    def pair(self):
        if self._pair is None:
            config = self.config
            self._pair = build_pair(config.geometry, config.physics, config.amplitude)
        return self._pair

    def name(self, filename):
        return self.prefix + filename

    def plot(self, csv_path, kind):
        if self.config.plot:
            self.writer.register(emit_plot(csv_path, kind))


def level_config(config: RunConfig, level) -> RunConfig:
    content = config.to_dict()
    geometry = config.geometry.refined(level)
    content['geometry'].update(nx=geometry.nx, ny=geometry.ny)
    return RunConfig(content)


def final_time(job: Job):
    T = job.config.evolution['T']
    if T is None:
        T = 8. / abs(abscissa(job)[0])
    return T


def abscissa(job: Job):
    spectrum, config = job.config.spectrum, job.config
    return spectral_abscissa_complement(job.pair, k=spectrum['abscissa_k'],
                                        shifts=spectrum['abscissa_shifts'], tol=spectrum['eig_tol'],
                                        workers=config.workers, dense_cap=config.sweep['dense_cap'],
                                        return_eigenvalues=True)


# ---------------- pipelines ----------------
def run_assemble(job: Job):
    pair = job.pair
    grid = pair.grid
    phi = random_state(pair, np.random.default_rng(job.config.evolution['seed']), complex_valued=True)
    d = dissipation(phi, grid, pair.params)
    q = quadratic_form(pair, phi)
    results = OrderedDict(
        nx=grid.nx, ny=grid.ny, h=[grid.hx, grid.hy],
        full_dimension=pair.layout.size, dimension=pair.dimension,
        nnz_G=int(pair.G.nnz), nnz_K=int(pair.K.nnz),
        gram_min_eigenvalue=gram_min_eigenvalue(pair.gram),
        dissipation_defect=abs(q.real + d) / max(d, 1e-300))
    if job.dump_operators:
        paths = export_operators(pair, job.writer.path(job.name('operators')))
        for path in paths.values():
            job.writer.register(path)
        results['operators'] = sorted(os.path.basename(p) for p in paths.values())
    job.writer.dump(results, job.name('assemble.json'))
    return results


def run_nullspace(job: Job):
    pair = job.pair
    phi0 = pair.null
    beam = pair.grid.beam
    midpoint = float(beam.evaluate(phi0.w1, beam.length / 2)[0])
    results = OrderedDict(
        residual=pair.generator_residual(phi0),
        adjoint_residual=pair.adjoint().generator_residual(phi0),
        beam_midpoint=midpoint,
        beam_midpoint_exact=beam.length**4 / 384,
        bending_energy=float(phi0.w1 @ (beam.stiffness @ phi0.w1)),
        norm=pair.gram.norm(phi0))
    job.writer.dump(phi0.to_dict(), job.name('null_vector.json'))
    job.writer.dump(results, job.name('nullspace.json'))
    return results


def run_spectrum(job: Job):
    spectrum, config = job.config.spectrum, job.config
    rows, dropped = [], 0
    for beta in tqdm(spectrum['shifts'], disable=not job.verbose):
        report = eigs_near(job.pair, 1j * beta, k=spectrum['k'], tol=spectrum['eig_tol'],
                           dense_cap=config.sweep['dense_cap'])
        rows += report.rows()
        dropped += report.dropped
    columns = ['shift_re', 'shift_im', 're_lambda', 'im_lambda', 'residual', 'backward_error']
    job.writer.write_csv(rows, job.name('eigenvalues.csv'), columns=columns)

    value, eigenvalues = abscissa(job)
    rng = np.random.default_rng(config.evolution['seed'])
    gains = [OrderedDict(beta=beta, gain=unrestricted_gain(job.pair, beta, rng))
             for beta in (1e-3, 1e-2, 1e-1, 1.)]
    results = OrderedDict(abscissa=value, least_damped=least_damped(eigenvalues),
                          n_eigenvalues=len(rows), dropped=dropped, unrestricted_gain=gains)
    job.writer.dump(results, job.name('spectrum.json'))
    return results


def run_sweep(job: Job):
    sweep, config = job.config.sweep, job.config
    result = resolvent_sweep(job.pair, sweep['beta_max'], sweep['n_samples'], sweep['extra_betas'],
                             tol=sweep['power_tol'], maxiter=sweep['power_maxiter'],
                             seed=config.evolution['seed'], workers=config.workers,
                             dense_cap=sweep['dense_cap'], verbose=job.verbose,
                             summary_writer=job.summary_writer)
    path = job.writer.write_csv(result.rows(), job.name('sweep.csv'),
                                columns=['beta', 'norm_estimate', 'iterations', 'converged'])
    job.plot(path, 'sweep')
    results = OrderedDict(result.summary())
    results.update(tail_statistics(result.betas, result.estimates, sweep['tail_start']))
    job.writer.dump(results, job.name('sweep.json'))
    return results


def run_simulate(job: Job):
    evolution = job.config.evolution
    pair = job.pair
    T = final_time(job)
    fits, balance, defect = [], 0., 0.
    for i, seed in enumerate(range(evolution['seed'], evolution['seed'] + evolution['n_seeds'])):
        phi = random_initial_state(pair, seed, evolution['smoothing'])
        record = simulate(pair, phi, T, evolution['dt'], verbose=job.verbose,
                          summary_writer=job.summary_writer if i == 0 else None,
                          startup_steps=evolution['startup_steps'])
        path = job.writer.write_csv(record.rows(), job.name(f'trajectory_seed{seed}.csv'),
                                    columns=['t', 'energy', 'dissipation_integral', 'complement_defect'])
        if i == 0:
            job.plot(path, 'energy')
        fits.append(dict(seed=seed, **fit_decay(record, evolution['fit_window']).to_dict()))
        balance = max(balance, float(np.max(np.abs(record.balance_residual()))))
        defect = max(defect, float(np.max(record.complement_defect)))
    results = OrderedDict(T=T, dt=evolution['dt'], decay_fits=fits,
                          balance_residual=balance, complement_defect=defect)
    job.writer.dump(results, job.name('simulate.json'))
    return results


def run_stokes_check(job: Job):
    config = job.config
    diagnostics = config.diagnostics
    rows = stokes_convergence(diagnostics['stokes_levels'], stabilization=config.stokes_stabilization)
    job.writer.write_csv(rows, job.name('stokes_convergence.csv'),
                         columns=['n', 'h', 'error_u', 'error_p', 'residual', 'order_u'])

    grid = build_grid(GeometryConfig(1., 1., diagnostics['stokes_levels'][0],
                                     diagnostics['stokes_levels'][0]))
    rejected = rejects_incompatible(grid, config.stokes_stabilization,
                                    config.tolerances['compatibility'])

    rng = np.random.default_rng(config.evolution['seed'])
    constants = []
    for _ in range(diagnostics['stokes_samples']):
        f = rng.standard_normal((2, grid.n_nodes))
        solution = stokes_solve(f, None, None, grid, stabilization=config.stokes_stabilization)
        constants.append(solution.estimate['constant'])
    errors = [r['error_u'] for r in rows]
    results = OrderedDict(orders=[r['order_u'] for r in rows[1:]], errors=errors,
                          fitted_order=stokes_order(rows),
                          incompatible_rejected=rejected, estimate_constant=max(constants))
    job.writer.dump(results, job.name('stokes_check.json'))
    return results


def run_verify(job: Job):
    checks = Verifier(job.config, verbose=job.verbose).run()
    rows = [c.to_dict() for c in checks]
    job.writer.write_csv(rows, job.name('checks.csv'),
                         columns=['name', 'passed', 'value', 'threshold', 'detail'])
    for check in checks:
        print(f'{"PASS" if check.passed else "FAIL"} {check.name}: {check.value:.6g} '
              f'(threshold {check.threshold:.6g})')
    return OrderedDict(passed=all(c.passed for c in checks),
                       failed=[c.name for c in checks if not c.passed],
                       checks=OrderedDict((c.name, c.value) for c in checks))


PIPELINES = {
    'assemble': run_assemble,
    'nullspace': run_nullspace,
    'spectrum': run_spectrum,
    'sweep': run_sweep,
    'simulate': run_simulate,
    'verify': run_verify,
    'stokes-check': run_stokes_check,
}


def _scalars(results, prefix=''):
    out = {}
    for key, value in results.items():
        if isinstance(value, dict):
            out.update(_scalars(value, f'{prefix}{key}.'))
        elif isinstance(value, (int, float, np.floating)) and not isinstance(value, bool):
            out[prefix + key] = float(value)
    return out


def refinement_summary(level_results):
    ''' relative change and Cauchy ratios of every scalar shared by all levels '''
    scalars = [_scalars(r) for r in level_results]
    keys = sorted(set.intersection(*[set(s) for s in scalars]))
    summary = OrderedDict()
    for key in keys:
        values = [s[key] for s in scalars]
        entry = OrderedDict(values=values, relative_change=relative_change(values[-2], values[-1]))
        if len(values) >= 3:
            entry['cauchy_ratios'] = cauchy_ratios(values)
        summary[key] = entry
    return summary


def run(subcommand, config: RunConfig, refine=1, dump_operators=False, verbose=False,
        tensorboard=False):
    if subcommand not in PIPELINES:
        raise ConfigError(subcommand, msg=f'unknown subcommand {subcommand}')
    writer = Writer(config, subcommand)
    writer.config_dump()
    summary_writer = SummaryWriter(writer.path('tensorboard')) if tensorboard else None
    print(f'---------------- {subcommand} start ----------------')

    status = EXIT_OK
    try:
        if refine == 1:
            results = PIPELINES[subcommand](Job(config, writer, '', dump_operators, verbose,
                                                summary_writer))
            passed = results.get('passed', True)
        else:
            levels = []
            with tqdm(range(refine), disable=not verbose) as pbar:
                for level in pbar:
                    job = Job(level_config(config, level), writer, f'level_{level}/', dump_operators,
                              verbose, summary_writer)
                    levels.append(PIPELINES[subcommand](job))
                    pbar.set_postfix(OrderedDict(level=level, nx=job.config.geometry.nx))
            results = OrderedDict(levels=levels, refinement=refinement_summary(levels))
            passed = all(r.get('passed', True) for r in levels)
        if subcommand == 'verify' and not passed:
            status = EXIT_VERIFY_FAILED
    except LabError as e:
        print(f'{type(e).__name__}: {e}', file=sys.stderr)
        writer.dump({'error': type(e).__name__, 'message': str(e)}, f'error_{writer.index}.json')
        results, status = OrderedDict(error=str(e)), EXIT_ERROR
    finally:
        if summary_writer is not None:
            summary_writer.close()

    if summary_writer is not None:
        for root, _, files in os.walk(writer.path('tensorboard')):
            for name in sorted(files):
                writer.register(os.path.join(root, name))
    manifest = writer.write_manifest(results, status)
    print(f'----------------- {subcommand} end -----------------')
    return status, manifest


def main(known=None):
    try:
        args, config = get_param(known)
    except ConfigError as e:
        print(f'ConfigError: {e}', file=sys.stderr)
        return EXIT_ERROR
    status, _ = run(args.subcommand, config, refine=args.refine,
                    dump_operators=args.dump_operators, verbose=args.verbose,
                    tensorboard=args.tensorboard)
    return status


if __name__ == '__main__':
    sys.exit(main())
