import json
import math
from collections import OrderedDict

import numpy as np
from tqdm import tqdm

from config_manager import RunConfig
from diagnostics import (case1_decomposition, chueshov_compatibility, chueshov_variable,
                         med_report, pressure_equation_check, rejects_incompatible,
                         stokes_convergence, stokes_order)
from evolution import (composition_residual, energy_balance_residual, fit_decay,
                       random_initial_state, simulate)
from fields import complement_functional, energy_inner_product, gram_min_eigenvalue
from generator import (OperatorPair, build_pair, dissipation, modal_state, quadratic_form,
                       random_state)
from grid import GeometryConfig, build_grid
from metrics import (cauchy_ratios, convergence_orders, interior_maximum, relative_change,
                     tail_statistics, within_factor)
from spectral import (eigs_near, resolvent_identity_residual, resolvent_sweep,
                      solve_resolvent, spectral_abscissa_complement)
from utils import CompatibilityError, LabError, to_jsonable

HUANG_PRUSS_FACTOR = 10.


class Check:
    def __init__(self, name, passed, value, threshold, detail=None):
        self.name = name
        self.passed = bool(passed)
        self.value = float(value) if value is not None else float('nan')
        self.threshold = float(threshold) if threshold is not None else float('nan')
        self.detail = detail or {}

    def to_dict(self):
        return OrderedDict(name=self.name, passed=self.passed, value=self.value,
                           threshold=self.threshold,
                           detail=json.dumps(to_jsonable(self.detail), sort_keys=True))


def coarsened(geometry: GeometryConfig, level=1):
    return GeometryConfig(geometry.Lx, geometry.Ly,
                          max(4, geometry.nx // 2**level), max(4, geometry.ny // 2**level))


def least_damped(eigenvalues, count=3, tol=1e-6):
    ''' distinct eigenvalues with Im >= 0, largest real part first '''
    values = np.asarray(eigenvalues)
    values = values[values.imag >= -tol]
    distinct = []
    for lam in values[np.argsort(-values.real, kind='stable')]:
        if all(abs(lam - other) > tol * max(1., abs(lam)) for other in distinct):
            distinct.append(lam)
    return np.array(distinct[:count])


class Verifier:
    '''
    Property checks of the assembled generator on the configured grid
    (fine) and its coarsening by two (coarse).
    '''
    def __init__(self, config: RunConfig, verbose=False):
        self.config = config
        self.verbose = verbose
        self.fine_geometry = config.geometry
        self.coarse_geometry = coarsened(config.geometry)
        self._pairs = {}
        self._abscissa = {}
        self._sweeps = {}

    def pair(self, geometry, amplitude=None) -> OperatorPair:
        amplitude = self.config.amplitude if amplitude is None else amplitude
        key = (geometry.nx, geometry.ny, amplitude)
        if key not in self._pairs:
            self._pairs[key] = build_pair(geometry, self.config.physics, amplitude)
        return self._pairs[key]

    def abscissa(self, geometry):
        key = (geometry.nx, geometry.ny)
        if key not in self._abscissa:
            spectrum = self.config.spectrum
            self._abscissa[key] = spectral_abscissa_complement(
                self.pair(geometry), k=spectrum['abscissa_k'], shifts=spectrum['abscissa_shifts'],
                tol=spectrum['eig_tol'], workers=self.config.workers,
                dense_cap=self.config.sweep['dense_cap'], return_eigenvalues=True)
        return self._abscissa[key]

    def sweep(self, geometry):
        key = (geometry.nx, geometry.ny)
        if key not in self._sweeps:
            sweep = self.config.sweep
            self._sweeps[key] = resolvent_sweep(
                self.pair(geometry), sweep['beta_max'], sweep['n_samples'], sweep['extra_betas'],
                tol=sweep['power_tol'], maxiter=sweep['power_maxiter'],
                seed=self.config.evolution['seed'], workers=self.config.workers,
                dense_cap=sweep['dense_cap'])
        return self._sweeps[key]

    def resolvent_pair(self, pair, beta, rng):
        ''' (phi, phi*) with (i beta - A) phi = phi* on the complement, phi* smooth '''
        phi_star = modal_state(pair, rng, complex_valued=True)
        phi = solve_resolvent(pair, beta, phi_star, tol=self.config.tolerances['resolvent'])
        return phi, phi_star

    # ---------------- generator identities ----------------
    def check_dissipation(self):
        tol = self.config.tolerances['dissipation']
        rng = np.random.default_rng(self.config.evolution['seed'])
        worst = 0.
        for amplitude in (0., 0.5, 2.):
            pair = self.pair(self.coarse_geometry, amplitude)
            for _ in range(self.config.diagnostics['n_random']):
                phi = random_state(pair, rng, complex_valued=True, complement=False)
                d = dissipation(phi, pair.grid, pair.params)
                q = quadratic_form(pair, phi)
                scale = abs(energy_inner_product(phi, phi, pair.gram)) + d
                worst = max(worst, abs(q.real + d) / scale)
        return Check('dissipation_identity', worst <= tol, worst, tol,
                     {'amplitudes': [0., 0.5, 2.], 'grid': self.coarse_geometry.to_dict()})

    def check_null_space(self):
        tol = self.config.tolerances['null']
        pair = self.pair(self.fine_geometry)
        phi0 = pair.null
        forward = pair.generator_residual(phi0)
        adjoint = pair.adjoint().generator_residual(phi0)
        value = max(forward, adjoint)
        return Check('null_space', value <= tol, value, tol,
                     {'forward': forward, 'adjoint': adjoint})

    def check_beam_midpoint(self):
        pair = self.pair(self.fine_geometry)
        beam = pair.grid.beam
        midpoint = float(beam.evaluate(pair.null.w1, beam.length / 2)[0])
        exact = beam.length**4 / 384
        error = abs(midpoint - exact) / exact
        return Check('beam_midpoint', error <= 1e-3, error, 1e-3,
                     {'midpoint': midpoint, 'exact': exact, 'h': beam.h})

    def check_complement(self):
        tol = self.config.tolerances['complement']
        pair = self.pair(self.fine_geometry)
        phi0 = pair.null
        norm0 = pair.gram.norm(phi0)
        rng = np.random.default_rng(self.config.evolution['seed'] + 1)
        worst = 0.
        for _ in range(self.config.diagnostics['n_random']):
            phi = random_state(pair, rng, complex_valued=True, complement=False)
            gap = abs(energy_inner_product(phi, phi0, pair.gram) - complement_functional(phi, pair.grid))
            worst = max(worst, gap / (pair.gram.norm(phi) * norm0))
        return Check('complement_characterization', worst <= tol, worst, tol)

    def check_gram(self):
        values = gram_min_eigenvalue(self.pair(self.fine_geometry).gram)
        return Check('gram_positive', values['min'] > 0, values['min'], 0., values)

    # ---------------- spectrum ----------------
    def check_imaginary_axis(self):
        spectrum = self.config.spectrum
        pair = self.pair(self.fine_geometry)
        worst, found = -float('inf'), 0
        for beta in spectrum['shifts']:
            report = eigs_near(pair, 1j * beta, k=spectrum['k'], tol=spectrum['eig_tol'],
                               deflate=True, dense_cap=self.config.sweep['dense_cap'])
            found += len(report.eigenvalues)
            if len(report.eigenvalues):
                worst = max(worst, float(np.max(report.eigenvalues.real)))
        passed = found > 0 and worst < -1e-8
        return Check('imaginary_axis', passed, worst, -1e-8, {'eigenvalues': found})

    def check_abscissa(self):
        coarse, _ = self.abscissa(self.coarse_geometry)
        fine, _ = self.abscissa(self.fine_geometry)
        passed = coarse < 0 and fine < 0 and within_factor(coarse, fine, 2.)
        return Check('spectral_abscissa', passed, fine, 0.,
                     {'coarse': coarse, 'fine': fine})

    def check_refinement(self):
        levels = [coarsened(self.fine_geometry, 2), self.coarse_geometry, self.fine_geometry]
        values = [least_damped(self.abscissa(g)[1]) for g in levels]
        count = min(len(v) for v in values)
        if count == 0 or len({(g.nx, g.ny) for g in levels}) < 3:
            return Check('refinement_consistency', False, None, 0.5, {'reason': 'too few levels'})
        ratios = cauchy_ratios([v[:count] for v in values])
        value = float(np.max(ratios))
        return Check('refinement_consistency', value < 0.5, value, 0.5,
                     {'eigenvalues': [v[:count] for v in values]})

    # ---------------- resolvent ----------------
    def check_resolvent_bound(self):
        tail_start = self.config.sweep['tail_start']
        detail = {}
        passed = True
        for label, geometry in (('coarse', self.coarse_geometry), ('fine', self.fine_geometry)):
            result = self.sweep(geometry)
            tail = tail_statistics(result.betas, result.estimates, tail_start)
            interior = interior_maximum(result.betas, result.estimates)
            passed &= (not result.partial) and math.isfinite(result.sup_estimate) \
                and interior and tail['tail_ratio'] <= 1.2
            detail[label] = dict(result.summary(), interior=interior, **tail)
        change = relative_change(detail['coarse']['sup_estimate'], detail['fine']['sup_estimate'])
        passed &= change < 0.5
        return Check('resolvent_bound', passed, detail['fine']['sup_estimate'], float('inf'),
                     dict(detail, sup_change=change))

    def check_resolvent_identity(self):
        pair = self.pair(self.coarse_geometry)
        residual = resolvent_identity_residual(pair, 0.5, 2., np.random.default_rng(0))
        return Check('resolvent_identity', residual <= 1e-6, residual, 1e-6)

    def check_huang_pruss(self):
        '''
        1 / sup |R(i beta)| against ten times the decay rate; the distance of the
        sampled axis to the spectrum is reported as the tight bound
        '''
        abscissa, _ = self.abscissa(self.fine_geometry)
        result = self.sweep(self.fine_geometry)
        bound = HUANG_PRUSS_FACTOR * abs(abscissa)
        tight = math.hypot(abscissa, result.spacing / 2) * 1.01
        value = 1. / result.sup_estimate
        return Check('resolvent_abscissa_consistency', value <= bound, value, bound,
                     {'abscissa': abscissa, 'sup_estimate': result.sup_estimate,
                      'tight_bound': tight, 'tight_holds': value <= tight})

    # ---------------- evolution ----------------
    def final_time(self):
        T = self.config.evolution['T']
        if T is None:
            abscissa, _ = self.abscissa(self.fine_geometry)
            T = 8. / abs(abscissa)
        return T

    def check_decay(self):
        evolution = self.config.evolution
        pair = self.pair(self.fine_geometry)
        abscissa, _ = self.abscissa(self.fine_geometry)
        T = self.final_time()
        runs, passed = [], True
        for dt in evolution['verify_dts']:
            for seed in range(evolution['seed'], evolution['seed'] + evolution['n_seeds']):
                phi = random_initial_state(pair, seed, evolution['smoothing'])
                record = simulate(pair, phi, T, dt, startup_steps=evolution['startup_steps'])
                e = record.energies
                monotone = bool(np.all(e[1:] <= e[:-1] * (1 + 1e-12)))
                fit = fit_decay(record, evolution['fit_window'])
                defect = float(np.max(record.complement_defect))
                rate_error = abs(fit.delta - abs(abscissa)) / abs(abscissa)
                ok = monotone and fit.delta > 0 and fit.r_squared >= 0.99 \
                    and rate_error <= 0.25 and defect <= 1e-10
                passed &= ok
                runs.append(dict(dt=dt, seed=seed, monotone=monotone, defect=defect,
                                 rate_error=rate_error, **fit.to_dict()))
        worst = max(r['rate_error'] for r in runs)
        return Check('exponential_decay', passed, worst, 0.25,
                     {'T': T, 'abscissa': abscissa, 'runs': runs})

    def check_energy_balance(self):
        evolution = self.config.evolution
        pair = self.pair(self.fine_geometry)
        phi = random_initial_state(pair, evolution['seed'], evolution['balance_smoothing'])
        dts = sorted(evolution['balance_dts'], reverse=True)
        residuals = [energy_balance_residual(pair, phi, evolution['balance_T'], dt) for dt in dts]
        orders = convergence_orders(residuals, ratio=dts[0] / dts[1])
        value = float(np.min(orders))
        return Check('energy_balance_order', value >= 1.8, value, 1.8,
                     {'dts': dts, 'residuals': residuals, 'orders': orders})

    def check_composition(self):
        pair = self.pair(self.coarse_geometry)
        x = pair.restrict(random_initial_state(pair, self.config.evolution['seed']))
        residual = composition_residual(pair, x, self.config.evolution['dt'])
        return Check('semigroup_composition', residual <= 1e-8, residual, 1e-8)

    # ---------------- diagnostics ----------------
    def check_stokes(self):
        diagnostics = self.config.diagnostics
        rows = stokes_convergence(diagnostics['stokes_levels'],
                                  stabilization=self.config.stokes_stabilization)
        n = diagnostics['stokes_levels'][0]
        rejected = rejects_incompatible(build_grid(GeometryConfig(1., 1., n, n)),
                                        self.config.stokes_stabilization,
                                        self.config.tolerances['compatibility'])
        value = stokes_order(rows)
        return Check('stokes_oracle', value >= 1.8 and rejected, value, 1.8,
                     {'rows': rows, 'orders': [r['order_u'] for r in rows[1:]],
                      'incompatible_rejected': rejected})

    def med_maximum(self, geometry):
        diagnostics = self.config.diagnostics
        pair = self.pair(geometry)
        ratios = []
        for beta in diagnostics['med_betas']:
            for seed in range(diagnostics['med_seeds']):
                phi, phi_star = self.resolvent_pair(pair, beta, np.random.default_rng(seed))
                ratios.append(med_report(pair, beta, phi_star, phi))
        return max(ratios), ratios

    def check_med(self):
        coarse, coarse_ratios = self.med_maximum(self.coarse_geometry)
        fine, fine_ratios = self.med_maximum(self.fine_geometry)
        finite = np.all(np.isfinite(coarse_ratios)) and np.all(np.isfinite(fine_ratios))
        passed = bool(finite) and within_factor(coarse, fine, 2.)
        return Check('med_ratio', passed, fine, 2.,
                     {'coarse_max': coarse, 'fine_max': fine})

    def check_case1(self):
        diagnostics = self.config.diagnostics
        pair = self.pair(self.fine_geometry)
        rng = np.random.default_rng(self.config.evolution['seed'] + 4)
        worst, trace = 0., 0.
        for beta in diagnostics['med_betas']:
            phi, phi_star = self.resolvent_pair(pair, beta, rng)
            split = case1_decomposition(pair, beta, phi, phi_star,
                                        stabilization=self.config.stokes_stabilization)
            worst = max(worst, split['velocity_additivity'], split['pressure_additivity'])
            trace = max(trace, split['first_trace'])
        return Check('case1_decomposition', worst <= 1e-6 and trace == 0., worst, 1e-6,
                     {'first_trace': trace})

    def check_chueshov(self):
        tol = self.config.tolerances['compatibility']
        pair = self.pair(self.fine_geometry)
        phi0 = pair.null
        rng = np.random.default_rng(self.config.evolution['seed'] + 2)
        n = self.config.diagnostics['chueshov_states']
        disagreements, worst = 0, 0.
        for i in range(n):
            phi = random_state(pair, rng, complement=i % 2 == 0)
            _, scale = chueshov_compatibility(phi.p, phi.w1, pair.grid)
            member = abs(energy_inner_product(phi, phi0, pair.gram)) <= tol * scale
            try:
                variable = chueshov_variable(phi.p, phi.w1, pair.grid, tol=tol)
                accepted = True
                worst = max(worst, variable.residual)
            except CompatibilityError:
                accepted = False
            disagreements += accepted != member
        return Check('chueshov_variable', disagreements == 0 and worst <= 1e-6, worst, 1e-6,
                     {'disagreements': disagreements, 'states': n})

    def check_pressure_equation(self):
        pair = self.pair(self.fine_geometry)
        rng = np.random.default_rng(self.config.evolution['seed'] + 3)
        beta_max = self.config.sweep['beta_max']
        worst = 0.
        for _ in range(self.config.diagnostics['pressure_pairs']):
            beta = float(rng.uniform(-beta_max, beta_max))
            phi, phi_star = self.resolvent_pair(pair, beta, rng)
            worst = max(worst, pressure_equation_check(pair, beta, phi, phi_star))
        return Check('pressure_equation', worst <= 1e-8, worst, 1e-8)

    @property
    def checks(self):
        return [self.check_dissipation, self.check_null_space, self.check_beam_midpoint,
                self.check_complement, self.check_gram, self.check_imaginary_axis,
                self.check_abscissa, self.check_refinement, self.check_resolvent_bound,
                self.check_resolvent_identity, self.check_huang_pruss, self.check_decay,
                self.check_energy_balance, self.check_composition, self.check_stokes,
                self.check_med, self.check_case1, self.check_chueshov,
                self.check_pressure_equation]

    def run(self, names=None):
        checks = self.checks
        if names is not None:
            checks = [c for c in checks if c.__name__[len('check_'):] in names]
        results = []
        with tqdm(checks, disable=not self.verbose) as pbar:
            for check in pbar:
                name = check.__name__[len('check_'):]
                try:
                    result = check()
                except LabError as e:
                    result = Check(name, False, None, None, {'error': str(e)})
                results.append(result)
                pbar.set_postfix(OrderedDict(check=result.name, passed=result.passed))
        return results
