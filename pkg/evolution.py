import math
from collections import OrderedDict

import numpy as np
from scipy.sparse.linalg import splu
from scipy.stats import linregress
from tqdm import tqdm

from fields import StateVector
from generator import OperatorPair, dissipation, random_state
from utils import ConvergenceError, SolverError, lu_solve


class TrajectoryRecord:
    '''
    energies: |phi(t)|_G^2, dissipation_integral: int_0^t dissipation ds (trapezoid),
    complement_defect: |(phi(t), phi0)_G| / |phi0|_G.
    Exact balance of the scheme: E(0) - E(t) = 2 * dissipation_integral(t) + O(dt^2).
    '''
    def __init__(self, times, energies, dissipation_integral, complement_defect,
                 dissipation_rate, final_state=None):
        self.times = np.asarray(times)
        self.energies = np.asarray(energies)
        self.dissipation_integral = np.asarray(dissipation_integral)
        self.complement_defect = np.asarray(complement_defect)
        self.dissipation_rate = np.asarray(dissipation_rate)
        self.final_state = final_state

    def balance_residual(self):
        return self.energies[0] - self.energies - 2 * self.dissipation_integral

    def rows(self):
        return [OrderedDict(t=t, energy=e, dissipation_integral=d, complement_defect=c)
                for t, e, d, c in zip(self.times, self.energies,
                                      self.dissipation_integral, self.complement_defect)]


class DecayFit:
    def __init__(self, M, delta, r_squared, window):
        self.M = float(M)
        self.delta = float(delta)
        self.r_squared = float(r_squared)
        self.window = window

    def to_dict(self):
        return OrderedDict(M=self.M, delta=self.delta, r_squared=self.r_squared,
                           window=self.window)


class CrankNicolson:
    ''' (G - dt/2 K) x+ = (G + dt/2 K) x with one factorization per dt '''
    def __init__(self, pair: OperatorPair, dt):
        if not dt > 0:
            raise ValueError(f'dt must be positive, got {dt}')
        self.pair = pair
        self.dt = float(dt)
        self.right = (pair.G + 0.5 * dt * pair.K).tocsr()
        try:
            self.left = splu((pair.G - 0.5 * dt * pair.K).tocsc())
        except RuntimeError as e:
            raise SolverError(dt, msg=f'Crank-Nicolson factorization failed: {e}')

    def _solve(self, rhs):
        return lu_solve(self.left, rhs)

    def advance(self, x):
        return self._solve(self.right @ x)

    def solve_left(self, rhs):
        return self._solve(rhs)

    def damp(self, x):
        ''' two implicit Euler steps of dt / 2, (G - dt/2 K) x+ = G x, on the same factor '''
        return self._solve(self.pair.G @ self._solve(self.pair.G @ x))


def step(pair: OperatorPair, phi: StateVector, dt, stepper=None) -> StateVector:
    stepper = stepper or CrankNicolson(pair, dt)
    return pair.prolong(stepper.advance(pair.restrict(phi)))


def simulate(pair: OperatorPair, phi_init: StateVector, T, dt, verbose=False,
             summary_writer=None, startup_steps=0) -> TrajectoryRecord:
    '''
    Crank-Nicolson run over [0, T]. The first `startup_steps` steps are pairs of
    implicit Euler half steps (L-stable start for rough data); energy stays monotone
    and the complement is kept.
    '''
    if not T > 0:
        raise ValueError(f'T must be positive, got {T}')
    if startup_steps < 0:
        raise ValueError(f'startup_steps must be nonnegative, got {startup_steps}')
    stepper = CrankNicolson(pair, dt)
    n_steps = max(1, int(math.ceil(T / dt - 1e-9)))
    x0 = pair.reduced_null
    x0_norm = pair.g_norm(x0)

    def ledger(x):
        phi = pair.prolong(x)
        return (pair.g_norm(x)**2, dissipation(phi, pair.grid, pair.params),
                abs(pair.g_inner(x, x0)) / x0_norm)

    x = pair.restrict(phi_init)
    energy, rate, defect = ledger(x)
    times, energies, integral, defects, rates = [0.], [energy], [0.], [defect], [rate]

    with tqdm(range(1, n_steps + 1), disable=not verbose) as pbar:
        for n in pbar:
            x = stepper.damp(x) if n <= startup_steps else stepper.advance(x)
            energy, new_rate, defect = ledger(x)
            times.append(n * dt)
            energies.append(energy)
            integral.append(integral[-1] + 0.5 * dt * (rate + new_rate))
            defects.append(defect)
            rates.append(new_rate)
            rate = new_rate
            pbar.set_postfix(OrderedDict(t=f'{n * dt:.3f}', energy=f'{energy:.4e}'))
            if summary_writer is not None:
                summary_writer.add_scalar('simulate/energy', energy, n)
    return TrajectoryRecord(times, energies, integral, defects, rates, pair.prolong(x))


def fit_decay(record: TrajectoryRecord, window=0.5) -> DecayFit:
    ''' line through (t, log E) over the last `window` fraction of the run '''
    if not 0 < window <= 1:
        raise ValueError(f'window must lie in (0, 1], got {window}')
    t, energy = record.times, record.energies
    start = t[0] + (1 - window) * (t[-1] - t[0])
    mask = t >= start - 1e-12 * max(1., abs(t[-1]))
    if np.sum(mask) < 3:
        raise ConvergenceError(msg=f'decay window holds {np.sum(mask)} points, need at least 3')
    tail = energy[mask]
    if np.any(~np.isfinite(tail)) or np.any(tail <= np.finfo(float).tiny):
        raise ConvergenceError(msg='energy underflow or non positive energy in the decay window')
    fit = linregress(t[mask], np.log(tail))
    r_squared = 0. if not np.isfinite(fit.rvalue) else min(max(fit.rvalue**2, 0.), 1.)
    return DecayFit(M=math.exp(fit.intercept / 2), delta=-fit.slope / 2,
                    r_squared=r_squared, window=window)


def random_initial_state(pair: OperatorPair, seed, smoothing=0) -> StateVector:
    '''
    raw random coefficients projected on the complement, unit G norm;
    smoothing > 0 applies (1 - A)^-1 that many times
    '''
    x = pair.restrict(random_state(pair, np.random.default_rng(seed), complement=True)).real
    if smoothing > 0:
        try:
            lu = splu((pair.G - pair.K).tocsc())
        except RuntimeError as e:
            raise SolverError(msg=f'smoothing factorization failed: {e}')
        for _ in range(smoothing):
            x = pair.project(lu.solve(pair.G @ x)).real
    return pair.prolong(x / pair.g_norm(x))


def energy_balance_residual(pair: OperatorPair, phi_init: StateVector, T, dt, startup_steps=0):
    ''' relative |E(0) - E(T) - 2 int dissipation| for one run '''
    record = simulate(pair, phi_init, T, dt, startup_steps=startup_steps)
    drop = record.energies[0] - record.energies[-1]
    return abs(record.balance_residual()[-1]) / max(abs(drop), 1e-300)


def composition_residual(pair: OperatorPair, x, dt):
    '''
    two Crank-Nicolson steps against the rational propagator applied
    factor by factor in a different order
    '''
    stepper = CrankNicolson(pair, dt)
    x = np.asarray(x, dtype=complex)
    twice = stepper.advance(stepper.advance(x))
    y = pair.gram_solve(stepper.right @ pair.gram_solve(stepper.right @ x))
    y = stepper.solve_left(pair.G @ stepper.solve_left(pair.G @ y))
    return float(np.linalg.norm(twice - y) / max(np.linalg.norm(twice), 1e-300))
