from collections import OrderedDict
from concurrent.futures import ThreadPoolExecutor

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import (ArpackNoConvergence, LinearOperator, eigs, gmres,
                                 norm as sparse_norm, spilu, splu)
from tqdm import tqdm

from fields import StateVector
from generator import OperatorPair
from utils import SolverError, SpectrumError

RESOLVENT_TOL = 1e-8
EIG_TOL = 1e-8
POWER_TOL = 1e-4
POWER_MAXITER = 200
DEFAULT_DENSE_CAP = 200000
DEFAULT_EXTRA_BETAS = (0., 0.5, 1., 2.)
DEFAULT_ABSCISSA_SHIFTS = (0., 0.5, 1., 2., 5., 10., 25., 50.)


class ResolventSample:
    def __init__(self, beta, norm_estimate, iterations, converged):
        self.beta = float(beta)
        self.norm_estimate = float(norm_estimate)
        self.iterations = int(iterations)
        self.converged = bool(converged)

    def mirrored(self):
        return ResolventSample(-self.beta, self.norm_estimate, self.iterations, self.converged)

    def to_dict(self):
        return OrderedDict(beta=self.beta, norm_estimate=self.norm_estimate,
                           iterations=self.iterations, converged=self.converged)


class SweepResult:
    def __init__(self, samples, h, beta_max, spacing):
        self.samples = sorted(samples, key=lambda s: s.beta)
        converged = [s for s in self.samples if s.converged]
        self.partial = len(converged) != len(self.samples)
        best = max(converged, key=lambda s: s.norm_estimate) if converged else None
        self.sup_estimate = best.norm_estimate if best else float('nan')
        self.sup_beta = best.beta if best else float('nan')
        self.h = h
        self.beta_max = float(beta_max)
        self.spacing = float(spacing)

    @property
    def betas(self):
        return np.array([s.beta for s in self.samples])

    @property
    def estimates(self):
        return np.array([s.norm_estimate for s in self.samples])

    def rows(self):
        return [s.to_dict() for s in self.samples]

    def summary(self):
        return OrderedDict(sup_estimate=self.sup_estimate, sup_beta=self.sup_beta,
                           partial=self.partial, n_samples=len(self.samples),
                           h=self.h, beta_max=self.beta_max, spacing=self.spacing)


class EigenReport:
    def __init__(self, shift, eigenvalues, residuals, backward_errors, vectors=None, dropped=0):
        order = np.argsort(np.abs(np.asarray(eigenvalues) - shift)) if len(eigenvalues) else []
        self.shift = complex(shift)
        self.eigenvalues = np.asarray(eigenvalues, dtype=complex)[order]
        self.residuals = np.asarray(residuals, dtype=float)[order]
        self.backward_errors = np.asarray(backward_errors, dtype=float)[order]
        self.vectors = None if vectors is None else [vectors[i] for i in order]
        self.dropped = dropped

    def rows(self):
        return [OrderedDict(shift_re=self.shift.real, shift_im=self.shift.imag,
                            re_lambda=lam.real, im_lambda=lam.imag, residual=res,
                            backward_error=err)
                for lam, res, err in zip(self.eigenvalues, self.residuals, self.backward_errors)]


class ResolventSolver:
    '''
    Factorization of the bordered system
        [[z G - K, g], [g^H, 0]],  g = G x0,
    whose first block solves (z - A) x = r on the complement of the null vector.
    Adjoint solves reuse the factorization.
    '''
    def __init__(self, pair: OperatorPair, shift, dense_cap=DEFAULT_DENSE_CAP):
        self.pair = pair
        self.shift = complex(shift)
        n = pair.dimension
        g = pair.G @ pair.reduced_null
        g = g / np.linalg.norm(g)
        border = sp.csc_matrix(g.reshape(-1, 1))
        self.matrix = sp.bmat([[self.shift * pair.G - pair.K, border],
                               [border.conj().T, None]], format='csc').astype(complex)
        self.n = n
        self.direct = self.matrix.shape[0] <= dense_cap
        try:
            if self.direct:
                self.lu = splu(self.matrix)
            else:
                self.ilu = spilu(self.matrix, drop_tol=1e-6, fill_factor=20)
                self.ilu_h = spilu(self.matrix.conj().T.tocsc(), drop_tol=1e-6, fill_factor=20)
        except RuntimeError as e:
            raise SolverError(self.shift, msg=f'factorization at shift {self.shift} failed: {e}')

    def _iterative(self, matrix, ilu, rhs):
        size = matrix.shape[0]
        precond = LinearOperator((size, size), matvec=ilu.solve, dtype=complex)
        sol, info = gmres(matrix, rhs, M=precond, rtol=1e-12, restart=100, maxiter=50)
        if info != 0:
            raise SolverError(self.shift, msg=f'gmres did not converge at shift {self.shift} (info={info})')
        return sol

    def _bordered(self, x, adjoint=False):
        rhs = np.concatenate([self.pair.G @ x, [0.]]).astype(complex)
        if self.direct:
            sol = self.lu.solve(rhs, trans='H' if adjoint else 'N')
        elif adjoint:
            sol = self._iterative(self.matrix.conj().T.tocsc(), self.ilu_h, rhs)
        else:
            sol = self._iterative(self.matrix, self.ilu, rhs)
        return sol[:self.n]

    def solve(self, x):
        ''' (z - A)^-1 on the complement, reduced coordinates '''
        pair = self.pair
        return pair.project(self._bordered(pair.project(np.asarray(x, dtype=complex))))

    def adjoint_solve(self, y):
        ''' G-adjoint of solve '''
        pair = self.pair
        return pair.project(self._bordered(pair.project(np.asarray(y, dtype=complex)), adjoint=True))

    def residual(self, x, rhs):
        ''' |(z G - K) x - G rhs| / |G rhs| for projected rhs '''
        pair = self.pair
        target = pair.G @ pair.project(np.asarray(rhs, dtype=complex))
        scale = np.linalg.norm(target)
        if scale == 0:
            return float(np.linalg.norm(x))
        return float(np.linalg.norm(self.shift * (pair.G @ x) - pair.K @ x - target) / scale)


def solve_resolvent(pair: OperatorPair, beta, rhs: StateVector, solver=None,
                    tol=RESOLVENT_TOL) -> StateVector:
    solver = solver or ResolventSolver(pair, 1j * beta)
    r = pair.restrict(rhs)
    x = solver.solve(r)
    residual = solver.residual(x, r)
    if residual > tol:
        raise SolverError(beta, residual,
                          msg=f'resolvent residual {residual:.3e} at beta={beta} exceeds {tol:.1e}')
    return pair.prolong(x)


def resolvent_norm(pair: OperatorPair, beta, tol=POWER_TOL, maxiter=POWER_MAXITER, seed=0,
                   dense_cap=DEFAULT_DENSE_CAP) -> ResolventSample:
    '''
    Power iteration on R^# R with R = (i beta - A)^-1 restricted to the
    complement and # the adjoint in the G inner product.
    '''
    solver = ResolventSolver(pair, 1j * beta, dense_cap=dense_cap)
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(pair.dimension) + 1j * rng.standard_normal(pair.dimension)
    if beta < 0:
        x = x.conj()
    x = pair.project(x)
    x = x / pair.g_norm(x)

    estimate, previous = 0., 0.
    for iteration in range(1, maxiter + 1):
        y = solver.solve(x)
        estimate = pair.g_norm(y)
        z = solver.adjoint_solve(y)
        znorm = pair.g_norm(z)
        if znorm == 0:
            return ResolventSample(beta, estimate, iteration, False)
        x = z / znorm
        if iteration > 1 and abs(estimate - previous) <= tol * estimate:
            return ResolventSample(beta, estimate, iteration, True)
        previous = estimate
    return ResolventSample(beta, estimate, maxiter, False)


def sweep_betas(beta_max, n_samples, extra=DEFAULT_EXTRA_BETAS):
    grid = np.linspace(0., beta_max, n_samples)
    extra = [b for b in extra if 0 <= b <= beta_max]
    return np.unique(np.concatenate([grid, extra]))


def resolvent_sweep(pair: OperatorPair, beta_max, n_samples, extra=DEFAULT_EXTRA_BETAS,
                    tol=POWER_TOL, maxiter=POWER_MAXITER, seed=0, workers=1,
                    dense_cap=DEFAULT_DENSE_CAP, verbose=False, summary_writer=None) -> SweepResult:
    if not beta_max > 0:
        raise ValueError(f'beta_max must be positive, got {beta_max}')
    if n_samples < 3:
        raise ValueError(f'n_samples must be at least 3, got {n_samples}')
    betas = sweep_betas(beta_max, n_samples, extra)

    def sample(beta):
        return resolvent_norm(pair, beta, tol=tol, maxiter=maxiter, seed=seed, dense_cap=dense_cap)

    samples = []
    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        with tqdm(pool.map(sample, betas), total=len(betas), disable=not verbose) as pbar:
            for i, result in enumerate(pbar):
                samples.append(result)
                pbar.set_postfix(OrderedDict(beta=f'{result.beta:.3f}',
                                             norm=f'{result.norm_estimate:.4f}'))
                if summary_writer is not None:
                    summary_writer.add_scalar('sweep/norm_estimate', result.norm_estimate, i)
    samples += [s.mirrored() for s in samples if s.beta > 0]
    return SweepResult(samples, h=(pair.grid.hx, pair.grid.hy), beta_max=beta_max,
                       spacing=beta_max / (n_samples - 1))


def _factor_shifted(pair, shift, reshift, attempts=5):
    for attempt in range(attempts):
        try:
            return shift, splu((pair.K - shift * pair.G).tocsc().astype(complex))
        except RuntimeError:
            shift = shift + reshift * (1 + abs(shift))
    raise SpectrumError(shift, msg=f'pencil remains singular near shift {shift}')


def eigs_near(pair: OperatorPair, shift, k=6, tol=EIG_TOL, deflate=False, reshift=1e-6,
              dense_cap=DEFAULT_DENSE_CAP, return_vectors=False) -> EigenReport:
    '''
    k eigenvalues of K v = lambda G v nearest shift by shift-invert Arnoldi.
    With deflate the iteration runs on the complement of the null vector.
    '''
    n = pair.dimension
    k = min(k, n - 2)
    if deflate:
        try:
            solver = ResolventSolver(pair, shift, dense_cap=dense_cap)
        except SolverError:
            shift = shift + reshift * (1 + abs(shift))
            solver = ResolventSolver(pair, shift, dense_cap=dense_cap)

        def matvec(v):
            return -solver.solve(v)
    else:
        shift, lu = _factor_shifted(pair, complex(shift), reshift)

        def matvec(v):
            return lu.solve(pair.G @ np.asarray(v, dtype=complex))

    op = LinearOperator((n, n), matvec=matvec, dtype=complex)
    ncv = min(n - 1, max(2 * k + 1, 20))
    try:
        theta, vectors = eigs(op, k=k, which='LM', ncv=ncv, tol=1e-12, maxiter=max(1000, 10 * n))
    except ArpackNoConvergence as e:
        if len(e.eigenvalues) == 0:
            raise SpectrumError(shift, msg=f'Arnoldi stagnated near shift {shift}')
        theta, vectors = e.eigenvalues, e.eigenvectors

    keep = np.abs(theta) > 0
    theta, vectors = theta[keep], vectors[:, keep]
    lambdas = shift + 1. / theta
    knorm, gnorm = sparse_norm(pair.K, 1), sparse_norm(pair.G, 1)
    values, residuals, errors, kept = [], [], [], []
    dropped = 0
    for lam, v in zip(lambdas, vectors.T):
        raw = np.linalg.norm(pair.K @ v - lam * (pair.G @ v)) / np.linalg.norm(v)
        backward = raw / (knorm + abs(lam) * gnorm)
        if backward > tol:
            dropped += 1
            continue
        values.append(lam)
        residuals.append(raw)
        errors.append(backward)
        kept.append(v / pair.g_norm(v))
    return EigenReport(shift, values, residuals, errors,
                       vectors=kept if return_vectors else None, dropped=dropped)


def spectral_abscissa_complement(pair: OperatorPair, k=6, shifts=DEFAULT_ABSCISSA_SHIFTS,
                                 tol=EIG_TOL, workers=1, dense_cap=DEFAULT_DENSE_CAP,
                                 return_eigenvalues=False):
    ''' largest real part of the pencil on the complement, sampled along the imaginary axis '''
    def near(beta):
        return eigs_near(pair, 1j * beta, k=k, tol=tol, deflate=True, dense_cap=dense_cap)

    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        reports = list(pool.map(near, shifts))
    values = np.concatenate([r.eigenvalues for r in reports] + [np.zeros(0, dtype=complex)])
    if len(values) == 0:
        raise SpectrumError(msg='no eigenvalue passed the residual check')
    values = np.concatenate([values, values.conj()])
    abscissa = float(np.max(values.real))
    if abscissa >= 0:
        raise SpectrumError(abscissa, msg=f'eigenvalue with Re = {abscissa:.3e} >= 0 on the complement')
    if return_eigenvalues:
        return abscissa, values
    return abscissa


def resolvent_identity_residual(pair: OperatorPair, beta1, beta2, rng):
    ''' R(i b1) - R(i b2) = i (b2 - b1) R(i b1) R(i b2) '''
    r = pair.project(rng.standard_normal(pair.dimension) + 1j * rng.standard_normal(pair.dimension))
    first = ResolventSolver(pair, 1j * beta1)
    second = ResolventSolver(pair, 1j * beta2)
    lhs = first.solve(r) - second.solve(r)
    rhs = 1j * (beta2 - beta1) * first.solve(second.solve(r))
    return pair.g_norm(lhs - rhs) / max(pair.g_norm(lhs), pair.g_norm(rhs), 1e-300)


def unrestricted_gain(pair: OperatorPair, beta, rng):
    '''
    |(i beta - A)^-1 r|_G / |r|_G without deflation, r = x0 + noise.
    Grows like 1/|beta| as beta -> 0.
    '''
    r = pair.reduced_null + 0.1 * rng.standard_normal(pair.dimension)
    try:
        lu = splu((1j * beta * pair.G - pair.K).tocsc().astype(complex))
    except RuntimeError:
        return float('inf')
    x = lu.solve((pair.G @ r).astype(complex))
    return pair.g_norm(x) / pair.g_norm(r)
