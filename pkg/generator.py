import os
from functools import cached_property

import numpy as np
import scipy.sparse as sp
import sympy
from scipy.io import mmwrite
from scipy.sparse.linalg import splu

from fields import GramMatrix, StateVector, energy_inner_product, null_vector
from grid import GeometryConfig, Grid, build_grid
from utils import AssemblyError, ConfigError, lu_solve


class PhysicalParams:
    '''
    eta: drag, lam/nu: Lame coefficients of sigma = 2 nu eps + lam tr(eps) I,
    stabilization: tau0 of the pressure term -tau0 (hx^2 + hy^2) (grad p, grad q)
    '''
    def __init__(self, eta=1., lam=0.5, nu=1., stabilization=0.05):
        self.eta = float(eta)
        self.lam = float(lam)
        self.nu = float(nu)
        self.stabilization = float(stabilization)
        self.validate()

    def validate(self):
        if not np.all(np.isfinite([self.eta, self.lam, self.nu, self.stabilization])):
            raise ConfigError(msg='physical parameters must be finite')
        if self.eta <= 0:
            raise ConfigError(self.eta, msg=f'eta must be positive, got {self.eta}')
        if self.nu <= 0:
            raise ConfigError(self.nu, msg=f'nu must be positive, got {self.nu}')
        if self.lam < 0:
            raise ConfigError(self.lam, msg=f'lambda must be nonnegative, got {self.lam}')
        if self.stabilization < 0:
            raise ConfigError(self.stabilization, msg='pressure stabilization must be nonnegative')

    def tau(self, grid: Grid):
        return self.stabilization * (grid.hx**2 + grid.hy**2)

    def to_dict(self):
        return {'eta': self.eta, 'lambda': self.lam, 'nu': self.nu,
                'stabilization': self.stabilization}

    @classmethod
    def from_dict(cls, config: dict):
        return cls(eta=config['eta'], lam=config['lambda'], nu=config['nu'],
                   stabilization=config.get('stabilization', 0.05))

    def __eq__(self, other):
        return isinstance(other, PhysicalParams) and self.to_dict() == other.to_dict()


class AmbientField:
    '''
    U = (d psi/dy, -d psi/dx),
    psi = s * 16 x^2 (Lx-x)^2 / Lx^4 * 16 y^2 (Ly+y)^2 / Ly^4
    '''
    def __init__(self, amplitude, grid: Grid):
        self.amplitude = float(amplitude)
        if not np.isfinite(self.amplitude):
            raise ConfigError(amplitude, msg='ambient amplitude must be finite')
        x, y = sympy.symbols('x y', real=True)
        Lx, Ly = grid.Lx, grid.Ly
        profile_x = 16 * x**2 * (Lx - x)**2 / Lx**4
        profile_y = 16 * y**2 * (Ly + y)**2 / Ly**4
        self.symbols = (x, y)
        self.stream = self.amplitude * profile_x * profile_y
        self.components = (sympy.diff(self.stream, y), -sympy.diff(self.stream, x))
        self.symbolic_divergence = sympy.simplify(
            sympy.diff(self.components[0], x) + sympy.diff(self.components[1], y))
        self._velocity = sympy.lambdify((x, y), self.components, 'numpy')
        self._divergence = sympy.lambdify((x, y), self.symbolic_divergence, 'numpy')

        self.values = self.velocity(grid.quad_points[..., 0], grid.quad_points[..., 1])
        self.sup_norm = float(np.max(np.linalg.norm(self.values, axis=-1)))

    def velocity(self, x, y):
        x, y = np.asarray(x, dtype=float), np.asarray(y, dtype=float)
        return np.stack([np.broadcast_to(np.asarray(c, dtype=float), x.shape)
                         for c in self._velocity(x, y)], -1)

    def divergence(self, x, y):
        x = np.asarray(x, dtype=float)
        return np.broadcast_to(np.asarray(self._divergence(x, y), dtype=float), x.shape)


def build_ambient_field(s, grid: Grid) -> AmbientField:
    return AmbientField(s, grid)


def convection_matrix(grid: Grid, U: AmbientField):
    ''' skew form 1/2 [(U.grad N_j, N_i) - (N_j, U.grad N_i)] '''
    adv = U.values[..., 0, None] * grid.dshape_x[None] \
        + U.values[..., 1, None] * grid.dshape_y[None]
    plain = np.einsum('q,qa,cqb->cab', grid.quad_weights, grid.shape, adv)
    return grid.assemble_cells(0.5 * (plain - plain.transpose(0, 2, 1)))


def strain_matrix(grid: Grid, nu, lam):
    ''' (sigma(u), eps(v)) on blocked (u1, u2) coefficients '''
    k = {key: grid.assemble_cells(grid.element_matrix(*key))
         for key in (('dx', 'dx'), ('dy', 'dy'), ('dx', 'dy'), ('dy', 'dx'))}
    xx, yy, xy, yx = k['dx', 'dx'], k['dy', 'dy'], k['dx', 'dy'], k['dy', 'dx']
    return sp.bmat([[(2 * nu + lam) * xx + nu * yy, nu * yx + lam * xy],
                     [nu * xy + lam * yx, (2 * nu + lam) * yy + nu * xx]], format='csr')


def divergence_matrix(grid: Grid):
    ''' (div u, q) with rows q and columns blocked (u1, u2) '''
    return sp.hstack([grid.assemble_cells(grid.element_matrix('N', 'dx')),
                      grid.assemble_cells(grid.element_matrix('N', 'dy'))], format='csr')


class OperatorPair:
    '''
    Full-space Gram / stiffness plus the reduced pencil (G, K) = (P^T G P, P^T K P)
    on the independent unknowns x = (p, free u, w1, w2).
    The w2 value coefficients double as the u2 trace on the interior top nodes.
    '''
    def __init__(self, grid, params, ambient, gram, stiffness, blocks, prolongation, free):
        self.grid = grid
        self.params = params
        self.ambient = ambient
        self.gram = gram
        self.layout = gram.layout
        self.stiffness_full = stiffness
        self.blocks = blocks
        self.P = prolongation
        self.free = free
        self.G = (prolongation.T @ gram.matrix @ prolongation).tocsc()
        self.K = (prolongation.T @ stiffness @ prolongation).tocsc()
        self.dimension = self.G.shape[0]

    def prolong(self, x) -> StateVector:
        return StateVector.from_vector(self.P @ np.asarray(x), self.layout)

    def restrict(self, phi: StateVector):
        return phi.to_vector()[self.free]

    @cached_property
    def _gram_lu(self):
        try:
            return splu(self.G)
        except RuntimeError as e:
            raise AssemblyError(msg=f'Gram factorization failed: {e}')

    def gram_solve(self, rhs):
        return lu_solve(self._gram_lu, rhs)

    def g_norm(self, x):
        x = np.asarray(x)
        return float(np.sqrt(max(np.vdot(x, self.G @ x).real, 0.)))

    def g_inner(self, a, b):
        return complex(np.vdot(b, self.G @ a))

    @cached_property
    def null(self) -> StateVector:
        return null_vector(self.gram)

    @cached_property
    def reduced_null(self):
        return self.restrict(self.null)

    def generator_residual(self, phi: StateVector):
        ''' |G^-1 K x|_G / |x|_G '''
        x = self.restrict(phi)
        norm = self.g_norm(x)
        if norm == 0:
            return 0.
        return self.g_norm(self.gram_solve(self.K @ x)) / norm

    def project(self, x):
        ''' G-orthogonal projection of reduced x onto the complement of the null vector '''
        x0 = self.reduced_null
        return x - (self.g_inner(x, x0) / self.g_inner(x0, x0)) * x0

    def adjoint(self):
        return OperatorPair(self.grid, self.params, self.ambient, self.gram,
                            self.stiffness_full.conj().T.tocsr(),
                            {**self.blocks, 'adjoint': True}, self.P, self.free)


def _reduction(grid: Grid, layout):
    n = grid.n_nodes
    s = layout.slices
    fixed_u1 = np.union1d(grid.left_nodes, grid.right_nodes)
    fixed_u2 = np.union1d(grid.bottom_nodes, grid.top_nodes)
    free = np.concatenate([np.arange(n),
                           n + np.setdiff1d(np.arange(n), fixed_u1),
                           2 * n + np.setdiff1d(np.arange(n), fixed_u2),
                           np.arange(s['w1'].start, s['w1'].stop),
                           np.arange(s['w2'].start, s['w2'].stop)])
    rows = list(free)
    cols = list(range(len(free)))
    if len(grid.omega_interior) != len(grid.beam.value_dofs):
        raise AssemblyError(msg='velocity trace nodes and beam value dofs do not match')
    w2_start = len(free) - layout.n_beam
    rows += list(2 * n + grid.omega_interior)
    cols += list(w2_start + grid.beam.value_dofs)
    P = sp.csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(layout.size, len(free)))
    if np.any(np.diff(P.tocsr().indptr) > 1):
        raise AssemblyError(msg='shared velocity/beam dof map is not one to one')
    return P, free


def assemble(grid: Grid, params: PhysicalParams, U: AmbientField) -> OperatorPair:
    gram = GramMatrix(grid)
    M = grid.mass
    A = strain_matrix(grid, params.nu, params.lam)
    D = divergence_matrix(grid)
    C = convection_matrix(grid, U)
    L = grid.laplacian
    Kb = grid.beam.stiffness
    Mu = sp.block_diag([M, M], format='csr')
    Cu = sp.block_diag([C, C], format='csr')

    stiffness = sp.bmat([[-C - params.tau(grid) * L, -D, None, None],
                         [D.T, -A - params.eta * Mu - Cu, None, None],
                         [None, None, None, Kb],
                         [None, None, -Kb, None]], format='csr')
    blocks = {'C': C, 'D': D, 'A': A, 'L': L, 'M': M, 'Kb': Kb, 'adjoint': False}
    P, free = _reduction(grid, gram.layout)
    return OperatorPair(grid, params, U, gram, stiffness, blocks, P, free)


def build_pair(geometry: GeometryConfig, params: PhysicalParams, amplitude) -> OperatorPair:
    grid = build_grid(geometry)
    return assemble(grid, params, build_ambient_field(amplitude, grid))


def assemble_adjoint(pair: OperatorPair) -> OperatorPair:
    return pair.adjoint()


def apply_generator(pair: OperatorPair, phi: StateVector) -> StateVector:
    ''' G^-1 K phi on the admissible (shared trace) part of phi '''
    return pair.prolong(pair.gram_solve(pair.K @ pair.restrict(phi)))


def dissipation_breakdown(phi: StateVector, grid: Grid, params: PhysicalParams):
    u = phi.u.T
    gx, gy = grid.gradient(u)
    exx, eyy = gx[..., 0], gy[..., 1]
    exy = 0.5 * (gy[..., 0] + gx[..., 1])
    strain = grid.integrate(2 * params.nu * (np.abs(exx)**2 + np.abs(eyy)**2 + 2 * np.abs(exy)**2)
                            + params.lam * np.abs(exx + eyy)**2)
    drag = params.eta * grid.integrate(np.sum(np.abs(grid.interpolate(u))**2, -1))
    px, py = grid.gradient(phi.p)
    stab = params.tau(grid) * grid.integrate(np.abs(px)**2 + np.abs(py)**2)
    return {'strain': float(strain), 'drag': float(drag), 'stabilization': float(stab),
            'total': float(strain + drag + stab)}


def dissipation(phi: StateVector, grid: Grid, params: PhysicalParams):
    ''' (sigma(u), eps(u)) + eta |u|^2 (+ the pressure stabilization term) '''
    return dissipation_breakdown(phi, grid, params)['total']


def skew_terms(phi: StateVector, pair: OperatorPair):
    ''' the four purely imaginary pairings whose sum is Im(phi^H K phi) '''
    b = pair.blocks
    p, u = phi.p, phi.u.ravel()
    sign = -1. if b['adjoint'] else 1.
    Cu = sp.block_diag([b['C'], b['C']], format='csr')
    terms = {
        'pressure_convection': -np.vdot(p, b['C'] @ p),
        'velocity_convection': -np.vdot(u, Cu @ u),
        'pressure_velocity': -np.vdot(p, b['D'] @ u) + np.vdot(u, b['D'].T @ p),
        'bending': np.vdot(phi.w1, b['Kb'] @ phi.w2) - np.vdot(phi.w2, b['Kb'] @ phi.w1),
    }
    return {key: float(sign * value.imag) for key, value in terms.items()}


def quadratic_form(pair: OperatorPair, phi: StateVector):
    ''' phi^H K phi on the full space '''
    v = phi.to_vector()
    return complex(np.vdot(v, pair.stiffness_full @ v))


def random_state(pair: OperatorPair, rng: np.random.Generator, complex_valued=False,
                 complement=True) -> StateVector:
    x = rng.standard_normal(pair.dimension)
    if complex_valued:
        x = x + 1j * rng.standard_normal(pair.dimension)
    if complement:
        x = pair.project(x)
    return pair.prolong(x)


def _beam_profile(beam, coeffs):
    ''' Hermite coefficients of w = sin^2(pi x / L) sum_k c_k cos(k pi x / L) '''
    L = beam.length
    x = beam.h * np.arange(1, beam.n_elements)
    k = np.arange(len(coeffs)) * np.pi / L
    series = np.cos(np.outer(x, k)) @ coeffs
    d_series = -(np.sin(np.outer(x, k)) * k) @ coeffs
    envelope = np.sin(np.pi * x / L)**2
    d_envelope = np.pi / L * np.sin(2 * np.pi * x / L)
    out = np.zeros(beam.n_dofs, dtype=series.dtype)
    out[beam.value_dofs] = envelope * series
    out[beam.slope_dofs] = d_envelope * series + envelope * d_series
    return out


def modal_state(pair: OperatorPair, rng: np.random.Generator, n_modes=4, complex_valued=False,
                complement=True) -> StateVector:
    '''
    Random combination of the lowest `n_modes` trigonometric modes per block.
    The coefficients do not depend on the grid, so the field converges under refinement.
    u1 vanishes on the side walls, u2 on the bottom, and the u2 trace on the top is w2.
    '''
    def draw(*shape):
        c = rng.standard_normal(shape)
        return c + 1j * rng.standard_normal(shape) if complex_valued else c

    grid = pair.grid
    x = grid.coords[:, 0] / grid.Lx
    s = (grid.coords[:, 1] + grid.Ly) / grid.Ly
    k = np.arange(n_modes)
    cos_x, sin_x = np.cos(np.pi * np.outer(x, k)), np.sin(np.pi * np.outer(x, k + 1))
    cos_y, sin_y = np.cos(np.pi * np.outer(s, k)), np.sin(np.pi * np.outer(s, k + 1))

    p = np.einsum('nj,jk,nk->n', cos_x, draw(n_modes, n_modes), cos_y)
    u1 = np.einsum('nj,jk,nk->n', sin_x, draw(n_modes, n_modes), cos_y)
    decay = 1. / (1. + k)**2
    w1 = _beam_profile(grid.beam, decay * draw(n_modes))
    w2 = _beam_profile(grid.beam, decay * draw(n_modes))
    u2 = np.einsum('nj,jk,nk->n', cos_x, draw(n_modes, n_modes), sin_y) \
        + grid.beam.evaluate(w2, grid.coords[:, 0]) * s**2

    y = pair.restrict(StateVector(p, np.stack([u1, u2]), w1, w2))
    if complement:
        y = pair.project(y)
    return pair.prolong(y)


def export_operators(pair: OperatorPair, path):
    ''' Matrix Market dumps of the reduced pencil, the prolongation and the full blocks '''
    os.makedirs(path, exist_ok=True)
    out = {}
    for name, matrix in (('G', pair.G), ('K', pair.K), ('P', pair.P),
                         ('G_full', pair.gram.matrix), ('K_full', pair.stiffness_full)):
        target = os.path.join(path, f'{name}.mtx')
        mmwrite(target, sp.coo_matrix(matrix), precision=17)
        out[name] = target
    return out


def energy(pair: OperatorPair, phi: StateVector):
    return energy_inner_product(phi, phi, pair.gram).real
