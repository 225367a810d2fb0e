from collections import OrderedDict
from functools import lru_cache

import numpy as np
import scipy.sparse as sp
import sympy
from scipy.linalg import eigh
from scipy.sparse.linalg import splu

from fields import StateVector
from generator import OperatorPair, apply_generator, divergence_matrix, strain_matrix
from grid import GeometryConfig, Grid, build_grid
from metrics import convergence_orders, least_squares_order
from utils import CompatibilityError, SolverError, lu_solve

STOKES_STABILIZATION = 12.
COMPATIBILITY_TOL = 1e-8


class PressureDecomposition:
    def __init__(self, q0, c0):
        self.q0 = q0
        self.c0 = c0


def pressure_decomposition(p, grid: Grid) -> PressureDecomposition:
    ''' p = q0 + c0 with int q0 = 0 '''
    p = np.asarray(p)
    c0 = np.sum(grid.mass @ p) / grid.measure
    return PressureDecomposition(p - c0, c0)


# ---------------- boundary norms ----------------
@lru_cache(maxsize=16)
def _curve_modes(Lx, Ly, nx, ny):
    mass, stiff = build_grid(GeometryConfig(Lx, Ly, nx, ny)).boundary_curve_matrices()
    values, modes = eigh(stiff, mass)
    return np.maximum(values, 0.), modes, mass


def _boundary_modes(grid: Grid):
    # keyed on the geometry so cached entries do not hold grids alive
    return _curve_modes(grid.Lx, grid.Ly, grid.nx, grid.ny)


def boundary_sobolev_norm(g, grid: Grid, s, functional=False):
    '''
    (sum_k (1 + lambda_k)^s |g_k|^2)^1/2 over the mass-orthonormal
    Laplace-Beltrami modes of the boundary curve.
    g holds nodal trace values (functional=False) or the values of a
    boundary functional on the nodal hats (functional=True), in curve
    order, optionally with a trailing component axis.
    '''
    values, modes, mass = _boundary_modes(grid)
    g = np.asarray(g)
    coeffs = modes.T @ g if functional else modes.T @ (mass @ g)
    weights = (1 + values)**s
    if coeffs.ndim == 2:
        weights = weights[:, None]
    return float(np.sqrt(np.sum(weights * np.abs(coeffs)**2)))


def hminushalf_norm(g, grid: Grid, functional=False):
    return boundary_sobolev_norm(g, grid, -0.5, functional=functional)


# ---------------- Stokes ----------------
class StokesSolution:
    def __init__(self, u, p, residuals, estimate, stabilization, continuity_load, multiplier):
        self.u = u
        self.p = p
        self.residuals = residuals
        self.estimate = estimate
        self.stabilization = stabilization
        self.continuity_load = continuity_load
        self.multiplier = multiplier


def _scalar_at_quadrature(data, grid: Grid):
    if data is None:
        return np.zeros(grid.quad_points.shape[:2])
    if callable(data):
        return np.broadcast_to(grid.evaluate(data), grid.quad_points.shape[:2])
    return grid.interpolate(np.asarray(data))


def _vector_at_quadrature(data, grid: Grid):
    if data is None:
        return np.zeros(grid.quad_points.shape)
    if callable(data):
        fx, fy = data(grid.quad_points[..., 0], grid.quad_points[..., 1])
        shape = grid.quad_points.shape[:2]
        return np.stack([np.broadcast_to(fx, shape), np.broadcast_to(fy, shape)], -1)
    return grid.interpolate(np.asarray(data).reshape(2, -1).T)


def _nodal_vector(data, grid: Grid):
    if data is None:
        return np.zeros((2, grid.n_nodes))
    if callable(data):
        fx, fy = data(grid.coords[:, 0], grid.coords[:, 1])
        return np.stack([np.broadcast_to(fx, (grid.n_nodes,)),
                         np.broadcast_to(fy, (grid.n_nodes,))])
    return np.asarray(data).reshape(2, -1)


class StokesSystem:
    '''
    Equal order bilinear velocity/pressure for
        -div sigma(u) + eta u + grad p = f,  div u = g,  u = phi on the boundary
    with residual based pressure stabilization tau = h^2 / (C nu) and a
    Lagrange multiplier fixing the pressure mean.
    '''
    def __init__(self, grid: Grid, nu=1., lam=0., eta=0., stabilization=STOKES_STABILIZATION):
        self.grid = grid
        self.nu, self.lam, self.eta = nu, lam, eta
        self.tau = (grid.hx**2 + grid.hy**2) / (stabilization * nu)
        self.stabilization = stabilization
        n = grid.n_nodes
        self.n = n

        M = grid.mass
        self.velocity_mass = sp.block_diag([M, M], format='csr')
        self.momentum = (strain_matrix(grid, nu, lam) + eta * self.velocity_mass).tocsr()
        self.D = divergence_matrix(grid)

        # second derivatives of bilinears are constant per cell
        d2 = 0.25 * (_ref_sign(0) * _ref_sign(1)) * 4 / (grid.hx * grid.hy)
        shape_xy = np.broadcast_to(d2, grid.shape.shape)
        ex = np.einsum('q,qa,qb->ab', grid.quad_weights, grid.dshape_x, shape_xy)
        ey = np.einsum('q,qa,qb->ab', grid.quad_weights, grid.dshape_y, shape_xy)
        ex, ey = grid.assemble_cells(ex), grid.assemble_cells(ey)
        # (div sigma(u))_1 = (lam + nu) d2 u2 / dxdy, (div sigma(u))_2 = (lam + nu) d2 u1 / dxdy
        stress = -(lam + nu) * sp.hstack([ey, ex])
        drag = eta * sp.hstack([grid.assemble_cells(grid.element_matrix('dx', 'N')),
                                grid.assemble_cells(grid.element_matrix('dy', 'N'))])
        self.continuity_velocity = (self.D + self.tau * (stress + drag)).tocsr()
        self.continuity_pressure = (self.tau * grid.laplacian).tocsr()
        self.mean = M @ np.ones(n)

        self.matrix = sp.bmat([
            [self.momentum, -self.D.T, None],
            [self.continuity_velocity, self.continuity_pressure, sp.csr_matrix(self.mean[:, None])],
            [None, sp.csr_matrix(self.mean[None, :]), None]], format='csr')

        boundary = np.unique(grid.boundary_nodes)
        self.fixed = np.concatenate([boundary, n + boundary])
        self.free = np.setdiff1d(np.arange(self.matrix.shape[0]), self.fixed)
        self._lu = None

    def continuity(self, u, q):
        ''' stabilized divergence functional of (u, q) '''
        return self.continuity_velocity @ np.asarray(u).ravel() + self.continuity_pressure @ q

    def continuity_load(self, f, g):
        grid = self.grid
        fq = _vector_at_quadrature(f, grid)
        load = grid.assemble_load(_scalar_at_quadrature(g, grid))
        dx = np.einsum('q,qa,cq->ca', grid.quad_weights, grid.dshape_x, fq[..., 0])
        dy = np.einsum('q,qa,cq->ca', grid.quad_weights, grid.dshape_y, fq[..., 1])
        out = np.zeros(grid.n_nodes, dtype=np.result_type(load, dx))
        np.add.at(out, grid.cells, self.tau * (dx + dy))
        return load + out

    def momentum_load(self, f):
        load = self.grid.assemble_load(_vector_at_quadrature(f, self.grid))
        return load.T.ravel()

    def lu(self):
        if self._lu is None:
            try:
                self._lu = splu(self.matrix[self.free][:, self.free].tocsc().astype(complex))
            except RuntimeError as e:
                raise SolverError(msg=f'Stokes factorization failed: {e}')
        return self._lu

    def solve(self, momentum_load, continuity_load, phi_nodal, compat_tol=COMPATIBILITY_TOL):
        grid = self.grid
        phi_nodal = np.asarray(phi_nodal).reshape(2, -1)
        flux = grid.boundary_flux(phi_nodal.T)
        total = np.sum(continuity_load)
        scale = max(1., abs(flux), np.sum(np.abs(continuity_load)))
        if abs(total - flux) > compat_tol * scale:
            raise CompatibilityError(total, flux,
                                     msg=f'incompatible Stokes data: int g = {total:.6e}, '
                                         f'boundary flux = {flux:.6e}')
        rhs = np.concatenate([momentum_load, continuity_load, [0.]]).astype(complex)
        known = np.zeros(self.matrix.shape[0], dtype=complex)
        known[self.fixed] = phi_nodal.ravel()[self.fixed]
        rhs_free = (rhs - self.matrix @ known)[self.free]
        sol = known.copy()
        sol[self.free] = self.lu().solve(rhs_free)
        residual = np.linalg.norm(self.matrix[self.free] @ sol - rhs[self.free]) \
            / max(np.linalg.norm(rhs[self.free]), np.linalg.norm(self.matrix @ known), 1e-300)
        n = self.n
        u = sol[:2 * n].reshape(2, n)
        p = sol[2 * n:3 * n]
        return u, p, float(residual), sol[-1]


def _ref_sign(axis):
    return np.array([-1., 1., 1., -1.]) if axis == 0 else np.array([-1., -1., 1., 1.])


def h1_norm(u, grid: Grid):
    u = np.asarray(u).reshape(2, -1)
    total = 0.
    for comp in u:
        total += np.vdot(comp, grid.mass @ comp).real + np.vdot(comp, grid.laplacian @ comp).real
    return float(np.sqrt(max(total, 0.)))


def l2_norm(values, grid: Grid):
    values = np.asarray(values)
    if values.ndim == 1:
        return float(np.sqrt(max(np.vdot(values, grid.mass @ values).real, 0.)))
    return float(np.sqrt(sum(max(np.vdot(v, grid.mass @ v).real, 0.) for v in values)))


def stokes_solve(f, g, phi_bc, grid: Grid, nu=1., lam=0., eta=0.,
                 stabilization=STOKES_STABILIZATION, momentum_load=None, div_load=None,
                 compat_tol=COMPATIBILITY_TOL, system=None) -> StokesSolution:
    '''
    f: callable (x, y) -> (fx, fy) or nodal (2, n); g: callable or nodal;
    phi_bc: callable or nodal (2, n), only boundary values are used.
    momentum_load / div_load replace the assembled (f, v) / (g, q) + tau (f, grad q) loads.
    '''
    system = system or StokesSystem(grid, nu, lam, eta, stabilization)
    phi_nodal = _nodal_vector(phi_bc, grid)
    if momentum_load is None:
        momentum_load = system.momentum_load(f)
    if div_load is None:
        div_load = system.continuity_load(f, g)
    u, p, residual, multiplier = system.solve(momentum_load, div_load, phi_nodal, compat_tol)

    fq = _vector_at_quadrature(f, grid)
    gq = _scalar_at_quadrature(g, grid)
    boundary_trace = phi_nodal.T[grid.boundary_nodes]
    lhs = h1_norm(u, grid) + l2_norm(p, grid)
    if f is None:
        # only the load functional is known
        f_norm = np.linalg.norm(momentum_load)
    else:
        f_norm = np.sqrt(grid.integrate(np.sum(np.abs(fq)**2, -1)))
    rhs = f_norm + np.sqrt(grid.integrate(np.abs(gq)**2)) \
        + boundary_sobolev_norm(boundary_trace, grid, 0.5)
    estimate = OrderedDict(lhs=lhs, rhs=float(rhs), constant=lhs / rhs if rhs > 0 else 0.)
    residuals = OrderedDict(system=residual,
                            pressure_mean=float(abs(np.sum(grid.mass @ p))),
                            multiplier=float(abs(multiplier)))
    return StokesSolution(u, p, residuals, estimate, system.stabilization, div_load, multiplier)


def manufactured_stokes(nu=1., lam=0., eta=0.):
    '''
    u = curl(sin^2(pi x) sin^2(pi y)), p = cos(pi x) cos(pi y),
    f = -div sigma(u) + eta u + grad p on (0,1) x (-1,0)
    '''
    x, y = sympy.symbols('x y', real=True)
    psi = sympy.sin(sympy.pi * x)**2 * sympy.sin(sympy.pi * y)**2
    u = [sympy.diff(psi, y), -sympy.diff(psi, x)]
    p = sympy.cos(sympy.pi * x) * sympy.cos(sympy.pi * y)
    grad = lambda v: [sympy.diff(v, x), sympy.diff(v, y)]
    eps = [[grad(u[i])[j] / 2 + grad(u[j])[i] / 2 for j in range(2)] for i in range(2)]
    div_u = sympy.diff(u[0], x) + sympy.diff(u[1], y)
    sigma = [[2 * nu * eps[i][j] + (lam * div_u if i == j else 0) for j in range(2)] for i in range(2)]
    f = [sympy.simplify(-sympy.diff(sigma[i][0], x) - sympy.diff(sigma[i][1], y)
                        + eta * u[i] + grad(p)[i]) for i in range(2)]

    def vector(expr):
        fn = sympy.lambdify((x, y), expr, 'numpy')
        return lambda a, b: tuple(np.broadcast_to(c, np.shape(a)) for c in fn(a, b))

    return {'u': vector(u), 'p': sympy.lambdify((x, y), p, 'numpy'), 'f': vector(f),
            'g': lambda a, b: np.zeros(np.shape(a)), 'divergence': sympy.simplify(div_u)}


def stokes_convergence(ns=(8, 16, 32, 64), nu=1., lam=0., eta=0.,
                       stabilization=STOKES_STABILIZATION):
    ''' L2 velocity / pressure errors of the manufactured problem on the unit square '''
    exact = manufactured_stokes(nu, lam, eta)
    rows = []
    for n in ns:
        grid = build_grid(GeometryConfig(1., 1., n, n))
        sol = stokes_solve(exact['f'], exact['g'], exact['u'], grid, nu=nu, lam=lam, eta=eta,
                           stabilization=stabilization)
        uq = grid.interpolate(sol.u.T)
        ue = _vector_at_quadrature(exact['u'], grid)
        pe = grid.evaluate(exact['p'])
        error_u = np.sqrt(grid.integrate(np.sum(np.abs(uq - ue)**2, -1)))
        error_p = np.sqrt(grid.integrate(np.abs(grid.interpolate(sol.p) - pe)**2))
        rows.append(OrderedDict(n=n, h=1. / n, error_u=float(error_u), error_p=float(error_p),
                                residual=sol.residuals['system']))
    orders = convergence_orders([r['error_u'] for r in rows])
    for row, order in zip(rows, [float('nan')] + list(orders)):
        row['order_u'] = float(order)
    return rows


def stokes_order(rows):
    ''' least squares velocity order over every level of a convergence table '''
    return least_squares_order([r['h'] for r in rows], [r['error_u'] for r in rows])


def rejects_incompatible(grid: Grid, stabilization=STOKES_STABILIZATION,
                         compat_tol=COMPATIBILITY_TOL):
    ''' constant divergence data with zero boundary velocity must be refused '''
    try:
        stokes_solve(None, lambda x, y: np.ones_like(x), None, grid,
                     stabilization=stabilization, compat_tol=compat_tol)
    except CompatibilityError:
        return True
    return False


# ---------------- resolvent diagnostics ----------------
def _resolvent_data(pair: OperatorPair, beta, phi: StateVector, phi_star=None):
    if phi_star is None:
        phi_star = 1j * beta * phi - apply_generator(pair, phi)
    return phi_star


def traction_functional(pair: OperatorPair, beta, phi: StateVector, phi_star: StateVector):
    '''
    <sigma(u0) n - q0 n, v> on the nodal hats v at the boundary nodes, evaluated as
    (i beta u0 + eta u0 + U.grad u0 - u0*, v) + (sigma(u0), eps(v)) - (q0, div v)
    '''
    grid, b = pair.grid, pair.blocks
    q0 = pressure_decomposition(phi.p, grid).q0
    u, u_star = phi.u.ravel(), phi_star.u.ravel()
    Mu = sp.block_diag([b['M'], b['M']], format='csr')
    Cu = sp.block_diag([b['C'], b['C']], format='csr')
    full = (1j * beta + pair.params.eta) * (Mu @ u) + Cu @ u - Mu @ u_star \
        + b['A'] @ u - b['D'].T @ q0
    full = full.reshape(2, -1)
    return full.T[grid.boundary_nodes]


def med_report(pair: OperatorPair, beta, phi_star: StateVector, phi: StateVector, details=False):
    '''
    (|q0| + |sigma(u0) n - q0 n|_{-1/2}) / (sqrt(|phi| |phi*|) + |phi*| + |beta| |u0|)
    '''
    grid, gram = pair.grid, pair.gram
    q0 = pressure_decomposition(phi.p, grid).q0
    traction = hminushalf_norm(traction_functional(pair, beta, phi, phi_star), grid, functional=True)
    lhs = l2_norm(q0, grid) + traction
    norm, norm_star = gram.norm(phi), gram.norm(phi_star)
    rhs = np.sqrt(norm * norm_star) + norm_star + abs(beta) * l2_norm(phi.u, grid)
    if rhs == 0:
        raise ValueError('med ratio undefined for zero data and zero solution')
    ratio = float(lhs / rhs)
    if details:
        return OrderedDict(ratio=ratio, q0=l2_norm(q0, grid), traction=traction,
                           lhs=float(lhs), rhs=float(rhs))
    return ratio


def case1_decomposition(pair: OperatorPair, beta, phi: StateVector, phi_star=None,
                        stabilization=STOKES_STABILIZATION):
    '''
    u0 = u1 + u2 with
        grad q1 - div sigma(u1) + eta u1 = -i beta u0,           div u1 = 0,      u1 = 0
        grad q2 - div sigma(u2) + eta u2 = -U.grad u0 + u0*,     div u2 = div u0, u2 = u0
    The divergence data of the second problem is the stabilized divergence
    functional of (u0, q0) minus the load of the first, so the split is exact.
    '''
    grid, params, b = pair.grid, pair.params, pair.blocks
    phi_star = _resolvent_data(pair, beta, phi, phi_star)
    system = StokesSystem(grid, params.nu, params.lam, params.eta, stabilization)
    u0 = phi.u
    q0 = pressure_decomposition(phi.p, grid).q0

    first = stokes_solve(-1j * beta * u0, None, None, grid, system=system)

    Cu = sp.block_diag([b['C'], b['C']], format='csr')
    load = -(Cu @ u0.ravel()) + system.velocity_mass @ phi_star.u.ravel()
    div_load = system.continuity(u0, q0) - first.continuity_load
    second = stokes_solve(None, None, u0, grid, system=system,
                          momentum_load=load, div_load=div_load)

    scale_u = max(l2_norm(u0, grid), 1e-300)
    pressure_gap = pressure_decomposition(q0 - first.p - second.p, grid).q0
    trace = first.u.T[grid.boundary_nodes]
    return OrderedDict(
        first=(first.u, first.p), second=(second.u, second.p),
        velocity_additivity=l2_norm(u0 - first.u - second.u, grid) / scale_u,
        pressure_additivity=l2_norm(pressure_gap, grid) / max(l2_norm(q0, grid), 1e-300),
        first_trace=float(np.max(np.abs(trace))),
        norms=OrderedDict(u1_h1=h1_norm(first.u, grid), u2_h1=h1_norm(second.u, grid),
                          q1=l2_norm(first.p, grid), q2=l2_norm(second.p, grid)),
        residuals=OrderedDict(first=first.residuals['system'], second=second.residuals['system']))


class ChueshovVariable:
    def __init__(self, psi, N0, compatibility, residual):
        self.psi = psi
        self.N0 = N0
        self.compatibility = compatibility
        self.residual = residual


def chueshov_compatibility(p, w, grid: Grid):
    ''' (int p + int w, scale) '''
    p, w = np.asarray(p), np.asarray(w)
    value = np.sum(grid.mass @ p) + grid.beam.load @ w
    scale = np.sqrt(grid.measure) * l2_norm(p, grid) \
        + np.sqrt(grid.Lx) * np.sqrt(max(np.vdot(w, grid.beam.mass @ w).real, 0.))
    return value, scale


def chueshov_variable(p, w, grid: Grid, tol=COMPATIBILITY_TOL) -> ChueshovVariable:
    '''
    mean free psi with  -lap psi = p,  d psi/dn = w on the top edge, 0 elsewhere;
    N0 = grad psi by L2 projection
    '''
    value, scale = chueshov_compatibility(p, w, grid)
    if abs(value) > tol * max(scale, 1e-300) and scale > 0:
        raise CompatibilityError(value, msg=f'int p + int w = {abs(value):.3e}, state is not '
                                            f'orthogonal to the null vector')
    n = grid.n_nodes
    rhs = grid.mass @ np.asarray(p, dtype=complex)
    rhs[grid.top_nodes] += grid.beam.hat_load(np.asarray(w, dtype=complex))
    mean = grid.mass @ np.ones(n)
    matrix = sp.bmat([[grid.laplacian, sp.csr_matrix(mean[:, None])],
                      [sp.csr_matrix(mean[None, :]), None]], format='csc').astype(complex)
    sol = splu(matrix).solve(np.concatenate([rhs, [0.]]))
    psi = sol[:n]
    norm = np.linalg.norm(rhs)
    residual = float(np.linalg.norm(grid.laplacian @ psi - rhs) / norm) if norm > 0 else 0.

    D = divergence_matrix(grid)
    mass_lu = splu(grid.mass.tocsc())
    gx = D[:, :n] @ psi
    gy = D[:, n:] @ psi
    N0 = np.stack([lu_solve(mass_lu, gx), lu_solve(mass_lu, gy)])
    return ChueshovVariable(psi, N0, complex(value), residual)


def pressure_equation_check(pair: OperatorPair, beta, phi: StateVector, phi_star: StateVector,
                            details=False):
    '''
    i beta |p0|^2 = -(U.grad p0, p0) - (div u0, p0) + (p0*, p0) - tau |grad p0|^2
    '''
    b = pair.blocks
    p, u, p_star = phi.p, phi.u.ravel(), phi_star.p
    tau = pair.params.tau(pair.grid)
    lhs = 1j * beta * np.vdot(p, b['M'] @ p)
    terms = OrderedDict(convection=-np.vdot(p, b['C'] @ p),
                        divergence=-np.vdot(p, b['D'] @ u),
                        data=np.vdot(p, b['M'] @ p_star),
                        stabilization=-tau * np.vdot(p, b['L'] @ p))
    rhs = sum(terms.values())
    scale = max(abs(lhs), sum(abs(t) for t in terms.values()))
    residual = float(abs(lhs - rhs) / scale) if scale > 0 else 0.
    if details:
        return OrderedDict(residual=residual, lhs=complex(lhs),
                           **{k: complex(v) for k, v in terms.items()})
    return residual
