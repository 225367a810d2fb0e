from functools import cached_property

import numpy as np
import scipy.sparse as sp
from numpy.polynomial.legendre import leggauss

from utils import GeometryError


# reference bilinear nodes, counter-clockwise from the lower-left corner
_REF_NODES = np.array([[-1., -1.], [1., -1.], [1., 1.], [-1., 1.]])
QUAD_ORDER = 3


class GeometryConfig:
    ''' flow rectangle (0,Lx) x (-Ly,0) with elastic top edge '''
    def __init__(self, Lx=1., Ly=1., nx=8, ny=8):
        self.Lx = float(Lx)
        self.Ly = float(Ly)
        self.nx = nx
        self.ny = ny
        self.validate()

    def validate(self):
        if not (np.isfinite(self.Lx) and np.isfinite(self.Ly)) \
                or self.Lx <= 0 or self.Ly <= 0:
            raise GeometryError(self.Lx, self.Ly,
                                msg=f'Lx, Ly must be positive, got ({self.Lx}, {self.Ly})')
        for name in ('nx', 'ny'):
            value = getattr(self, name)
            if isinstance(value, bool) or int(value) != value or value < 4:
                raise GeometryError(value, msg=f'{name} must be an integer >= 4, got {value}')
            setattr(self, name, int(value))

    def refined(self, level=1):
        return GeometryConfig(self.Lx, self.Ly, self.nx * 2**level, self.ny * 2**level)

    def to_dict(self):
        return {'Lx': self.Lx, 'Ly': self.Ly, 'nx': self.nx, 'ny': self.ny}

    @classmethod
    def from_dict(cls, config: dict):
        return cls(**config)

    def __eq__(self, other):
        return isinstance(other, GeometryConfig) and self.to_dict() == other.to_dict()

    def __repr__(self):
        return f'GeometryConfig({self.to_dict()})'


class BeamMesh:
    '''
    Clamped cubic Hermite elements on the top edge.
    Unknowns are (value, slope) at the interior nodes 1..n-1, ordered
    [v_1, s_1, v_2, s_2, ...]; both end nodes are clamped.
    '''
    def __init__(self, length, n_elements):
        self.length = length
        self.n_elements = n_elements
        self.h = length / n_elements
        self.n_dofs = 2 * (n_elements - 1)

    def _element_dofs(self, e):
        # -1 marks a clamped dof
        left = [2 * (e - 1), 2 * (e - 1) + 1] if e > 0 else [-1, -1]
        right = [2 * e, 2 * e + 1] if e < self.n_elements - 1 else [-1, -1]
        return np.array(left + right)

    def _assemble(self, local):
        rows, cols, vals = [], [], []
        for e in range(self.n_elements):
            dofs = self._element_dofs(e)
            for a in range(4):
                for b in range(4):
                    if dofs[a] >= 0 and dofs[b] >= 0:
                        rows.append(dofs[a])
                        cols.append(dofs[b])
                        vals.append(local[a, b])
        return sp.csr_matrix((vals, (rows, cols)), shape=(self.n_dofs, self.n_dofs))

    def element_stiffness(self):
        h = self.h
        return np.array([[12., 6 * h, -12., 6 * h],
                         [6 * h, 4 * h * h, -6 * h, 2 * h * h],
                         [-12., -6 * h, 12., -6 * h],
                         [6 * h, 2 * h * h, -6 * h, 4 * h * h]]) / h**3

    def element_mass(self):
        h = self.h
        return np.array([[156., 22 * h, 54., -13 * h],
                         [22 * h, 4 * h * h, 13 * h, -3 * h * h],
                         [54., 13 * h, 156., -22 * h],
                         [-13 * h, -3 * h * h, -22 * h, 4 * h * h]]) * h / 420.

    @cached_property
    def stiffness(self):
        ''' bending form (w'', v'') '''
        return self._assemble(self.element_stiffness())

    @cached_property
    def mass(self):
        return self._assemble(self.element_mass())

    @cached_property
    def load(self):
        ''' coefficients of the functional w -> int w '''
        h = self.h
        local = np.array([h / 2, h * h / 12, h / 2, -h * h / 12])
        out = np.zeros(self.n_dofs)
        for e in range(self.n_elements):
            dofs = self._element_dofs(e)
            mask = dofs >= 0
            np.add.at(out, dofs[mask], local[mask])
        return out

    @property
    def value_dofs(self):
        return np.arange(0, self.n_dofs, 2)

    @property
    def slope_dofs(self):
        return np.arange(1, self.n_dofs, 2)

    @staticmethod
    def hermite_basis(t, h):
        return np.stack([1 - 3 * t**2 + 2 * t**3,
                         h * (t - 2 * t**2 + t**3),
                         3 * t**2 - 2 * t**3,
                         h * (-t**2 + t**3)], -1)

    def _full_coefficients(self, coeffs):
        full = np.zeros(2 * (self.n_elements + 1), dtype=np.result_type(coeffs, float))
        full[2:-2] = coeffs
        return full

    def evaluate(self, coeffs, x):
        ''' beam deflection at positions x in [0, length] '''
        x = np.atleast_1d(np.asarray(x, dtype=float))
        full = self._full_coefficients(np.asarray(coeffs))
        e = np.clip(np.floor(x / self.h).astype(int), 0, self.n_elements - 1)
        t = x / self.h - e
        basis = self.hermite_basis(t, self.h)
        local = np.stack([full[2 * e], full[2 * e + 1], full[2 * e + 2], full[2 * e + 3]], -1)
        return np.sum(basis * local, -1)

    def hat_load(self, coeffs):
        '''
        int w * chi_i over the edge for the piecewise linear hats chi_i
        of the n+1 edge nodes (3 point Gauss is exact for cubic x linear)
        '''
        full = self._full_coefficients(np.asarray(coeffs))
        points, weights = leggauss(QUAD_ORDER)
        t = (points + 1) / 2
        weights = weights * self.h / 2
        basis = self.hermite_basis(t, self.h)
        out = np.zeros(self.n_elements + 1, dtype=full.dtype)
        for e in range(self.n_elements):
            w = basis @ full[2 * e:2 * e + 4]
            out[e] += np.sum(weights * w * (1 - t))
            out[e + 1] += np.sum(weights * w * t)
        return out


class Grid:
    '''
    Structured bilinear grid of (0,Lx) x (-Ly,0).
    Node (i, j) has index j * (nx + 1) + i, x = Lx*i/nx, y = -Ly + Ly*j/ny.
    The top row j = ny is the elastic edge; corners belong to the rigid part
    for normals and tangents.
    '''
    def __init__(self, config: GeometryConfig):
        self.config = config
        self.Lx, self.Ly = config.Lx, config.Ly
        self.nx, self.ny = config.nx, config.ny
        self.hx = self.Lx / self.nx
        self.hy = self.Ly / self.ny
        self.n_nodes = (self.nx + 1) * (self.ny + 1)
        self.measure = self.Lx * self.Ly

        self.x = self.Lx * np.arange(self.nx + 1) / self.nx
        self.y = self.Ly * np.arange(self.ny + 1) / self.ny - self.Ly
        X, Y = np.meshgrid(self.x, self.y)
        self.coords = np.stack([X.ravel(), Y.ravel()], -1)

        i, j = np.meshgrid(np.arange(self.nx), np.arange(self.ny))
        i, j = i.ravel(), j.ravel()
        self.cells = np.stack([self.node(i, j), self.node(i + 1, j),
                               self.node(i + 1, j + 1), self.node(i, j + 1)], -1)
        self.n_cells = len(self.cells)

        self._build_quadrature()
        self._build_boundary()
        self.beam = BeamMesh(self.Lx, self.nx)

    def node(self, i, j):
        return j * (self.nx + 1) + i

    # ---------------- quadrature ----------------
    def _build_quadrature(self):
        points, weights = leggauss(QUAD_ORDER)
        xi, eta = np.meshgrid(points, points)
        xi, eta = xi.ravel(), eta.ravel()
        self.quad_weights = np.outer(weights, weights).ravel() * self.hx * self.hy / 4
        self.ref_points = np.stack([xi, eta], -1)

        self.shape = 0.25 * (1 + xi[:, None] * _REF_NODES[:, 0]) \
            * (1 + eta[:, None] * _REF_NODES[:, 1])
        self.dshape_x = 0.25 * _REF_NODES[:, 0] * (1 + eta[:, None] * _REF_NODES[:, 1]) \
            * 2 / self.hx
        self.dshape_y = 0.25 * (1 + xi[:, None] * _REF_NODES[:, 0]) * _REF_NODES[:, 1] \
            * 2 / self.hy

        origin = self.coords[self.cells[:, 0]]
        local = np.stack([(1 + xi) * self.hx / 2, (1 + eta) * self.hy / 2], -1)
        self.quad_points = origin[:, None, :] + local[None]

    def element_matrix(self, left, right):
        ''' int left_a * right_b over one cell, left/right in {N, dx, dy} '''
        table = {'N': self.shape, 'dx': self.dshape_x, 'dy': self.dshape_y}
        return np.einsum('q,qa,qb->ab', self.quad_weights, table[left], table[right])

    def assemble_cells(self, local):
        ''' scatter (4,4) or (n_cells,4,4) element matrices into a sparse matrix '''
        local = np.broadcast_to(local, (self.n_cells, 4, 4))
        rows = np.repeat(self.cells, 4, axis=1).ravel()
        cols = np.tile(self.cells, (1, 4)).ravel()
        return sp.csr_matrix((local.ravel(), (rows, cols)),
                             shape=(self.n_nodes, self.n_nodes))

    def assemble_load(self, values_at_q):
        ''' int f N_i for f given at quadrature points, (n_cells, 9[, k]) '''
        local = np.einsum('q,qa,cq...->ca...', self.quad_weights, self.shape, values_at_q)
        out = np.zeros((self.n_nodes,) + local.shape[2:], dtype=local.dtype)
        np.add.at(out, self.cells, local)
        return out

    def interpolate(self, nodal):
        ''' nodal values -> values at quadrature points '''
        return np.einsum('qa,ca...->cq...', self.shape, np.asarray(nodal)[self.cells])

    def gradient(self, nodal):
        ''' nodal values -> (d/dx, d/dy) at quadrature points '''
        local = np.asarray(nodal)[self.cells]
        return (np.einsum('qa,ca...->cq...', self.dshape_x, local),
                np.einsum('qa,ca...->cq...', self.dshape_y, local))

    def integrate(self, values_at_q):
        return np.einsum('q,cq...->...', self.quad_weights, values_at_q)

    def evaluate(self, func):
        ''' callable f(x, y) -> values at quadrature points '''
        return func(self.quad_points[..., 0], self.quad_points[..., 1])

    @cached_property
    def mass(self):
        return self.assemble_cells(self.element_matrix('N', 'N'))

    @cached_property
    def laplacian(self):
        return self.assemble_cells(self.element_matrix('dx', 'dx') + self.element_matrix('dy', 'dy'))

    # ---------------- boundary ----------------
    def _build_boundary(self):
        nx, ny = self.nx, self.ny
        self.left_nodes = self.node(0, np.arange(ny + 1))
        self.right_nodes = self.node(nx, np.arange(ny + 1))
        self.bottom_nodes = self.node(np.arange(nx + 1), 0)
        self.top_nodes = self.node(np.arange(nx + 1), ny)
        self.omega_nodes = self.top_nodes
        self.omega_interior = self.top_nodes[1:-1]

        # closed curve, counter-clockwise from (0, -Ly)
        curve = np.concatenate([self.bottom_nodes[:-1], self.right_nodes[:-1],
                                self.top_nodes[::-1][:-1], self.left_nodes[::-1][:-1]])
        self.boundary_nodes = curve
        self.n_boundary = len(curve)

        normals = np.zeros((self.n_nodes, 2))
        normals[self.bottom_nodes] = (0., -1.)
        normals[self.top_nodes] = (0., 1.)
        normals[self.left_nodes[1:]] = (-1., 0.)
        normals[self.right_nodes[1:]] = (1., 0.)
        self.boundary_normals = normals[curve]

        tags = np.full(self.n_nodes, '', dtype=object)
        tags[curve] = 'S'
        tags[self.omega_interior] = 'omega'
        self.boundary_tags = tags[curve]
        self.s_nodes = curve[self.boundary_tags == 'S']

        start = self.coords[curve]
        stop = self.coords[np.roll(curve, -1)]
        self.boundary_edge_lengths = np.linalg.norm(stop - start, axis=-1)
        self.perimeter = float(np.sum(self.boundary_edge_lengths))

    @property
    def omega_normals(self):
        return np.tile([0., 1.], (len(self.omega_nodes), 1))

    def boundary_curve_matrices(self):
        ''' P1 mass and Laplace-Beltrami stiffness on the closed boundary curve '''
        n = self.n_boundary
        mass = np.zeros((n, n))
        stiff = np.zeros((n, n))
        for k, length in enumerate(self.boundary_edge_lengths):
            idx = np.array([k, (k + 1) % n])
            mass[np.ix_(idx, idx)] += length / 6 * np.array([[2., 1.], [1., 2.]])
            stiff[np.ix_(idx, idx)] += np.array([[1., -1.], [-1., 1.]]) / length
        return mass, stiff

    def boundary_flux(self, nodal_vector):
        ''' closed-curve integral of phi . n for a nodal P1 trace phi '''
        phi = np.asarray(nodal_vector)[self.boundary_nodes]
        total = 0.
        nb = self.n_boundary
        for k, length in enumerate(self.boundary_edge_lengths):
            a, b = self.boundary_nodes[k], self.boundary_nodes[(k + 1) % nb]
            edge = self.coords[b] - self.coords[a]
            normal = np.array([edge[1], -edge[0]]) / length
            total = total + length / 2 * (phi[k] + phi[(k + 1) % nb]) @ normal
        return total


def build_grid(config: GeometryConfig) -> Grid:
    if not isinstance(config, GeometryConfig):
        config = GeometryConfig.from_dict(config)
    config.validate()
    return Grid(config)


def boundary_tangential_basis(grid: Grid):
    ''' unit tangents (n_y, -n_x) in boundary-curve order '''
    normals = grid.boundary_normals
    return np.stack([normals[:, 1], -normals[:, 0]], -1)
