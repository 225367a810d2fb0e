import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import eigsh, splu

from grid import Grid
from utils import AssemblyError, ShapeError, complex_pairs, from_complex_pairs


class StateLayout:
    '''
    Block sizes of (p, u1, u2, w1, w2) in the full coefficient vector.
    w1 and w2 both carry clamped Hermite (value, slope) pairs, 2 (nx - 1) entries each;
    a w2 with one value per interior top node would have nx - 1. On the 4 x 4 grid the
    full vector has 3 * 25 + 6 + 6 = 87 entries instead of 3 * 25 + 6 + 3 = 84.
    '''
    def __init__(self, grid: Grid):
        self.n_nodes = grid.n_nodes
        self.n_beam = grid.beam.n_dofs
        sizes = [self.n_nodes, self.n_nodes, self.n_nodes, self.n_beam, self.n_beam]
        offsets = np.concatenate([[0], np.cumsum(sizes)])
        self.slices = {name: slice(offsets[k], offsets[k + 1])
                       for k, name in enumerate(('p', 'u1', 'u2', 'w1', 'w2'))}
        self.slices['u'] = slice(offsets[1], offsets[3])
        self.size = int(offsets[-1])

    def __eq__(self, other):
        return isinstance(other, StateLayout) \
            and (self.n_nodes, self.n_beam) == (other.n_nodes, other.n_beam)


class StateVector:
    '''
    Discrete state (p, u, w1, w2).
    p: (n_nodes,), u: (2, n_nodes), w1, w2: clamped Hermite coefficients.
    '''
    def __init__(self, p, u, w1, w2):
        self.p = np.asarray(p, dtype=complex)
        self.u = np.asarray(u, dtype=complex).reshape(2, -1)
        self.w1 = np.asarray(w1, dtype=complex)
        self.w2 = np.asarray(w2, dtype=complex)
        if self.u.shape[1] != self.p.shape[0] or self.w1.shape != self.w2.shape:
            raise ShapeError(msg=f'inconsistent block sizes p{self.p.shape} '
                                 f'u{self.u.shape} w1{self.w1.shape} w2{self.w2.shape}')
        if not np.all(np.isfinite(self.to_vector())):
            raise ShapeError(msg='state vector has non finite entries')

    @classmethod
    def zeros(cls, layout: StateLayout):
        return cls(np.zeros(layout.n_nodes), np.zeros((2, layout.n_nodes)),
                   np.zeros(layout.n_beam), np.zeros(layout.n_beam))

    @classmethod
    def from_vector(cls, vector, layout: StateLayout):
        vector = np.asarray(vector)
        if vector.shape != (layout.size,):
            raise ShapeError(msg=f'vector of size {vector.shape} does not match layout {layout.size}')
        s = layout.slices
        return cls(vector[s['p']], vector[s['u']], vector[s['w1']], vector[s['w2']])

    def to_vector(self):
        return np.concatenate([self.p, self.u.ravel(), self.w1, self.w2])

    @property
    def size(self):
        return self.p.size + self.u.size + self.w1.size + self.w2.size

    def conj(self):
        return StateVector(self.p.conj(), self.u.conj(), self.w1.conj(), self.w2.conj())

    def __add__(self, other):
        return StateVector(self.p + other.p, self.u + other.u,
                           self.w1 + other.w1, self.w2 + other.w2)

    def __sub__(self, other):
        return self + (-1) * other

    def __mul__(self, scalar):
        return StateVector(scalar * self.p, scalar * self.u, scalar * self.w1, scalar * self.w2)

    __rmul__ = __mul__

    def __neg__(self):
        return -1 * self

    def to_dict(self):
        return {'p': complex_pairs(self.p), 'u': complex_pairs(self.u.ravel()),
                'w1': complex_pairs(self.w1), 'w2': complex_pairs(self.w2)}

    @classmethod
    def from_dict(cls, content: dict):
        return cls(from_complex_pairs(content['p']), from_complex_pairs(content['u']),
                   from_complex_pairs(content['w1']), from_complex_pairs(content['w2']))


class GramMatrix:
    ''' block diagonal energy Gram: pressure mass, velocity mass, bending stiffness, beam mass '''
    def __init__(self, grid: Grid):
        self.grid = grid
        self.layout = StateLayout(grid)
        self.pressure_mass = grid.mass
        self.velocity_mass = sp.block_diag([grid.mass, grid.mass], format='csr')
        self.bending = grid.beam.stiffness
        self.beam_mass = grid.beam.mass
        self.matrix = sp.block_diag([self.pressure_mass, self.velocity_mass,
                                     self.bending, self.beam_mass], format='csr')

    @property
    def shape(self):
        return self.matrix.shape

    def inner(self, a: StateVector, b: StateVector):
        return energy_inner_product(a, b, self)

    def norm(self, a: StateVector):
        return float(np.sqrt(max(energy_inner_product(a, a, self).real, 0.)))


def energy_inner_product(a: StateVector, b: StateVector, G: GramMatrix):
    ''' (a, b)_G = b^H G a '''
    va, vb = a.to_vector(), b.to_vector()
    if va.shape != vb.shape or va.shape[0] != G.shape[0]:
        raise ShapeError(msg=f'size mismatch: {va.shape}, {vb.shape} vs Gram {G.shape}')
    return complex(np.vdot(vb, G.matrix @ va))


def bending_solve(G: GramMatrix, rhs):
    try:
        return splu(G.bending.tocsc()).solve(np.asarray(rhs))
    except RuntimeError as e:
        raise AssemblyError(msg=f'singular bending operator: {e}')


def null_vector(G: GramMatrix, K=None, tol=1e-10) -> StateVector:
    '''
    (1, 0, A^-1(1), 0) with A the clamped bending operator.
    K is an assembled OperatorPair; when given, |A phi0|_G / |phi0|_G is checked.
    '''
    layout = G.layout
    w1 = bending_solve(G, G.grid.beam.load)
    phi0 = StateVector(np.ones(layout.n_nodes), np.zeros((2, layout.n_nodes)),
                       w1, np.zeros(layout.n_beam))
    if K is not None:
        residual = K.generator_residual(phi0)
        if residual > tol:
            raise AssemblyError(residual, msg=f'null vector residual {residual:.3e} exceeds {tol:.1e}')
    return phi0


def complement_functional(phi: StateVector, grid: Grid):
    ''' int p + int w1; zero exactly on the orthogonal complement of the null vector '''
    value = np.sum(grid.mass @ phi.p) + grid.beam.load @ phi.w1
    return value.real if abs(value.imag) == 0. else complex(value)


def project_complement(phi: StateVector, phi0: StateVector, G: GramMatrix) -> StateVector:
    coef = energy_inner_product(phi, phi0, G) / energy_inner_product(phi0, phi0, G)
    return phi - coef * phi0


def gram_min_eigenvalue(G: GramMatrix):
    ''' smallest eigenvalue of each Gram block (the block minimum is the smallest of G) '''
    values = {}
    for name, block in (('pressure', G.pressure_mass), ('velocity', G.velocity_mass),
                        ('bending', G.bending), ('beam_mass', G.beam_mass)):
        if block.shape[0] <= 16:
            values[name] = float(np.linalg.eigvalsh(block.toarray())[0])
        else:
            values[name] = float(eigsh(block.tocsc(), k=1, sigma=0, which='LM',
                                       return_eigenvectors=False)[0])
    values['min'] = min(values.values())
    return values
