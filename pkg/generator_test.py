import os
import tempfile

import numpy as np
import tensorflow as tf
from scipy.io import mmread
from fields import complement_functional
from generator import *
from grid import GeometryConfig, build_grid


class GeneratorTest(tf.test.TestCase):
    def setUp(self):
        self.geometry = GeometryConfig(1., 1., 4, 4)
        self.params = PhysicalParams(eta=1., lam=0.5, nu=1.)
        self.pair = build_pair(self.geometry, self.params, 0.5)
        self.rng = np.random.default_rng(1)

    def test_physical_params(self):
        self.assertEqual(self.params, PhysicalParams.from_dict(self.params.to_dict()))
        self.assertEqual(self.params.to_dict()['lambda'], 0.5)
        for kwargs in ({'eta': 0.}, {'nu': -1.}, {'lam': -0.1}, {'stabilization': -1.},
                       {'eta': float('nan')}):
            with self.assertRaises(ConfigError):
                PhysicalParams(**kwargs)
        grid = build_grid(self.geometry)
        self.assertNear(self.params.tau(grid), 0.05 * 2 / 16, 1e-15)

    def test_ambient_field(self):
        grid = build_grid(GeometryConfig(2., 1., 4, 4))
        U = build_ambient_field(0.5, grid)
        self.assertEqual(U.symbolic_divergence, 0)
        x = np.linspace(0, 2, 7)
        self.assertAllClose(U.velocity(x, np.zeros_like(x)), np.zeros((7, 2)))
        self.assertAllClose(U.velocity(x, -np.ones_like(x)), np.zeros((7, 2)))
        y = np.linspace(-1, 0, 7)
        self.assertAllClose(U.velocity(np.zeros_like(y), y), np.zeros((7, 2)))
        self.assertAllClose(U.divergence(x, -0.3 * np.ones_like(x)), np.zeros(7))
        self.assertNear(build_ambient_field(1., grid).sup_norm, 2 * U.sup_norm, 1e-12)
        self.assertEqual(build_ambient_field(0., grid).sup_norm, 0.)

    def test_convection_is_skew(self):
        C = self.pair.blocks['C']
        self.assertAllClose((C + C.T).toarray(), np.zeros(C.shape), atol=1e-14)

    def test_dissipation_of_shear(self):
        grid = self.pair.grid
        n = grid.n_nodes
        u = np.stack([grid.coords[:, 1], np.zeros(n)])
        phi = StateVector(np.zeros(n), u, np.zeros(6), np.zeros(6))
        parts = dissipation_breakdown(phi, grid, self.params)
        self.assertNear(parts['strain'], 1., 1e-12)
        self.assertNear(parts['drag'], 1. / 3, 1e-12)
        self.assertNear(parts['stabilization'], 0., 1e-15)
        self.assertNear(dissipation(phi, grid, self.params), 1. + 1. / 3, 1e-12)

    def test_dissipation_identity(self):
        for amplitude in (0., 0.5, 2.):
            pair = build_pair(self.geometry, self.params, amplitude)
            for _ in range(10):
                phi = random_state(pair, self.rng, complex_valued=True, complement=False)
                d = dissipation(phi, pair.grid, pair.params)
                q = quadratic_form(pair, phi)
                self.assertLess(abs(q.real + d), 1e-11 * (energy(pair, phi) + d))

    def test_skew_terms(self):
        phi = random_state(self.pair, self.rng, complex_valued=True, complement=False)
        terms = skew_terms(phi, self.pair)
        self.assertEqual(set(terms), {'pressure_convection', 'velocity_convection',
                                      'pressure_velocity', 'bending'})
        self.assertNear(sum(terms.values()), quadratic_form(self.pair, phi).imag, 1e-10)

        adjoint = assemble_adjoint(self.pair)
        self.assertNear(sum(skew_terms(phi, adjoint).values()),
                        quadratic_form(adjoint, phi).imag, 1e-10)

    def test_null_space(self):
        pair = self.pair
        self.assertLess(pair.generator_residual(pair.null), 1e-10)
        self.assertLess(pair.adjoint().generator_residual(pair.null), 1e-10)
        self.assertLess(np.linalg.norm(pair.K @ pair.reduced_null), 1e-12)

    def test_adjoint(self):
        adjoint = assemble_adjoint(self.pair)
        self.assertAllClose(adjoint.K.toarray(), self.pair.K.toarray().T)
        self.assertAllClose(adjoint.G.toarray(), self.pair.G.toarray())
        self.assertTrue(adjoint.blocks['adjoint'])

    def test_reduction(self):
        pair = self.pair
        grid = pair.grid
        x = self.rng.standard_normal(pair.dimension)
        phi = pair.prolong(x)
        self.assertAllClose(pair.restrict(phi), x)
        self.assertAllClose(phi.u[0][grid.left_nodes], np.zeros(5))
        self.assertAllClose(phi.u[0][grid.right_nodes], np.zeros(5))
        self.assertAllClose(phi.u[1][grid.bottom_nodes], np.zeros(5))
        # the u2 trace on the elastic edge is the beam velocity
        self.assertAllClose(phi.u[1][grid.omega_interior], phi.w2[grid.beam.value_dofs])
        self.assertAllClose(phi.u[1][grid.top_nodes[[0, -1]]], np.zeros(2))

    def test_apply_generator(self):
        pair = self.pair
        x = self.rng.standard_normal(pair.dimension)
        out = apply_generator(pair, pair.prolong(x))
        self.assertAllClose(pair.G @ pair.restrict(out), pair.K @ x)

    def test_projection(self):
        pair = self.pair
        x = pair.project(self.rng.standard_normal(pair.dimension))
        self.assertNear(abs(pair.g_inner(x, pair.reduced_null)), 0., 1e-12)
        phi = random_state(pair, self.rng)
        self.assertNear(abs(complement_functional(phi, pair.grid)), 0., 1e-12)
        self.assertNear(energy(pair, phi), pair.gram.norm(phi)**2, 1e-12)

    def test_modal_state(self):
        coarse = build_pair(GeometryConfig(1., 1., 8, 8), self.params, 0.5)
        fine = build_pair(GeometryConfig(1., 1., 16, 16), self.params, 0.5)
        a = modal_state(coarse, np.random.default_rng(5), complement=False)
        b = modal_state(fine, np.random.default_rng(5), complement=False)
        # one field sampled on nested grids
        i, j = np.meshgrid(np.arange(9), np.arange(9))
        nodes_a, nodes_b = coarse.grid.node(i, j).ravel(), fine.grid.node(2 * i, 2 * j).ravel()
        self.assertAllClose(a.p[nodes_a], b.p[nodes_b])
        self.assertAllClose(a.u[:, nodes_a], b.u[:, nodes_b])
        self.assertAllClose(a.w1[coarse.grid.beam.value_dofs], b.w1[fine.grid.beam.value_dofs][1::2])
        self.assertAllClose(a.w2[coarse.grid.beam.slope_dofs], b.w2[fine.grid.beam.slope_dofs][1::2])
        self.assertAllClose(coarse.gram.norm(a), fine.gram.norm(b), rtol=0.2)

        phi = modal_state(self.pair, self.rng, complex_valued=True)
        self.assertLess(abs(complement_functional(phi, self.pair.grid)),
                        1e-10 * self.pair.gram.norm(phi))
        self.assertGreater(np.max(np.abs(phi.to_vector().imag)), 0.)
        self.assertAllClose(phi.u[1][self.pair.grid.omega_interior],
                            phi.w2[self.pair.grid.beam.value_dofs])

    def test_export_operators(self):
        with tempfile.TemporaryDirectory() as tmp:
            paths = export_operators(self.pair, tmp)
            self.assertEqual(sorted(paths), ['G', 'G_full', 'K', 'K_full', 'P'])
            G = mmread(paths['G'])
            self.assertAllClose(G.toarray(), self.pair.G.toarray(), rtol=1e-15, atol=1e-15)
            K = mmread(paths['K'])
            self.assertAllClose(K.toarray(), self.pair.K.toarray(), rtol=1e-15, atol=1e-15)


if __name__ == '__main__':
    os.environ['CUDA_VISIBLE_DEVICES'] = '-1'
    tf.test.main()
