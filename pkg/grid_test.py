import os

import numpy as np
import tensorflow as tf
from grid import *


class GridTest(tf.test.TestCase):
    def setUp(self):
        self.grid = build_grid(GeometryConfig(1., 1., 4, 4))

    def test_geometry_config(self):
        config = GeometryConfig(2., 1., 8, 4)
        self.assertEqual(config, GeometryConfig.from_dict(config.to_dict()))
        self.assertEqual(config.refined(1).to_dict(), {'Lx': 2., 'Ly': 1., 'nx': 16, 'ny': 8})

        with self.assertRaises(GeometryError):
            GeometryConfig(0., 1., 8, 8)
        with self.assertRaises(GeometryError):
            GeometryConfig(1., -1., 8, 8)
        with self.assertRaises(GeometryError):
            GeometryConfig(1., 1., 3, 8)
        with self.assertRaises(ValueError):
            GeometryConfig(1., 1., 8, 4.5)

    def test_nodes(self):
        grid = self.grid
        self.assertEqual(grid.n_nodes, 25)
        self.assertEqual(grid.n_cells, 16)
        self.assertAllClose(grid.coords[grid.node(0, 0)], [0., -1.])
        self.assertAllClose(grid.coords[grid.node(4, 4)], [1., 0.])
        self.assertAllClose(grid.coords[grid.top_nodes][:, 1], np.zeros(5))

    def test_mass_and_laplacian(self):
        grid = build_grid(GeometryConfig(2., 0.5, 4, 6))
        ones = np.ones(grid.n_nodes)
        self.assertNear(ones @ (grid.mass @ ones), 1., 1e-12)
        self.assertAllClose(grid.laplacian @ ones, np.zeros(grid.n_nodes), atol=1e-12)

        # int x^2 over (0,2) x (-1/2,0) with a bilinear interpolant of x
        x = grid.coords[:, 0]
        self.assertNear(x @ (grid.mass @ x), 8. / 3 * 0.5, 1e-12)
        # int |grad x|^2
        self.assertNear(x @ (grid.laplacian @ x), 1., 1e-12)

    def test_quadrature(self):
        grid = self.grid
        self.assertNear(grid.integrate(np.ones(grid.quad_points.shape[:2])), 1., 1e-12)
        values = grid.evaluate(lambda x, y: x * y**2)
        self.assertNear(grid.integrate(values), 1. / 6, 1e-12)

        nodal = 2 * grid.coords[:, 0] - grid.coords[:, 1]
        gx, gy = grid.gradient(nodal)
        self.assertAllClose(gx, 2 * np.ones_like(gx))
        self.assertAllClose(gy, -np.ones_like(gy))
        self.assertAllClose(grid.interpolate(nodal),
                            2 * grid.quad_points[..., 0] - grid.quad_points[..., 1])

    def test_boundary_curve(self):
        grid = self.grid
        self.assertEqual(grid.n_boundary, 16)
        self.assertEqual(len(np.unique(grid.boundary_nodes)), 16)
        self.assertNear(grid.perimeter, 4., 1e-12)
        self.assertEqual(int(np.sum(grid.boundary_tags == 'omega')), 3)
        self.assertEqual(len(grid.s_nodes), 13)

        # corners belong to the rigid walls
        corner = list(grid.boundary_nodes).index(grid.node(0, 4))
        self.assertAllClose(grid.boundary_normals[corner], [-1., 0.])
        corner = list(grid.boundary_nodes).index(grid.node(4, 0))
        self.assertAllClose(grid.boundary_normals[corner], [0., -1.])

        tangents = boundary_tangential_basis(grid)
        self.assertAllClose(np.sum(tangents * grid.boundary_normals, -1), np.zeros(16))
        self.assertAllClose(np.linalg.norm(tangents, axis=-1), np.ones(16))

    def test_boundary_flux(self):
        grid = self.grid
        # div (x, y) = 2, flux = 2 * |domain|
        self.assertNear(grid.boundary_flux(grid.coords), 2., 1e-12)
        self.assertNear(grid.boundary_flux(np.ones((grid.n_nodes, 2))), 0., 1e-12)

    def test_boundary_curve_matrices(self):
        mass, stiff = self.grid.boundary_curve_matrices()
        ones = np.ones(self.grid.n_boundary)
        self.assertNear(ones @ mass @ ones, 4., 1e-12)
        self.assertAllClose(stiff @ ones, np.zeros_like(ones), atol=1e-12)

    def test_beam(self):
        beam = BeamMesh(1., 8)
        self.assertEqual(beam.n_dofs, 14)
        # clamped beam under unit load: deflection x^2 (1-x)^2 / 24, exact at the nodes
        w = np.linalg.solve(beam.stiffness.toarray(), beam.load)
        self.assertNear(beam.evaluate(w, 0.5)[0], 1. / 384, 1e-12)
        x = np.arange(9) / 8
        self.assertAllClose(beam.evaluate(w, x), x**2 * (1 - x)**2 / 24, atol=1e-12)
        self.assertNear(w @ beam.stiffness @ w, (1 - beam.h**4) / 720, 1e-12)
        self.assertNear(beam.load @ w, (1 - beam.h**4) / 720, 1e-12)

    def test_beam_hat_load(self):
        beam = BeamMesh(1., 4)
        coeffs = np.zeros(beam.n_dofs)
        coeffs[beam.value_dofs] = 1.
        # interior hats of a function equal to 1 at interior nodes
        self.assertNear(np.sum(beam.hat_load(coeffs)), beam.load @ coeffs, 1e-12)
        self.assertEqual(beam.hat_load(coeffs).shape, (5,))


if __name__ == '__main__':
    os.environ['CUDA_VISIBLE_DEVICES'] = '-1'
    tf.test.main()
