import os

import numpy as np
import scipy.linalg as la
import tensorflow as tf
from generator import PhysicalParams, build_pair, random_state
from grid import GeometryConfig
from spectral import *


def dense_resolvent_norm(pair, beta):
    ''' |(i beta - A)^-1| in the G norm on the complement of the null vector '''
    G, K = pair.G.toarray(), pair.K.toarray()
    L = la.cholesky(G, lower=True)
    A = la.solve_triangular(L, la.solve_triangular(L, K.T, lower=True).T, lower=True)
    v0 = L.T @ pair.reduced_null
    Q = la.null_space(v0[None, :].conj())
    M = Q.conj().T @ (1j * beta * np.eye(len(G)) - A) @ Q
    return 1. / la.svdvals(M)[-1]


class SpectralTest(tf.test.TestCase):
    def setUp(self):
        self.pair = build_pair(GeometryConfig(1., 1., 4, 4), PhysicalParams(), 0.5)
        self.rng = np.random.default_rng(2)
        values = la.eigvals(self.pair.K.toarray(), self.pair.G.toarray())
        self.dense = values[np.isfinite(values)]

    def test_solve_resolvent(self):
        pair = self.pair
        for beta in (0., 1.5, -3.):
            rhs = random_state(pair, self.rng, complex_valued=True)
            phi = solve_resolvent(pair, beta, rhs)
            x, r = pair.restrict(phi), pair.restrict(rhs)
            lhs = 1j * beta * (pair.G @ x) - pair.K @ x
            self.assertLess(np.linalg.norm(lhs - pair.G @ r) / np.linalg.norm(pair.G @ r), 1e-10)
            self.assertNear(abs(pair.g_inner(x, pair.reduced_null)), 0., 1e-10)

        with self.assertRaises(SolverError):
            solve_resolvent(pair, 1., random_state(pair, self.rng), tol=1e-300)

    def test_adjoint_solve(self):
        pair = self.pair
        solver = ResolventSolver(pair, 2j)
        x = pair.project(self.rng.standard_normal(pair.dimension) + 0j)
        y = pair.project(self.rng.standard_normal(pair.dimension) + 0j)
        self.assertNear(abs(pair.g_inner(solver.solve(x), y) - pair.g_inner(x, solver.adjoint_solve(y))),
                        0., 1e-10)

    def test_resolvent_norm(self):
        for beta in (0., 1., -2.):
            sample = resolvent_norm(self.pair, beta, tol=1e-8, maxiter=500)
            self.assertTrue(sample.converged)
            exact = dense_resolvent_norm(self.pair, beta)
            self.assertAllClose(sample.norm_estimate, exact, rtol=1e-3)

    def test_resolvent_sweep(self):
        result = resolvent_sweep(self.pair, 4., 5, extra=(0., 0.5))
        self.assertEqual(len(result.rows()), 11)
        self.assertAllClose(result.betas, np.sort(-result.betas))
        self.assertAllClose(result.estimates, result.estimates[::-1])
        self.assertFalse(result.partial)
        self.assertEqual(result.sup_estimate, np.max(result.estimates))
        self.assertEqual(result.summary()['n_samples'], 11)
        self.assertEqual(list(result.rows()[0]), ['beta', 'norm_estimate', 'iterations', 'converged'])

        with self.assertRaises(ValueError):
            resolvent_sweep(self.pair, 0., 5)
        with self.assertRaises(ValueError):
            resolvent_sweep(self.pair, 1., 2)

    def test_sweep_betas(self):
        self.assertAllClose(sweep_betas(50., 101, DEFAULT_EXTRA_BETAS), np.linspace(0, 50, 101))
        self.assertEqual(len(sweep_betas(1., 3, (0.25, 7.))), 4)

    def test_eigs_near(self):
        shift = 1j
        report = eigs_near(self.pair, shift, k=4)
        self.assertEqual(report.dropped, 0)
        expected = self.dense[np.argsort(np.abs(self.dense - shift))[:4]]
        self.assertAllClose(report.eigenvalues, expected, atol=1e-8)
        self.assertTrue(np.all(report.backward_errors <= EIG_TOL))
        self.assertEqual(len(report.rows()), 4)

    def test_deflation(self):
        plain = eigs_near(self.pair, 0.01j, k=3)
        self.assertLess(np.min(np.abs(plain.eigenvalues)), 1e-8)
        deflated = eigs_near(self.pair, 0.01j, k=3, deflate=True, return_vectors=True)
        self.assertGreater(np.min(np.abs(deflated.eigenvalues)), 1e-6)
        for lam, v in zip(deflated.eigenvalues, deflated.vectors):
            self.assertNear(self.pair.g_norm(v), 1., 1e-10)
            self.assertLess(np.linalg.norm(self.pair.K @ v - lam * (self.pair.G @ v)), 1e-8)

    def test_eigenvectors(self):
        pair = self.pair
        x0 = pair.reduced_null
        up = eigs_near(pair, 2j, k=4, deflate=True, return_vectors=True)
        down = eigs_near(pair, -2j, k=4, deflate=True, return_vectors=True)
        self.assertGreater(len(up.eigenvalues), 1)
        for lam, v in zip(up.eigenvalues, up.vectors):
            self.assertLess(abs(pair.g_inner(v, x0)) / pair.g_norm(x0), 1e-8)
            w = v.conj()
            self.assertLess(np.linalg.norm(pair.K @ w - lam.conjugate() * (pair.G @ w)), 1e-8)
        # the pencil is real, so the set near -2i mirrors the set near 2i
        self.assertAllClose(np.sort_complex(up.eigenvalues[:2].conj()),
                            np.sort_complex(down.eigenvalues[:2]), atol=1e-8)

    def test_spectral_abscissa(self):
        abscissa, values = spectral_abscissa_complement(self.pair, return_eigenvalues=True)
        self.assertLess(abscissa, 0.)
        nonzero = self.dense[np.abs(self.dense) > 1e-8]
        self.assertLess(np.max(nonzero.real), 0.)
        self.assertNear(abscissa, np.max(nonzero.real), 1e-6)
        self.assertTrue(np.all(values.real < 0))

    def test_resolvent_identity(self):
        self.assertLess(resolvent_identity_residual(self.pair, 0.5, 2., self.rng), 1e-8)

    def test_unrestricted_gain(self):
        small = unrestricted_gain(self.pair, 1e-3, np.random.default_rng(0))
        large = unrestricted_gain(self.pair, 1e-1, np.random.default_rng(0))
        self.assertGreater(small, 10 * large)


if __name__ == '__main__':
    os.environ['CUDA_VISIBLE_DEVICES'] = '-1'
    tf.test.main()
