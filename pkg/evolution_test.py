import os

import numpy as np
import tensorflow as tf
from evolution import *
from fields import complement_functional
from generator import PhysicalParams, build_pair
from grid import GeometryConfig
from spectral import spectral_abscissa_complement


class EvolutionTest(tf.test.TestCase):
    def setUp(self):
        self.pair = build_pair(GeometryConfig(1., 1., 4, 4), PhysicalParams(), 0.5)

    def test_random_initial_state(self):
        phi = random_initial_state(self.pair, 3)
        self.assertNear(self.pair.gram.norm(phi), 1., 1e-12)
        self.assertNear(abs(complement_functional(phi, self.pair.grid)), 0., 1e-12)
        self.assertAllEqual(random_initial_state(self.pair, 3, smoothing=0).to_vector(),
                            phi.to_vector())
        self.assertNotAllClose(random_initial_state(self.pair, 4).to_vector(), phi.to_vector())

        smooth = random_initial_state(self.pair, 3, smoothing=2)
        self.assertNear(self.pair.gram.norm(smooth), 1., 1e-12)
        self.assertNear(abs(complement_functional(smooth, self.pair.grid)), 0., 1e-12)
        self.assertNotAllClose(smooth.to_vector(), phi.to_vector())

    def test_crank_nicolson(self):
        with self.assertRaises(ValueError):
            CrankNicolson(self.pair, 0.)
        stepper = CrankNicolson(self.pair, 0.1)
        phi = random_initial_state(self.pair, 0)
        x = self.pair.restrict(phi)
        self.assertAllClose(self.pair.restrict(step(self.pair, phi, 0.1, stepper)), stepper.advance(x))
        # complex data evolve componentwise
        z = stepper.advance(x + 2j * x)
        self.assertAllClose(z, stepper.advance(x) * (1 + 2j))

    def test_simulate(self):
        phi = random_initial_state(self.pair, 0, smoothing=2)
        record = simulate(self.pair, phi, 1., 0.1)
        self.assertEqual(len(record.times), 11)
        self.assertNear(record.times[-1], 1., 1e-12)
        self.assertNear(record.energies[0], 1., 1e-12)
        self.assertTrue(np.all(np.diff(record.energies) <= 1e-12 * record.energies[:-1]))
        self.assertLess(np.max(record.complement_defect), 1e-12)
        self.assertEqual(list(record.rows()[0]),
                         ['t', 'energy', 'dissipation_integral', 'complement_defect'])
        self.assertNear(record.dissipation_integral[0], 0., 0.)

        with self.assertRaises(ValueError):
            simulate(self.pair, phi, 0., 0.1)

    def test_steady_state(self):
        pair = self.pair
        x0 = pair.reduced_null
        self.assertAllClose(pair.restrict(step(pair, pair.null, 0.1)), x0,
                            rtol=1e-9, atol=1e-9 * np.max(np.abs(x0)))
        record = simulate(pair, pair.null, 1., 0.1, startup_steps=2)
        self.assertAllClose(record.energies, np.full(11, record.energies[0]), rtol=1e-9)
        self.assertLess(np.max(np.abs(record.dissipation_integral)), 1e-9 * record.energies[0])

        zero = 0. * pair.null
        record = simulate(pair, zero, 1., 0.1)
        self.assertAllEqual(record.energies, np.zeros(11))

    def test_monotone_energy(self):
        phi = random_initial_state(self.pair, 6)
        for dt in (1e-3, 0.1, 1.):
            record = simulate(self.pair, phi, 1., dt)
            e = record.energies
            self.assertTrue(np.all(e[1:] <= e[:-1] * (1 + 1e-12)))
            self.assertLess(e[1], e[0])
            self.assertLess(np.max(record.complement_defect), 1e-12)

    def test_startup(self):
        pair = self.pair
        phi = random_initial_state(pair, 0)
        stepper = CrankNicolson(pair, 0.1)
        x = pair.restrict(phi)
        damped = simulate(pair, phi, 1., 0.1, startup_steps=3)
        self.assertNear(damped.energies[1], pair.g_norm(stepper.damp(x))**2, 1e-12)
        self.assertTrue(np.all(np.diff(damped.energies) <= 1e-12 * damped.energies[:-1]))
        self.assertLess(np.max(damped.complement_defect), 1e-12)
        self.assertAllEqual(simulate(pair, phi, 1., 0.1, startup_steps=0).energies,
                            simulate(pair, phi, 1., 0.1).energies)

        with self.assertRaises(ValueError):
            simulate(pair, phi, 1., 0.1, startup_steps=-1)

    def test_energy_balance_order(self):
        phi = random_initial_state(self.pair, 1, smoothing=2)
        residuals = [energy_balance_residual(self.pair, phi, 1., dt) for dt in (0.04, 0.02, 0.01)]
        orders = np.log2(np.array(residuals[:-1]) / np.array(residuals[1:]))
        self.assertTrue(np.all(orders > 1.8))

    def test_decay_rate(self):
        # raw data, large step: the implicit start removes the stiff beam oscillations
        abscissa = spectral_abscissa_complement(self.pair)
        for seed in (1, 2):
            phi = random_initial_state(self.pair, seed)
            record = simulate(self.pair, phi, 8. / abs(abscissa), 0.1, startup_steps=10)
            fit = fit_decay(record, 0.5)
            self.assertGreater(fit.delta, 0.)
            self.assertGreaterEqual(fit.r_squared, 0.99)
            self.assertLessEqual(abs(fit.delta - abs(abscissa)), 0.25 * abs(abscissa))

    def test_fit_decay(self):
        t = np.linspace(0., 10., 101)
        energies = 4. * np.exp(-0.6 * t)
        zeros = np.zeros_like(t)
        fit = fit_decay(TrajectoryRecord(t, energies, zeros, zeros, zeros), window=0.5)
        self.assertNear(fit.delta, 0.3, 1e-10)
        self.assertNear(fit.M, 2., 1e-10)
        self.assertNear(fit.r_squared, 1., 1e-12)
        self.assertEqual(set(fit.to_dict()), {'M', 'delta', 'r_squared', 'window'})

        with self.assertRaises(ValueError):
            fit_decay(TrajectoryRecord(t, energies, zeros, zeros, zeros), window=0.)
        with self.assertRaises(ConvergenceError):
            fit_decay(TrajectoryRecord(t[:2], energies[:2], zeros[:2], zeros[:2], zeros[:2]))
        with self.assertRaises(ConvergenceError):
            fit_decay(TrajectoryRecord(t, zeros, zeros, zeros, zeros))

    def test_composition(self):
        x = self.pair.restrict(random_initial_state(self.pair, 5))
        self.assertLess(composition_residual(self.pair, x, 0.1), 1e-10)


if __name__ == '__main__':
    os.environ['CUDA_VISIBLE_DEVICES'] = '-1'
    tf.test.main()
