import os
import tempfile

import numpy as np
import scipy.sparse as sp
import tensorflow as tf
from scipy.sparse.linalg import splu
from utils import *


class UtilsTest(tf.test.TestCase):
    def test_safe_div(self):
        self.assertFalse(np.isnan(safe_div(1, 0.)))
        self.assertEqual(safe_div(4., 2.), 2.)

    def test_to_jsonable(self):
        out = to_jsonable({'a': np.array([1., 2.]), 'b': 1 + 2j,
                           'c': np.int64(3), 'd': (np.float32(0.5),)})
        self.assertEqual(out, {'a': [1., 2.], 'b': [1., 2.], 'c': 3, 'd': [0.5]})

    def test_complex_pairs(self):
        z = np.array([1 + 2j, -3.5j, 4.])
        self.assertAllClose(from_complex_pairs(complex_pairs(z)), z)

    def test_error_message(self):
        err = SolverError(msg='factorization failed')
        self.assertEqual(str(err), 'factorization failed')
        self.assertIsInstance(ConfigError(msg='x'), ValueError)
        self.assertIsInstance(CompatibilityError(), LabError)

    def test_lu_solve(self):
        A = sp.csc_matrix(np.array([[4., 1.], [1., 3.]]))
        rhs = np.array([1. + 2j, -1j])
        self.assertAllClose(A @ lu_solve(splu(A), rhs), rhs)
        self.assertAllClose(A @ lu_solve(splu(A), rhs.real), rhs.real)

    def test_sha256sum(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, 'a.txt')
            with open(path, 'w') as f:
                f.write('abc')
            self.assertEqual(
                sha256sum(path),
                'ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad')


if __name__ == '__main__':
    os.environ['CUDA_VISIBLE_DEVICES'] = '-1'
    tf.test.main()
