import json
import os
import tempfile

import numpy as np
import tensorflow as tf
from config_manager import get_config
from utils import SolverError, sha256sum
from writer_manager import *
from writer_manager import __version__


class WriterManagerTest(tf.test.TestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.config = get_config(overrides={'output': {'dir': self.tmp.name}}, verbose=False)
        self.writer = Writer(self.config, 'sweep')

    def tearDown(self):
        self.tmp.cleanup()

    def test_result_path(self):
        self.assertEqual(self.writer.result_path, os.path.join(self.tmp.name, 'sweep'))
        self.assertTrue(os.path.isdir(self.writer.result_path))
        self.assertEqual(self.writer.index, 0)

    def test_dump_and_load(self):
        writer = self.writer
        writer.dump({'value': np.float64(0.25), 'z': 1 - 2j}, 'result.json')
        self.assertEqual(writer.load('result.json'), {'value': 0.25, 'z': [1., -2.]})
        self.assertFalse(os.path.exists(writer.path('result.json.lock')))
        self.assertEqual(writer.files['result.json'], sha256sum(writer.path('result.json')))

    def test_csv_precision(self):
        value = 1. / 3
        self.writer.write_csv([{'beta': 0., 'norm_estimate': value}], 'sweep.csv',
                              columns=['beta', 'norm_estimate'])
        table = self.writer.read_csv('sweep.csv')
        self.assertEqual(list(table.columns), ['beta', 'norm_estimate'])
        self.assertEqual(table['norm_estimate'][0], value)

        self.writer.write_csv([], 'empty.csv', columns=['beta', 'norm_estimate'])
        with open(self.writer.path('empty.csv')) as f:
            self.assertEqual(f.read().strip(), 'beta,norm_estimate')

    def test_config_dump(self):
        self.assertEqual(self.writer.config_dump(), 'run_config.json')
        self.assertEqual(self.writer.config_dump(), 'run_config_v_0.json')
        with open(self.writer.path('run_config.json')) as f:
            self.assertEqual(json.load(f), self.config.to_dict())

    def test_manifest(self):
        writer = self.writer
        writer.dump({'a': 1}, 'b.json')
        writer.write_csv([{'x': 1.}], 'a.csv')
        manifest = writer.write_manifest({'sup': np.float64(2.)}, status=1)
        self.assertEqual(list(manifest['files']), ['a.csv', 'b.json'])
        self.assertEqual(manifest['status'], 1)
        self.assertEqual(manifest['version'], __version__)
        self.assertGreaterEqual(manifest['timing']['elapsed_seconds'], 0.)
        with open(writer.path('manifest.json')) as f:
            self.assertEqual(json.load(f)['results'], {'sup': 2.})

    def test_error_dump(self):
        SolverError(3., msg='stuck', writer=self.writer)
        self.assertTrue(os.path.exists(self.writer.path('error_0.json')))
        self.assertEqual(Writer(self.config, 'sweep').index, 1)


if __name__ == '__main__':
    os.environ['CUDA_VISIBLE_DEVICES'] = '-1'
    tf.test.main()
