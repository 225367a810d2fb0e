import json
import os
import time
from glob import glob
from time import sleep

import pandas as pd

from config_manager import RunConfig, manage_version, save_config
from utils import sha256sum, to_jsonable

__version__ = '0.1.0'


class Writer:
    '''
    owns <out>/<subcommand>/: JSON and CSV results, the config echo
    and the manifest with a checksum of every emitted file
    '''
    def __init__(self, config: RunConfig, subcommand, result_folder=None):
        self.config = config
        self.subcommand = subcommand
        root = result_folder if result_folder is not None else config.output_dir
        self.result_path = self.make_dir(os.path.join(root, subcommand))
        self.index = self.get_index()
        self.files = {}
        self.started = time.time()

    def path(self, name):
        return os.path.join(self.result_path, name)

    def make_dir(self, path):
        if not os.path.exists(path):
            print(path)
            os.makedirs(path)
        return path

    def config_dump(self):
        name = 'run_config.json'
        if os.path.exists(self.path(name)):
            name = manage_version(self.result_path, name)
        self.register(save_config(self.result_path, name, self.config))
        return name

    def register(self, path):
        rel = os.path.relpath(path, self.result_path)
        self.files[rel] = sha256sum(path)
        return path

    def dump(self, content, name):
        path = self.path(name)
        self.make_dir(os.path.dirname(path))
        self.spin_wait(path)
        self.lock(path)
        try:
            with open(path, 'w') as f:
                json.dump(to_jsonable(content), f, indent=4, sort_keys=True)
        finally:
            self.unlock(path)
        return self.register(path)

    def load(self, name):
        path = self.path(name)
        self.spin_wait(path)
        self.lock(path)
        try:
            with open(path, 'r') as f:
                out = json.load(f)
        finally:
            self.unlock(path)
        return out

    def write_csv(self, rows, name, columns=None):
        ''' full round-trip precision, header always written '''
        path = self.path(name)
        self.make_dir(os.path.dirname(path))
        frame = pd.DataFrame(list(rows), columns=columns)
        frame.to_csv(path, index=False, float_format='%.17g')
        return self.register(path)

    def read_csv(self, name):
        return pd.read_csv(self.path(name))

    def write_manifest(self, results: dict, status=0):
        finished = time.time()
        manifest = {
            'subcommand': self.subcommand,
            'version': __version__,
            'status': status,
            'config': self.config.to_dict(),
            'results': to_jsonable(results),
            'files': dict(sorted(self.files.items())),
            'timing': {'started': self.started, 'finished': finished,
                       'elapsed_seconds': finished - self.started},
        }
        path = self.path('manifest.json')
        with open(path, 'w') as f:
            json.dump(manifest, f, indent=4, sort_keys=True)
        return manifest

    def get_index(self):
        previous_errors = sorted(glob(os.path.join(self.result_path, 'error_*.json')))
        return len(previous_errors)

    def spin_wait(self, path):
        path = path + '.lock'
        while os.path.exists(path):
            print('spin waiting...')
            sleep(1)

    def lock(self, path):
        with open(path + '.lock', 'w') as f:
            json.dump([], f)

    def unlock(self, path):
        path = path + '.lock'
        if os.path.exists(path):
            os.remove(path)
