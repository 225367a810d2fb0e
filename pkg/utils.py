import hashlib

import numpy as np


class LabError(Exception):
    def __init__(self, *args, msg='flow-structure lab error', writer=None):
        super(LabError, self).__init__()
        self.msg = msg
        if writer is not None:
            writer.dump([to_jsonable(a) for a in args],
                        f'error_{writer.index}.json')

    def __str__(self):
        return self.msg


class ConfigError(LabError, ValueError):
    pass


class GeometryError(LabError, ValueError):
    pass


class AssemblyError(LabError):
    pass


class SolverError(LabError):
    pass


class CompatibilityError(LabError, ValueError):
    pass


class ConvergenceError(LabError):
    pass


class SpectrumError(LabError):
    pass


class ShapeError(LabError, ValueError):
    pass


def safe_div(x, y, eps=1e-300):
    # returns safe x / max(|y|, epsilon)
    return x / max(abs(y), eps)


def to_jsonable(value):
    ''' numpy / complex aware conversion for json.dump '''
    if isinstance(value, dict):
        return {str(k): to_jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [to_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return to_jsonable(value.tolist())
    if isinstance(value, (complex, np.complexfloating)):
        return [float(value.real), float(value.imag)]
    if isinstance(value, np.floating):
        return float(value)
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, np.bool_):
        return bool(value)
    if hasattr(value, 'to_dict'):
        return to_jsonable(value.to_dict())
    return value


def complex_pairs(array):
    array = np.asarray(array, dtype=complex)
    return np.stack([array.real, array.imag], -1).tolist()


def from_complex_pairs(pairs):
    pairs = np.asarray(pairs, dtype=float).reshape(-1, 2)
    return pairs[:, 0] + 1j * pairs[:, 1]


def sha256sum(path, chunk=1 << 16):
    digest = hashlib.sha256()
    with open(path, 'rb') as f:
        while True:
            block = f.read(chunk)
            if not block:
                break
            digest.update(block)
    return digest.hexdigest()


def lu_solve(lu, rhs):
    ''' SuperLU solve that accepts complex rhs for a real factorization '''
    rhs = np.asarray(rhs)
    if np.iscomplexobj(rhs):
        return lu.solve(np.ascontiguousarray(rhs.real)) + 1j * lu.solve(np.ascontiguousarray(rhs.imag))
    return lu.solve(rhs)
