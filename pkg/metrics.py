import numpy as np
from numpy import log2, abs

from utils import safe_div


def convergence_orders(errors, ratio=2.):
    ''' observed orders log(e_k / e_k+1) / log(ratio) between successive levels '''
    errors = np.asarray(errors, dtype=float)
    return np.array([safe_div(np.log(safe_div(errors[k], errors[k + 1])), np.log(ratio))
                     for k in range(len(errors) - 1)])


def cauchy_ratios(values):
    '''
    |v_k+2 - v_k+1| / |v_k+1 - v_k| for a sequence from nested refinements;
    values may be arrays (e.g. several eigenvalues), the max over entries is used
    '''
    values = [np.atleast_1d(v) for v in values]
    diffs = [np.max(abs(values[k + 1] - values[k])) for k in range(len(values) - 1)]
    return np.array([safe_div(diffs[k + 1], diffs[k]) for k in range(len(diffs) - 1)])


def relative_change(old, new):
    return safe_div(abs(new - old), abs(old))


def within_factor(a, b, factor=2.):
    a, b = abs(a), abs(b)
    if a == 0 or b == 0:
        return a == b
    return max(a, b) / min(a, b) <= factor


def tail_statistics(betas, estimates, start):
    ''' max / median of the estimates with |beta| > start '''
    betas, estimates = np.asarray(betas), np.asarray(estimates)
    tail = estimates[abs(betas) > start]
    if len(tail) == 0:
        return {'tail_max': float('nan'), 'tail_median': float('nan'), 'tail_ratio': float('nan')}
    median = float(np.median(tail))
    return {'tail_max': float(np.max(tail)), 'tail_median': median,
            'tail_ratio': safe_div(float(np.max(tail)), median)}


def interior_maximum(betas, estimates):
    ''' True if the maximum is not attained at either end of the beta range '''
    order = np.argsort(np.asarray(betas))
    estimates = np.asarray(estimates)[order]
    index = int(np.argmax(estimates))
    return 0 < index < len(estimates) - 1


def least_squares_order(hs, errors):
    ''' slope of log(error) against log(h) '''
    slope, _ = np.polyfit(log2(np.asarray(hs, dtype=float)), log2(np.asarray(errors, dtype=float)), 1)
    return float(slope)
