import os

import matplotlib
matplotlib.use('Agg')
import matplotlib.pyplot as plt
import numpy as np
import pandas as pd

from utils import ShapeError

PLOT_KINDS = {
    'energy': ('t', 'energy', 'log'),
    'sweep': ('beta', 'norm_estimate', 'linear'),
}


def read_plot_csv(csv_path, kind):
    if kind not in PLOT_KINDS:
        raise ValueError(f'unknown plot kind {kind}, expected one of {sorted(PLOT_KINDS)}')
    if not os.path.exists(csv_path):
        raise ShapeError(csv_path, msg=f"{csv_path} doesn't exist")
    try:
        table = pd.read_csv(csv_path)
    except (pd.errors.EmptyDataError, pd.errors.ParserError) as e:
        raise ShapeError(csv_path, msg=f'malformed CSV {csv_path}: {e}')

    xkey, ykey, _ = PLOT_KINDS[kind]
    missing = [key for key in (xkey, ykey) if key not in table.columns]
    if missing:
        raise ShapeError(csv_path, missing, msg=f'{csv_path} lacks columns {missing}')
    if len(table) == 0:
        raise ShapeError(csv_path, msg=f'{csv_path} holds no rows')
    x = pd.to_numeric(table[xkey], errors='coerce').to_numpy()
    y = pd.to_numeric(table[ykey], errors='coerce').to_numpy()
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise ShapeError(csv_path, msg=f'{csv_path} holds non numeric {xkey} / {ykey} entries')
    order = np.argsort(x, kind='stable')
    return x[order], y[order]


def emit_plot(csv_path, kind, svg_path=None):
    ''' energy vs t on a log scale, or resolvent norm estimate vs beta '''
    x, y = read_plot_csv(csv_path, kind)
    xkey, ykey, yscale = PLOT_KINDS[kind]
    svg_path = svg_path or os.path.splitext(csv_path)[0] + '.svg'

    # keep svg output byte stable between runs
    with plt.rc_context({'svg.hashsalt': 'lab', 'svg.fonttype': 'none'}):
        fig, ax = plt.subplots(figsize=(6, 4))
        ax.plot(x, y, color='tab:blue', linewidth=1.2)
        ax.set_xlabel(xkey)
        ax.set_ylabel(ykey)
        if yscale == 'log' and np.all(y > 0):
            ax.set_yscale('log')
        ax.grid(alpha=0.3)
        fig.tight_layout()
        fig.savefig(svg_path, format='svg', metadata={'Date': None})
        plt.close(fig)
    return svg_path
