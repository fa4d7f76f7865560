import logging

import matplotlib as mpl

mpl.use('Agg')

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from weakhedge.hedging import PriceReport  # noqa: E402

logger = logging.getLogger(__name__)


def figure_size(scale: float = 1.0):
    """Width and height in inches for a golden-ratio figure"""
    width = 6.0 * scale
    return [width, width * (np.sqrt(5.0) - 1.0) / 2.0]


def plot_price_curve(report: PriceReport, path, scale: float = 1.0) -> None:
    """Price of the weak hedge against the threshold m, with the superhedging price as a reference line"""
    fig, ax = plt.subplots(figsize=figure_size(scale))
    m = np.asarray(report.m_values)
    prices = np.asarray(report.prices)
    order = np.argsort(m, kind='stable')
    ax.plot(m[order], prices[order], marker='o', label='price')
    ax.axhline(report.superhedge, color='k', linestyle='--', linewidth=1.0, label='superhedge')
    ax.set_xlabel('success threshold m')
    ax.set_ylabel('initial capital')
    ax.set_title(f'{report.n_steps} steps, {report.n_m} m-points')
    ax.legend(loc='upper left')
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    logger.info("price curve figure written to %s", path)
