import numpy as np
from numpy.testing import assert_almost_equal

from weakhedge.hedging import price_curve
from weakhedge.plotting import figure_size, plot_price_curve


def test_figure_size():
    width, height = figure_size(2.0)
    assert width == 12.0
    assert_almost_equal(width / height, (1.0 + np.sqrt(5.0)) / 2.0)


def test_plot_price_curve(tmp_path, put_spec):
    report = price_curve(put_spec, 'quantile', 2, 11, (1.0, 0.0, 0.5))
    path = tmp_path / 'curve.png'
    plot_price_curve(report, path)
    assert path.stat().st_size > 0
