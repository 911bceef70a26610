"""The dependency-free SVG writer."""

import math

import pytest

from ncmctf.svg import line_plot


def _render(tmp_path, name, **kwargs):
    path = tmp_path / name
    line_plot(path, **kwargs)
    return path.read_text()


def test_identical_inputs_identical_bytes(tmp_path):
    series = [("loss", [0, 1, 2], [3.0, 2.5, 2.25])]
    a = _render(tmp_path, "a.svg", series=series, title="fit")
    b = _render(tmp_path, "b.svg", series=series, title="fit")
    assert a == b
    assert a.startswith("<svg ")
    assert a.rstrip().endswith("</svg>")
    assert "loss" in a and "fit" in a


def test_nonfinite_points_dropped(tmp_path):
    nan = float("nan")
    text = _render(tmp_path, "n.svg",
                   series=[("a", [0, 1, 2, 3], [1.0, nan, math.inf, 2.0])])
    # the polyline keeps only the two finite points
    line = next(l for l in text.splitlines() if "polyline" in l)
    assert line.count(",") == 2


def test_empty_plot_raises(tmp_path):
    with pytest.raises(ValueError, match="nothing to plot"):
        line_plot(tmp_path / "e.svg", series=[("a", [], [])])
    with pytest.raises(ValueError, match="nothing to plot"):
        line_plot(tmp_path / "e.svg", series=[("a", [1.0], [float("nan")])])


def test_logy_requires_positive_values(tmp_path):
    text = _render(tmp_path, "l.svg",
                   series=[("t", [0, 1, 2], [0.0, 10.0, 100.0])], logy=True)
    line = next(l for l in text.splitlines() if "polyline" in l)
    assert line.count(",") == 2  # the zero sample cannot be drawn
    with pytest.raises(ValueError):
        line_plot(tmp_path / "l2.svg", series=[("t", [0], [-1.0])], logy=True)


def test_logx_axis_labels_in_original_units(tmp_path):
    text = _render(tmp_path, "x.svg",
                   series=[("n", [1e3, 1e4, 1e5], [0.3, 0.2, 0.1])], logx=True)
    assert ">1000<" in text
    assert ">100000<" in text


def test_fixed_y_range_pins_axis(tmp_path):
    kw = dict(series=[("a", [0, 1], [0.4, 0.6])], y_range=(0.0, 1.0))
    text = _render(tmp_path, "r.svg", **kw)
    assert ">1<" in text and ">0<" in text


def test_multiple_series_get_distinct_colors(tmp_path):
    text = _render(tmp_path, "m.svg",
                   series=[("one", [0, 1], [1.0, 2.0]),
                           ("two", [0, 1], [2.0, 1.0])])
    colors = {l.split('stroke="')[1].split('"')[0]
              for l in text.splitlines() if "polyline" in l}
    assert len(colors) == 2
