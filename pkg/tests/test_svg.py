import math
import xml.etree.ElementTree as ET

import pytest
from hypothesis import given
from hypothesis import strategies as st

from pgvae.svg import Plot, Series, nice_ticks, render

NS = "{http://www.w3.org/2000/svg}"


@given(lo=st.floats(-1e4, 1e4), span=st.floats(1e-3, 1e4))
def test_nice_ticks_cover_range(lo, span):
    ticks = nice_ticks(lo, lo + span)
    assert ticks[0] <= lo + 1e-9 * span and ticks[-1] >= lo + span - 1e-9 * span
    assert 2 <= len(ticks) <= 12
    steps = {round(b - a, 9) for a, b in zip(ticks, ticks[1:])}
    assert len({round(s / max(steps), 6) for s in steps}) == 1


def test_nice_ticks_degenerate_range():
    ticks = nice_ticks(2.0, 2.0)
    assert ticks[0] < 2.0 < ticks[-1]


def test_render_is_valid_svg_with_series_and_legend():
    plot = Plot(
        "a <title> & more", "rho", "max",
        [Series("pgvae", [0.05, 0.5], [2.4, 2.5], err=[0.1, math.nan]),
         Series("Base", [0.05, 0.5], [1.0, 1.0], dashed=True)],
    )
    root = ET.fromstring(render(plot))
    assert root.tag == NS + "svg"
    assert len(root.findall(NS + "polyline")) == 2
    texts = [t.text for t in root.iter(NS + "text")]
    assert "pgvae" in texts and "Base" in texts and "a <title> & more" in texts
    assert any(p.get("stroke-dasharray") for p in root.findall(NS + "polyline"))


def test_render_categorical_axis():
    plot = Plot("hr", "hr", "max", [Series("s", [0, 1, 2], [1, 2, 3])], x_ticks=["40:50", "50:60", "60:70"])
    texts = [t.text for t in ET.fromstring(render(plot)).iter(NS + "text")]
    assert {"40:50", "50:60", "60:70"} <= set(texts)


def test_render_rejects_empty_plot():
    with pytest.raises(ValueError):
        render(Plot("t", "x", "y", []))
