import re

import pytest

from calig.render import GREEN, NEUTRAL, RED, attribution_caption, render_heatmap, token_color


def _backgrounds(doc: str) -> list[str]:
    return re.findall(r"background:(#[0-9a-f]{6});", doc)


def test_colour_scale():
    assert token_color(0.0, 1.0) == NEUTRAL
    assert token_color(0.01, 1.0) == NEUTRAL
    assert token_color(2.0, 2.0) == GREEN
    assert token_color(-2.0, 2.0) == RED
    assert token_color(1.0, 0.0) == NEUTRAL
    mid = token_color(0.5, 1.0)
    assert all(min(n, g) <= c <= max(n, g) for c, n, g in zip(mid, NEUTRAL, GREEN))


def test_zero_scores_are_neutral_and_maximum_is_deepest():
    doc = render_heatmap([0.0, 0.0, 0.0])
    assert set(_backgrounds(doc)) == {"#f5f5f5"}
    doc = render_heatmap([0.1, 0.9, -0.3])
    bg = _backgrounds(doc)
    assert bg[1] == "#%02x%02x%02x" % GREEN
    assert bg[0] != bg[1] and bg[2] != bg[1]


def test_output_is_deterministic_and_escaped():
    args = dict(tokens=["<cls>", "a&b", "c"], caption="x", special=[True, False, False], meta={"seed": 1})
    a = render_heatmap([0.3, -0.2, 0.1], **args)
    assert a == render_heatmap([0.3, -0.2, 0.1], **args)
    assert "&lt;cls&gt;" in a and "a&amp;b" in a
    assert "dashed" in a
    assert '"seed": 1' in a
    assert "http" not in a and "<script" not in a


def test_label_count_must_match():
    with pytest.raises(ValueError):
        render_heatmap([0.1, 0.2], tokens=["a"])


def test_caption():
    assert attribution_caption({"lam": 1.0, "steps": 50, "normalization": "l1"}) == "lambda=1.0 m=50 norm=l1"
