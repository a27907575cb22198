"""Static, self-contained HTML heatmap of signed token scores.

Positive scores shade toward green and negative toward red, with intensity
``|score| / max|score|`` per example. Intensities below ``NEUTRAL_BAND``
render neutral. The output uses inline styles only and carries no
timestamps, so identical inputs give identical bytes.
"""

from __future__ import annotations

import html
import json
from typing import Optional, Sequence

import numpy as np

NEUTRAL = (245, 245, 245)
GREEN = (0, 140, 60)
RED = (200, 30, 30)
NEUTRAL_BAND = 0.02


def token_color(score: float, scale: float) -> tuple[int, int, int]:
    if scale <= 0.0 or not np.isfinite(score):
        return NEUTRAL
    t = min(abs(score) / scale, 1.0)
    if t < NEUTRAL_BAND:
        return NEUTRAL
    end = GREEN if score > 0 else RED
    return tuple(int(round(n + (e - n) * t)) for n, e in zip(NEUTRAL, end))


def _hex(rgb) -> str:
    return "#%02x%02x%02x" % tuple(rgb)


def render_heatmap(
    token_scores: Sequence[float],
    tokens: Optional[Sequence[str]] = None,
    caption: str = "",
    special: Optional[Sequence[bool]] = None,
    title: str = "Token attribution",
    meta: Optional[dict] = None,
) -> str:
    """HTML document for one example.

    ``tokens`` defaults to the position index. ``special`` marks positions
    drawn with a dashed outline (cls/pad). ``meta`` is embedded verbatim as
    sorted JSON inside a comment for provenance.
    """
    scores = np.asarray(token_scores, dtype=np.float64)
    labels = [str(i) for i in range(scores.size)] if tokens is None else [str(t) for t in tokens]
    if len(labels) != scores.size:
        raise ValueError(f"{len(labels)} token labels for {scores.size} scores")
    flags = [False] * scores.size if special is None else [bool(s) for s in special]
    finite = scores[np.isfinite(scores)]
    scale = float(np.abs(finite).max()) if finite.size else 0.0

    spans = []
    for i, (label, score) in enumerate(zip(labels, scores)):
        rgb = token_color(float(score), scale)
        text_color = "#ffffff" if sum(rgb) < 330 else "#111111"
        border = "1px dashed #888888" if flags[i] else "1px solid transparent"
        spans.append(
            f'<span class="tok" style="background:{_hex(rgb)};color:{text_color};border:{border}" '
            f'title="position {i}: {float(score):+.6e}">{html.escape(label)}</span>'
        )
    provenance = ""
    if meta is not None:
        provenance = "<!-- " + json.dumps(meta, sort_keys=True).replace("--", "- -") + " -->\n"
    return (
        "<!DOCTYPE html>\n"
        '<html lang="en">\n<head>\n<meta charset="utf-8">\n'
        f"<title>{html.escape(title)}</title>\n"
        "<style>\n"
        "body{font-family:monospace;margin:2em;background:#ffffff}\n"
        ".tok{display:inline-block;padding:2px 4px;margin:2px;border-radius:3px}\n"
        ".caption{margin-top:1em;color:#444444;font-size:0.9em}\n"
        "</style>\n</head>\n<body>\n"
        f"{provenance}"
        f"<h3>{html.escape(title)}</h3>\n"
        f'<div class="tokens">{"".join(spans)}</div>\n'
        f'<div class="caption">{html.escape(caption)} (scale: max |score| = {scale:.6e})</div>\n'
        "</body>\n</html>\n"
    )


def attribution_caption(config: dict) -> str:
    return "lambda={lam} m={steps} norm={normalization}".format(
        lam=config.get("lam"), steps=config.get("steps"), normalization=config.get("normalization")
    )
