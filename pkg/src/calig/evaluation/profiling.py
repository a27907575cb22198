"""Wall-time profile of the attribution pipeline over a (depth, steps) grid."""

from __future__ import annotations

import time
from dataclasses import dataclass, replace

import numpy as np
from scipy import stats

from calig.attribution.baselines import caig_last
from calig.attribution.pipeline import AttributionConfig, explain
from calig.encoder.model import EncoderConfig, EncoderModel, forward


@dataclass
class TimingRow:
    num_layers: int
    steps: int
    method: str
    seconds: float


def _best_time(fn, repeats: int) -> float:
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def profile_grid(
    layer_grid=(2, 4, 6, 8),
    step_grid=(25, 50, 100),
    fixed_layers: int = 2,
    fixed_steps: int = 50,
    seq_len: int = 32,
    seed: int = 0,
    repeats: int = 3,
    base: EncoderConfig = EncoderConfig(max_seq_len=32),
    attribution: AttributionConfig = AttributionConfig(),
) -> list[TimingRow]:
    """Time CA-LIG across depth (at ``fixed_steps``) and steps (at ``fixed_layers``).

    Each grid point reports the best of ``repeats`` runs on a fresh trace, so
    no cached relevance is reused. CA-IG-last is timed at the same points for
    the cost-ratio comparison.
    """
    rng = np.random.default_rng(seed)
    ids = rng.integers(2, base.vocab_size, size=seq_len)
    ids[0] = base.cls_token_id
    points = list(dict.fromkeys([(L, fixed_steps) for L in layer_grid] + [(fixed_layers, m) for m in step_grid]))
    rows = []
    for L, m in points:
        model = EncoderModel.initialize(replace(base, num_layers=L, max_seq_len=max(base.max_seq_len, seq_len)), seed, "random")
        cfg = replace(attribution, steps=m)
        rows.append(TimingRow(L, m, "calig", _best_time(lambda: explain(model, ids, cfg, trace=forward(model, ids)), repeats)))
        rows.append(TimingRow(L, m, "caig_last", _best_time(lambda: caig_last(model, ids, config=cfg, trace=forward(model, ids)), repeats)))
    return rows


def linear_fit(x, y) -> dict:
    res = stats.linregress(np.asarray(x, dtype=np.float64), np.asarray(y, dtype=np.float64))
    return {"slope": float(res.slope), "intercept": float(res.intercept), "r2": float(res.rvalue**2)}


def fit_report(rows: list[TimingRow], fixed_layers: int = 2, fixed_steps: int = 50) -> dict:
    """Linear fits of CA-LIG time against depth and against steps."""
    calig = [r for r in rows if r.method == "calig"]
    by_depth = sorted((r.num_layers, r.seconds) for r in calig if r.steps == fixed_steps)
    by_steps = sorted((r.steps, r.seconds) for r in calig if r.num_layers == fixed_layers)
    return {
        "vs_layers": {"x": [p[0] for p in by_depth], "seconds": [p[1] for p in by_depth], **linear_fit(*zip(*by_depth))},
        "vs_steps": {"x": [p[0] for p in by_steps], "seconds": [p[1] for p in by_steps], **linear_fit(*zip(*by_steps))},
        "last_block_ratio": cost_ratios(rows),
    }


def cost_ratios(rows: list[TimingRow]) -> list[dict]:
    """CA-IG-last time against CA-LIG time divided by depth, per grid point."""
    index = {(r.num_layers, r.steps, r.method): r.seconds for r in rows}
    out = []
    for (L, m, method), secs in index.items():
        if method == "calig" and (L, m, "caig_last") in index:
            out.append({"num_layers": L, "steps": m, "ratio": index[(L, m, "caig_last")] / (secs / L)})
    return out
