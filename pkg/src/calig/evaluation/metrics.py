"""Plausibility (token-F1) and faithfulness (insertion/deletion AUC) metrics.

Protocol constants:
  * ranking ties break toward the earlier position;
  * top-k selection uses ``k = max(ceil(p * n / 100), 5)`` over the ``n``
    eligible (non-special) positions, capped at ``n``;
  * perturbation replaces tokens with the pad token, never touches position
    0 (the cls token), moves ``ceil(0.05 * n)`` tokens per step and forces the
    20th step to cover every eligible position, giving 21 curve points;
  * the area is taken over the fraction of eligible tokens actually
    perturbed at each point, so steps past 100% (short sequences reach it
    early) add no area and insertion and deletion stay mirror images.
"""

from __future__ import annotations

import math
from typing import Optional

import numpy as np
from scipy.integrate import trapezoid

from calig.encoder.model import EncoderModel, batch_logits, softmax

F1_GRID = (5, 10, 15, 20, 30, 40, 50)
MIN_TOKENS = 5
PERTURB_STEPS = 20
STEP_FRACTION = 0.05


class MetricContractError(ValueError):
    pass


def rank_positions(scores: np.ndarray, eligible: Optional[np.ndarray] = None) -> np.ndarray:
    """Eligible positions by descending score, earlier position first on ties."""
    scores = np.asarray(scores, dtype=np.float64)
    order = np.argsort(-scores, kind="stable")
    if eligible is None:
        return order
    eligible = np.asarray(eligible, dtype=bool)
    return order[eligible[order]]


def token_f1(scores, mask, p: float, special: Optional[np.ndarray] = None) -> float:
    mask = np.asarray(mask, dtype=bool)
    scores = np.asarray(scores, dtype=np.float64)
    if scores.shape != mask.shape:
        raise MetricContractError(f"scores {scores.shape} and mask {mask.shape} differ in shape")
    if not 0 < p <= 100:
        raise MetricContractError(f"p must lie in (0, 100], got {p}")
    eligible = np.ones_like(mask) if special is None else ~np.asarray(special, dtype=bool)
    gold = mask & eligible
    if not gold.any():
        raise MetricContractError("rationale mask has no eligible true entry")
    n = int(eligible.sum())
    k = min(max(math.ceil(p * n / 100), MIN_TOKENS), n)
    chosen = rank_positions(scores, eligible)[:k]
    hits = int(gold[chosen].sum())
    if hits == 0:
        return 0.0
    precision = hits / k
    recall = hits / int(gold.sum())
    return 2 * precision * recall / (precision + recall)


def _schedule(n: int) -> list[int]:
    per_step = math.ceil(STEP_FRACTION * n)
    return [n if step == PERTURB_STEPS else min(step * per_step, n) for step in range(PERTURB_STEPS + 1)]


def perturbation_fractions(s: int) -> np.ndarray:
    """Fraction of eligible tokens perturbed at each of the 21 curve points."""
    n = s - 1
    if n == 0:
        return np.linspace(0.0, 1.0, PERTURB_STEPS + 1)
    return np.array(_schedule(n), dtype=np.float64) / n


def perturbation_sequences(token_ids, scores, mode: str, pad_id: int) -> np.ndarray:
    """The 21 token sequences of an insertion or deletion curve, ``[21, s]``."""
    if mode not in ("insertion", "deletion"):
        raise MetricContractError(f"mode must be insertion or deletion, got {mode!r}")
    ids = np.asarray(token_ids, dtype=np.int64)
    s = ids.shape[0]
    if np.asarray(scores).shape != (s,):
        raise MetricContractError(f"scores shape {np.asarray(scores).shape} does not match sequence length {s}")
    eligible = np.ones(s, dtype=bool)
    eligible[0] = False
    order = rank_positions(scores, eligible)
    seqs = np.empty((PERTURB_STEPS + 1, s), dtype=np.int64)
    for step, count in enumerate(_schedule(order.size)):
        if mode == "deletion":
            seq = ids.copy()
            seq[order[:count]] = pad_id
        else:
            seq = np.full(s, pad_id, dtype=np.int64)
            seq[0] = ids[0]
            seq[order[:count]] = ids[order[:count]]
        seqs[step] = seq
    return seqs


def curve_auc(curve, fractions=None) -> float:
    """Trapezoidal area under a confidence curve over the perturbed fraction.

    ``fractions`` defaults to an even grid on [0, 1].
    """
    y = np.asarray(curve, dtype=np.float64)
    x = np.linspace(0.0, 1.0, y.size) if fractions is None else np.asarray(fractions, dtype=np.float64)
    if x.shape != y.shape:
        raise MetricContractError(f"curve {y.shape} and fractions {x.shape} differ in shape")
    return float(trapezoid(y, x))


def confidence_curve(model: EncoderModel, token_ids, scores, mode: str, target_class: int) -> np.ndarray:
    seqs = perturbation_sequences(token_ids, scores, mode, model.config.pad_token_id)
    return softmax(batch_logits(model, seqs))[:, target_class]


def perturbation_auc(model: EncoderModel, token_ids, scores, mode: str, target_class: int) -> float:
    curve = confidence_curve(model, token_ids, scores, mode, target_class)
    return curve_auc(curve, perturbation_fractions(len(token_ids)))


def random_scores(s: int, rng: np.random.Generator) -> np.ndarray:
    """A random ranking expressed as scores (a permutation of ``s..1``)."""
    return rng.permutation(s).astype(np.float64)
