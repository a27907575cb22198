"""Layer-wise integrated gradients fused with class-specific attention gradients.

Pipeline for one input: forward trace -> IG relevance at the input of each
block -> normalization -> attention gradients -> per-block fusion -> rollout
across blocks -> signed split. Layer and block indices are zero-based; block
ranges are half-open ``(start, stop)``.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, replace
from typing import Callable, Optional, Sequence

import numpy as np

from calig import tensor as T
from calig.encoder.model import EncoderModel, ForwardTrace, ParamView, forward, forward_from_hidden, run_block

NORMALIZATIONS = ("symmetric_minmax", "l1")
RELEVANCE_AXES = ("key", "query")


class AttributionConfigError(ValueError):
    pass


@dataclass(frozen=True)
class AttributionConfig:
    """Knobs of the pipeline.

    ``target_class=None`` explains the predicted class. ``relevance_layer=None``
    pairs each block with the relevance at its own input; an integer fixes one
    layer for every block. ``ig_batch_size`` only controls how many
    interpolation points share a batched pass.
    """

    target_class: Optional[int] = None
    steps: int = 50
    lam: float = 1.0
    relevance_layer: Optional[int] = None
    normalization: str = "symmetric_minmax"
    head_pool: str = "mean"
    rollout_range: Optional[tuple] = None
    relevance_axis: str = "key"
    score_row: Optional[int] = None
    all_layers: bool = False
    ig_batch_size: int = 10

    def validate(self, model: EncoderModel) -> "AttributionConfig":
        L = model.config.num_layers
        if not 0.0 <= self.lam <= 1.0:
            raise AttributionConfigError(f"lambda must lie in [0, 1], got {self.lam}")
        if self.steps < 1:
            raise AttributionConfigError(f"steps must be >= 1, got {self.steps}")
        if self.ig_batch_size < 1:
            raise AttributionConfigError("ig_batch_size must be >= 1")
        if self.normalization not in NORMALIZATIONS:
            raise AttributionConfigError(f"unknown normalization {self.normalization!r}")
        if self.head_pool != "mean":
            raise AttributionConfigError(f"unknown head pooling {self.head_pool!r}")
        if self.relevance_axis not in RELEVANCE_AXES:
            raise AttributionConfigError(f"unknown relevance axis {self.relevance_axis!r}")
        if self.relevance_layer is not None and not 0 <= self.relevance_layer <= L:
            raise AttributionConfigError(f"relevance_layer must lie in [0, {L}]")
        start, stop = self.block_range(L)
        if not 0 <= start < stop <= L:
            raise AttributionConfigError(f"rollout range {self.rollout_range} not a non-empty part of [0, {L})")
        if self.target_class is not None and not 0 <= self.target_class < model.config.num_classes:
            raise AttributionConfigError(f"target class {self.target_class} out of range")
        return self

    def block_range(self, num_layers: int) -> tuple[int, int]:
        if self.rollout_range is None:
            return 0, num_layers
        start, stop = self.rollout_range
        return int(start), int(stop)

    def to_dict(self) -> dict:
        d = asdict(self)
        if d["rollout_range"] is not None:
            d["rollout_range"] = list(d["rollout_range"])
        return d


@dataclass
class AttributionResult:
    token_ids: np.ndarray
    target_class: int
    logits: np.ndarray
    layer_relevance: dict[int, np.ndarray]
    normalized_relevance: dict[int, np.ndarray]
    fused: list[np.ndarray]
    rollout: np.ndarray
    positive: np.ndarray
    negative: np.ndarray
    token_scores: np.ndarray
    special_mask: np.ndarray
    config: AttributionConfig
    block_range: tuple[int, int]
    model_fingerprint: str = ""
    attention_grads: list[np.ndarray] = field(default_factory=list, repr=False)


# --- relevance ----------------------------------------------------------------


def interpolate_hidden(x: np.ndarray, x_base: np.ndarray, m: int) -> list[np.ndarray]:
    """States ``x_base + (k/m)(x - x_base)`` for ``k = 1..m``; the last is ``x`` itself."""
    x, x_base = np.asarray(x, dtype=np.float64), np.asarray(x_base, dtype=np.float64)
    if x.shape != x_base.shape:
        raise ValueError(f"shape mismatch: {x.shape} vs {x_base.shape}")
    if m < 1:
        raise ValueError("m must be >= 1")
    return [_path_points(x, x_base, m, k, k + 1)[0] for k in range(1, m + 1)]


def _path_points(x, x_base, m: int, k_lo: int, k_hi: int) -> np.ndarray:
    alphas = np.arange(k_lo, k_hi, dtype=np.float64) / m
    diff = x - x_base
    pts = x_base[None] + alphas.reshape((-1,) + (1,) * x.ndim) * diff[None]
    if k_hi - 1 == m:
        pts[-1] = x
    return pts


def integrated_gradients(
    fn: Callable[[T.Tensor], T.Tensor],
    x: np.ndarray,
    baseline: np.ndarray,
    steps: int,
    batch_size: int = 10,
) -> np.ndarray:
    """Right-endpoint Riemann IG of a batched scalar function.

    ``fn`` maps a tensor ``[B, *x.shape]`` to per-example scalars ``[B]``.
    Gradients are reduced in a fixed order, so the result does not depend
    on anything but the arguments.
    """
    total = np.zeros_like(x, dtype=np.float64)
    for k_lo in range(1, steps + 1, batch_size):
        k_hi = min(k_lo + batch_size, steps + 1)
        with T.Tape() as tape:
            pts = T.Tensor(_path_points(x, baseline, steps, k_lo, k_hi), requires_grad=True)
            y = T.reduce_sum(fn(pts))
        tape.backward(y)
        total = total + pts.grad.sum(axis=0)
    return (x - baseline) * (total / steps)


def baseline_hidden_states(model: EncoderModel, key_mask: np.ndarray) -> list[np.ndarray]:
    """Hidden states of the zero-embedding input, one per layer (``L + 1``)."""
    s, d = key_mask.shape[0], model.config.hidden_dim
    pv = ParamView(model)
    x = T.Tensor(np.zeros((1, s, d)))
    states = [x.data[0]]
    for b in range(model.config.num_layers):
        x, _, _ = run_block(model, b, x, key_mask[None, :], pv)
        states.append(x.data[0])
    return states


def _memoized(trace: ForwardTrace, key: tuple, compute: Callable):
    """Results depend only on (model, trace, key); the fingerprint guards model reuse."""
    if key not in trace.memo:
        trace.memo[key] = compute()
    return trace.memo[key]


def _suffix_score(model: EncoderModel, layer: int, key_mask: np.ndarray, c: int):
    pv = ParamView(model)

    def fn(h: T.Tensor) -> T.Tensor:
        logits, _ = forward_from_hidden(model, layer, h, key_mask[None, :], pv=pv)
        return T.getitem(logits, (slice(None), c))

    return fn


def layer_ig(
    model: EncoderModel,
    trace: ForwardTrace,
    layer: int,
    config: AttributionConfig,
    baselines: Optional[list[np.ndarray]] = None,
) -> np.ndarray:
    """IG of the target logit with respect to ``hidden_states[layer]``; shape ``[s, d]``."""
    L = model.config.num_layers
    if not 0 <= layer <= L:
        raise IndexError(f"layer {layer} outside [0, {L}]")
    c = trace.predicted_class if config.target_class is None else config.target_class
    fp = model.fingerprint()

    def compute():
        base = baselines
        if base is None:
            base = _memoized(trace, ("baselines", fp), lambda: baseline_hidden_states(model, trace.key_mask))
        return integrated_gradients(
            _suffix_score(model, layer, trace.key_mask, c),
            trace.hidden_states[layer],
            base[layer],
            config.steps,
            config.ig_batch_size,
        )

    if baselines is not None:
        return compute()
    return _memoized(trace, ("layer_ig", fp, layer, c, config.steps, config.ig_batch_size), compute).copy()


def token_relevance(ig: np.ndarray) -> np.ndarray:
    return np.asarray(ig).sum(axis=-1)


def normalize_relevance(r: np.ndarray, scheme: str = "symmetric_minmax") -> np.ndarray:
    """Rescale token relevance; a constant vector carries no ranking and maps to zeros under either scheme."""
    r = np.asarray(r, dtype=np.float64)
    if scheme == "symmetric_minmax":
        lo, hi = r.min(), r.max()
        if hi == lo:
            return np.zeros_like(r)
        return 2.0 * (r - lo) / (hi - lo) - 1.0
    if scheme == "l1":
        if r.size and r.min() == r.max():
            return np.zeros_like(r)
        total = np.abs(r).sum()
        return np.zeros_like(r) if total == 0 else r / total
    raise AttributionConfigError(f"unknown normalization {scheme!r}")


# --- attention ------------------------------------------------------------------


def attention_gradients(model: EncoderModel, trace: ForwardTrace, target_class: int) -> list[np.ndarray]:
    """Gradient of the target logit w.r.t. every post-softmax attention tensor, ``[h, s, s]`` each."""
    if not 0 <= target_class < model.config.num_classes:
        raise IndexError(f"target class {target_class} out of range")
    key = ("attention_grads", model.fingerprint(), target_class)
    return [g.copy() for g in _memoized(trace, key, lambda: _attention_gradients(model, trace, target_class))]


def _attention_gradients(model: EncoderModel, trace: ForwardTrace, target_class: int) -> list[np.ndarray]:
    with T.Tape() as tape:
        # The embedding input is marked so every attention tensor lands on the tape.
        x = T.Tensor(trace.hidden_states[0], requires_grad=True)
        logits, attns = forward_from_hidden(model, 0, x, trace.key_mask[None, :])
        y = T.getitem(logits, target_class)
    tape.backward(y)
    return [a.grad[0] for a in attns]


def _l1(row: np.ndarray) -> float:
    # Same reduction path as ``np.abs(m).sum(axis=1)`` on a 2-D array.
    return float(np.abs(row[None, :]).sum(axis=1)[0])


def _exact_unit_l1(row: np.ndarray, max_ulps: int = 32) -> np.ndarray:
    # Rounding in the partial sums means no single residual update is guaranteed
    # to land on 1.0, so nudge one entry by a few ulps at a time. The entry summed
    # last is tried first; it almost always succeeds immediately.
    if _l1(row) == 1.0:
        return row
    nz = np.flatnonzero(row)
    order = [nz[-1]] + sorted(nz[:-1], key=lambda k: -abs(row[k]))
    for k in order:
        base = abs(row[k])
        first = abs(1.0 - (_l1(row) - base))
        for start in (first, base):
            for direction in (np.inf, 0.0):
                v = start
                for _ in range(max_ulps):
                    trial = row.copy()
                    trial[k] = np.copysign(v, row[k])
                    if _l1(trial) == 1.0:
                        return trial
                    v = np.nextafter(v, direction)
    return row


def row_normalize(m: np.ndarray) -> np.ndarray:
    """Divide each row by its L1 norm, signs kept; zero rows become identity rows.

    A few-ulp adjustment of one entry makes ``np.abs(row).sum() == 1.0`` hold
    exactly in floating point.
    """
    m = np.asarray(m, dtype=np.float64)
    out = np.empty_like(m)
    norms = np.abs(m).sum(axis=1)
    for i, n in enumerate(norms):
        if n == 0.0 or not np.isfinite(n):
            out[i] = 0.0
            out[i, i] = 1.0
            continue
        out[i] = _exact_unit_l1(m[i] / n)
    return out


def fuse_block(grad_attn: np.ndarray, r_norm: np.ndarray, lam: float, axis: str = "key") -> np.ndarray:
    """Head-averaged ``lam * (dA * r) + (1 - lam) * r`` plus identity, row-normalized.

    ``r_norm`` scales the key axis (column ``k`` by ``r_norm[k]``) by default,
    or the query axis with ``axis="query"``.
    """
    grad_attn = np.asarray(grad_attn, dtype=np.float64)
    r_norm = np.asarray(r_norm, dtype=np.float64)
    if grad_attn.ndim != 3 or grad_attn.shape[1] != grad_attn.shape[2]:
        raise ValueError(f"attention gradient must be [h, s, s], got {grad_attn.shape}")
    s = grad_attn.shape[-1]
    if r_norm.shape != (s,):
        raise ValueError(f"relevance of shape {r_norm.shape} does not match sequence length {s}")
    if not 0.0 <= lam <= 1.0:
        raise ValueError(f"lambda must lie in [0, 1], got {lam}")
    if axis not in RELEVANCE_AXES:
        raise ValueError(f"unknown relevance axis {axis!r}")
    gate = r_norm[None, None, :] if axis == "key" else r_norm[None, :, None]
    h = grad_attn.shape[0]
    if lam == 0.0:
        pooled = np.broadcast_to(gate, grad_attn.shape).mean(axis=0)
    elif lam == 1.0:
        pooled = (grad_attn * gate).mean(axis=0)
    else:
        pooled = (lam * (grad_attn * gate) + (1.0 - lam) * np.broadcast_to(gate, (h, s, s))).mean(axis=0)
    return row_normalize(pooled + np.eye(s))


def rollout(fused: Sequence[np.ndarray], block_range: Optional[tuple] = None) -> np.ndarray:
    """Left-to-right product of fused matrices over a half-open block range."""
    start, stop = (0, len(fused)) if block_range is None else block_range
    if not 0 <= start < stop <= len(fused):
        raise ValueError(f"empty or invalid rollout range {(start, stop)} for {len(fused)} blocks")
    c = np.array(fused[start], dtype=np.float64)
    for b in range(start + 1, stop):
        c = c @ fused[b]
    return c


def decompose_signed(c: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    c = np.asarray(c)
    return np.maximum(c, 0.0), np.minimum(c, 0.0)


# --- end to end -------------------------------------------------------------------


def explain(model: EncoderModel, token_ids, config: AttributionConfig = AttributionConfig(), trace=None) -> AttributionResult:
    config.validate(model)
    if trace is None:
        trace = forward(model, token_ids)
    L = model.config.num_layers
    c = trace.predicted_class if config.target_class is None else config.target_class
    start, stop = config.block_range(L)

    if config.relevance_layer is not None:
        layers = {config.relevance_layer}
    else:
        layers = set(range(start, stop))
    if config.all_layers:
        layers |= set(range(L + 1))
    target_cfg = replace(config, target_class=c)
    relevance = {l: token_relevance(layer_ig(model, trace, l, target_cfg)) for l in sorted(layers)}
    normalized = {l: normalize_relevance(r, config.normalization) for l, r in relevance.items()}

    grads = attention_gradients(model, trace, c)
    fused = []
    for b in range(L):
        if start <= b < stop:
            src = b if config.relevance_layer is None else config.relevance_layer
            fused.append(fuse_block(grads[b], normalized[src], config.lam, config.relevance_axis))
        else:
            fused.append(np.eye(trace.seq_len))
    cmap = rollout(fused, (start, stop))
    pos, neg = decompose_signed(cmap)
    row = 0 if config.score_row is None else config.score_row
    special = (trace.token_ids == model.config.cls_token_id) | (trace.token_ids == model.config.pad_token_id)
    return AttributionResult(
        token_ids=trace.token_ids,
        target_class=c,
        logits=trace.logits,
        layer_relevance=relevance,
        normalized_relevance=normalized,
        fused=fused,
        rollout=cmap,
        positive=pos,
        negative=neg,
        token_scores=cmap[row].copy(),
        special_mask=special,
        config=config,
        block_range=(start, stop),
        model_fingerprint=model.fingerprint(),
        attention_grads=grads,
    )
