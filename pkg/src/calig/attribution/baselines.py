"""Comparison explainers: IG, Input x Gradient, attention rollout, last-layer attention."""

from __future__ import annotations

from dataclasses import replace
from typing import Optional

import numpy as np

from calig import tensor as T
from calig.attribution.pipeline import (
    AttributionConfig,
    explain,
    layer_ig,
    token_relevance,
)
from calig.encoder.model import EncoderModel, ForwardTrace, forward, forward_from_hidden


def _trace(model, token_ids, trace):
    return forward(model, token_ids) if trace is None else trace


def _target(trace: ForwardTrace, c: Optional[int]) -> int:
    return trace.predicted_class if c is None else c


def ig_final(model: EncoderModel, token_ids, c: Optional[int] = None, m: int = 50, trace=None) -> np.ndarray:
    """Standard IG on the input embeddings, summed per token."""
    trace = _trace(model, token_ids, trace)
    cfg = AttributionConfig(target_class=_target(trace, c), steps=m)
    return token_relevance(layer_ig(model, trace, 0, cfg))


def input_gradient(model: EncoderModel, trace: ForwardTrace, c: int) -> np.ndarray:
    with T.Tape() as tape:
        x = T.Tensor(trace.hidden_states[0], requires_grad=True)
        logits, _ = forward_from_hidden(model, 0, x, trace.key_mask[None, :])
        y = T.getitem(logits, c)
    tape.backward(y)
    return x.grad


def input_x_gradient(model: EncoderModel, token_ids, c: Optional[int] = None, trace=None) -> np.ndarray:
    trace = _trace(model, token_ids, trace)
    grad = input_gradient(model, trace, _target(trace, c))
    return (trace.hidden_states[0] * grad).sum(axis=-1)


def _row_stochastic(m: np.ndarray) -> np.ndarray:
    return m / m.sum(axis=-1, keepdims=True)


def attention_rollout(model: EncoderModel, token_ids, c: Optional[int] = None, trace=None) -> np.ndarray:
    """Cls row of the product of ``rownorm(mean_h A + I)`` over blocks; class-agnostic."""
    trace = _trace(model, token_ids, trace)
    s = trace.seq_len
    out = np.eye(s)
    for attn in trace.attentions:
        out = out @ _row_stochastic(attn.mean(axis=0) + np.eye(s))
    return out[0].copy()


def attention_last(model: EncoderModel, token_ids, c: Optional[int] = None, trace=None) -> np.ndarray:
    trace = _trace(model, token_ids, trace)
    return trace.attentions[-1].mean(axis=0)[0].copy()


def calig(model: EncoderModel, token_ids, c: Optional[int] = None, config: Optional[AttributionConfig] = None, trace=None):
    config = replace(config or AttributionConfig(), target_class=c)
    return explain(model, token_ids, config, trace=trace).token_scores


def caig_last(model: EncoderModel, token_ids, c: Optional[int] = None, config: Optional[AttributionConfig] = None, trace=None):
    """Fusion and rollout restricted to the final block."""
    L = model.config.num_layers
    config = replace(config or AttributionConfig(), target_class=c, rollout_range=(L - 1, L))
    return explain(model, token_ids, config, trace=trace).token_scores


def _ig_method(model, ids, c=None, config=None, trace=None):
    return ig_final(model, ids, c, (config or AttributionConfig()).steps, trace=trace)


def _ixg_method(model, ids, c=None, config=None, trace=None):
    return input_x_gradient(model, ids, c, trace=trace)


def _rollout_method(model, ids, c=None, config=None, trace=None):
    return attention_rollout(model, ids, c, trace=trace)


def _last_method(model, ids, c=None, config=None, trace=None):
    return attention_last(model, ids, c, trace=trace)


METHODS = {
    "calig": calig,
    "caig_last": caig_last,
    "ig": _ig_method,
    "ixg": _ixg_method,
    "attn_rollout": _rollout_method,
    "attn_last": _last_method,
}


def score_tokens(method: str, model: EncoderModel, token_ids, c: Optional[int] = None, config=None, trace=None):
    try:
        fn = METHODS[method]
    except KeyError:
        raise KeyError(f"unknown method {method!r}; choose from {sorted(METHODS)}") from None
    return np.asarray(fn(model, token_ids, c, config, trace=trace), dtype=np.float64)
