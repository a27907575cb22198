"""Per-block sensitivity profile: relevance mass, classifier alignment, cls attention."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from calig.attribution.pipeline import (
    AttributionConfig,
    layer_ig,
    token_relevance,
)
from calig.encoder.model import EncoderModel, forward


@dataclass
class LayerRecord:
    block: int
    calig_relevance_norm: float
    relevance: np.ndarray
    classifier_contribution: np.ndarray
    cls_contribution: float
    mean_cls_attention: float

    def to_dict(self) -> dict:
        return {
            "block": self.block,
            "calig_relevance_norm": self.calig_relevance_norm,
            "relevance": self.relevance.tolist(),
            "classifier_contribution": self.classifier_contribution.tolist(),
            "cls_contribution": self.cls_contribution,
            "mean_cls_attention": self.mean_cls_attention,
        }


def layer_sensitivity_profile(
    model: EncoderModel,
    token_ids,
    config: AttributionConfig = AttributionConfig(),
    states: str = "post_norm",
) -> list[LayerRecord]:
    """One record per block, every signal taken at that block's output.

    Relevance is the IG relevance of the block's output hidden state; its L1
    norm is ``calig_relevance_norm``. For the last block this is the final
    hidden state, where the head reads only the cls position. The classifier
    contribution projects each token's block output through the head,
    ``h @ W_c[:, c] + b_c[c]``; ``states="pre_norm"`` uses the residual sum
    before the block's closing layer norm instead. ``mean_cls_attention`` is
    the attention mass on the cls column averaged over heads and queries.
    """
    if states not in ("post_norm", "pre_norm"):
        raise ValueError(f"states must be 'post_norm' or 'pre_norm', got {states!r}")
    trace = forward(model, token_ids)
    c = trace.predicted_class if config.target_class is None else config.target_class
    cfg = replace(config, target_class=c)
    w = model.params["classifier.weight"][:, c]
    bias = model.params["classifier.bias"][c]
    records = []
    for b in range(model.config.num_layers):
        r = token_relevance(layer_ig(model, trace, b + 1, cfg))
        h = trace.hidden_states[b + 1] if states == "post_norm" else trace.pre_norm_states[b]
        contrib = h @ w + bias
        records.append(
            LayerRecord(
                block=b,
                calig_relevance_norm=float(np.abs(r).sum()),
                relevance=r,
                classifier_contribution=contrib,
                cls_contribution=float(contrib[0]),
                mean_cls_attention=float(trace.attentions[b][:, :, 0].mean()),
            )
        )
    return records
