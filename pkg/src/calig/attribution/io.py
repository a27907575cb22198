"""JSON document form of an attribution result."""

from __future__ import annotations

import json
from typing import Optional

import numpy as np

from calig.attribution.pipeline import AttributionResult

FORMAT = "calig.attribution/1"


def result_to_dict(result: AttributionResult, include_fused: bool = False, extra: Optional[dict] = None) -> dict:
    doc = {
        "format": FORMAT,
        "model_fingerprint": result.model_fingerprint,
        "config": result.config.to_dict(),
        "target_class": int(result.target_class),
        "token_ids": [int(t) for t in result.token_ids],
        "special_positions": [int(i) for i in np.flatnonzero(result.special_mask)],
        "logits": result.logits.tolist(),
        "block_range": list(result.block_range),
        "layer_relevance": {str(l): r.tolist() for l, r in sorted(result.layer_relevance.items())},
        "rollout": result.rollout.tolist(),
        "positive": result.positive.tolist(),
        "negative": result.negative.tolist(),
        "token_scores": result.token_scores.tolist(),
    }
    if include_fused:
        doc["fused"] = [f.tolist() for f in result.fused]
    if extra:
        doc.update(extra)
    return doc


def write_result(result: AttributionResult, path, include_fused: bool = False, extra: Optional[dict] = None) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(result_to_dict(result, include_fused, extra), fh, indent=1, sort_keys=True)
        fh.write("\n")


def read_result(path) -> dict:
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("format") != FORMAT:
        raise ValueError(f"{path}: not an attribution document (format={doc.get('format')!r})")
    return doc
