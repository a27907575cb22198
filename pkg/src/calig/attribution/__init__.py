from calig.attribution.baselines import (
    METHODS,
    attention_last,
    attention_rollout,
    caig_last,
    ig_final,
    input_x_gradient,
    score_tokens,
)
from calig.attribution.io import read_result, result_to_dict, write_result
from calig.attribution.pipeline import (
    AttributionConfig,
    AttributionConfigError,
    AttributionResult,
    attention_gradients,
    baseline_hidden_states,
    decompose_signed,
    explain,
    fuse_block,
    integrated_gradients,
    interpolate_hidden,
    layer_ig,
    normalize_relevance,
    rollout,
    row_normalize,
    token_relevance,
)
from calig.attribution.sensitivity import LayerRecord, layer_sensitivity_profile

__all__ = [
    "METHODS",
    "AttributionConfig",
    "AttributionConfigError",
    "AttributionResult",
    "LayerRecord",
    "attention_gradients",
    "attention_last",
    "attention_rollout",
    "baseline_hidden_states",
    "caig_last",
    "decompose_signed",
    "explain",
    "fuse_block",
    "ig_final",
    "input_x_gradient",
    "integrated_gradients",
    "interpolate_hidden",
    "layer_ig",
    "layer_sensitivity_profile",
    "normalize_relevance",
    "read_result",
    "result_to_dict",
    "rollout",
    "row_normalize",
    "score_tokens",
    "token_relevance",
    "write_result",
]
