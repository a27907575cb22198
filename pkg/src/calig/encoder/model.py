"""Post-norm transformer encoder classifier with a recorded forward trace.

Layer indexing is zero-based throughout: ``hidden_states[l]`` is the input
to block ``l`` for ``l < L`` and ``hidden_states[L]`` is the final encoder
output, so a trace holds ``L + 1`` states and ``L`` attention tensors.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np

from calig import tensor as T
from calig.tensor import Tensor


class ConfigError(ValueError):
    """Invalid model configuration."""


class InputError(ValueError):
    """Token sequence the model cannot consume."""


@dataclass(frozen=True)
class EncoderConfig:
    num_layers: int = 2
    num_heads: int = 4
    hidden_dim: int = 32
    ff_dim: int = 64
    vocab_size: int = 64
    max_seq_len: int = 64
    num_classes: int = 2
    cls_token_id: int = 1
    pad_token_id: int = 0

    def __post_init__(self):
        for name in ("num_layers", "num_heads", "hidden_dim", "ff_dim", "vocab_size", "max_seq_len"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if self.num_classes < 2:
            raise ConfigError(f"num_classes must be >= 2, got {self.num_classes}")
        if self.hidden_dim % self.num_heads:
            raise ConfigError(
                f"hidden_dim {self.hidden_dim} not divisible by num_heads {self.num_heads}"
            )
        if self.cls_token_id == self.pad_token_id:
            raise ConfigError("cls_token_id and pad_token_id must differ")
        for name in ("cls_token_id", "pad_token_id"):
            if not 0 <= getattr(self, name) < self.vocab_size:
                raise ConfigError(f"{name} must lie in [0, vocab_size)")

    @property
    def head_dim(self) -> int:
        return self.hidden_dim // self.num_heads

    def to_dict(self) -> dict:
        return asdict(self)


def parameter_shapes(config: EncoderConfig) -> dict[str, tuple]:
    """Ordered parameter manifest; this order is also the checkpoint order."""
    d, f = config.hidden_dim, config.ff_dim
    shapes = {
        "token_embedding": (config.vocab_size, d),
        "position_embedding": (config.max_seq_len, d),
    }
    for b in range(config.num_layers):
        p = f"blocks.{b}."
        for proj in ("q", "k", "v", "o"):
            shapes[p + f"attn.w_{proj}"] = (d, d)
            shapes[p + f"attn.b_{proj}"] = (d,)
        shapes[p + "ln1.gamma"] = (d,)
        shapes[p + "ln1.beta"] = (d,)
        shapes[p + "ff.w1"] = (d, f)
        shapes[p + "ff.b1"] = (f,)
        shapes[p + "ff.w2"] = (f, d)
        shapes[p + "ff.b2"] = (d,)
        shapes[p + "ln2.gamma"] = (d,)
        shapes[p + "ln2.beta"] = (d,)
    shapes["classifier.weight"] = (d, config.num_classes)
    shapes["classifier.bias"] = (config.num_classes,)
    return shapes


EMBEDDING_INIT_STD = 0.02


@dataclass
class EncoderModel:
    config: EncoderConfig
    params: dict[str, np.ndarray]

    def __post_init__(self):
        expected = parameter_shapes(self.config)
        if list(self.params) != list(expected):
            missing = set(expected) ^ set(self.params)
            raise ConfigError(f"parameter set does not match config: {sorted(missing) or 'order'}")
        for name, shape in expected.items():
            arr = np.asarray(self.params[name], dtype=np.float64)
            if arr.shape != shape:
                raise ConfigError(f"parameter {name} has shape {arr.shape}, expected {shape}")
            self.params[name] = arr

    @classmethod
    def initialize(cls, config: EncoderConfig, seed: int = 0, scheme: str = "standard") -> "EncoderModel":
        """Seeded initialization.

        ``standard``: weights uniform in +-1/sqrt(fan_in), zero biases, identity
        layer-norm affine, N(0, 0.02) embeddings. ``random``: additionally draws
        biases from the weight range and jitters the layer-norm affine by
        N(0, 0.1), giving an untrained model without the exactly-zero offsets
        that put the zero-embedding input on every layer norm's singular point.
        """
        if scheme not in ("standard", "random"):
            raise ConfigError(f"unknown init scheme {scheme!r}")
        rng = np.random.default_rng(seed)
        jitter = scheme == "random"
        params = {}
        for name, shape in parameter_shapes(config).items():
            leaf = name.rsplit(".", 1)[-1]
            if name.endswith("_embedding"):
                params[name] = rng.normal(0.0, EMBEDDING_INIT_STD, size=shape)
            elif leaf in ("gamma", "beta"):
                base = np.ones(shape) if leaf == "gamma" else np.zeros(shape)
                params[name] = base + rng.normal(0.0, 0.1, size=shape) if jitter else base
            elif leaf == "bias" or leaf.startswith("b_") or leaf in ("b1", "b2"):
                bound = 1.0 / math.sqrt(config.ff_dim if leaf == "b2" else config.hidden_dim)
                params[name] = rng.uniform(-bound, bound, size=shape) if jitter else np.zeros(shape)
            else:
                bound = 1.0 / math.sqrt(shape[0])
                params[name] = rng.uniform(-bound, bound, size=shape)
        return cls(config, params)

    def copy(self) -> "EncoderModel":
        return EncoderModel(self.config, {k: v.copy() for k, v in self.params.items()})

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        h.update(repr(sorted(self.config.to_dict().items())).encode())
        for name, arr in self.params.items():
            h.update(name.encode())
            h.update(np.ascontiguousarray(arr, dtype="<f8").tobytes())
        return h.hexdigest()[:16]


@dataclass
class ForwardTrace:
    """Everything the attribution pipeline reads from one forward pass."""

    token_ids: np.ndarray
    hidden_states: list[np.ndarray]
    attentions: list[np.ndarray]
    logits: np.ndarray
    predicted_class: int
    key_mask: np.ndarray
    pre_norm_states: list[np.ndarray] = field(default_factory=list)
    # Derived quantities (layer IG, attention gradients) shared between explainers.
    memo: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def seq_len(self) -> int:
        return int(self.token_ids.shape[0])


def validate_tokens(config: EncoderConfig, token_ids) -> np.ndarray:
    ids = np.asarray(token_ids)
    if ids.ndim != 1 or ids.size == 0:
        raise InputError("token_ids must be a non-empty 1-D sequence")
    if not np.issubdtype(ids.dtype, np.integer):
        raise InputError(f"token_ids must be integers, got dtype {ids.dtype}")
    ids = ids.astype(np.int64)
    if ids.size > config.max_seq_len:
        raise InputError(f"sequence length {ids.size} exceeds max_seq_len {config.max_seq_len}")
    bad = np.flatnonzero((ids < 0) | (ids >= config.vocab_size))
    if bad.size:
        raise InputError(
            f"token id {ids[bad[0]]} at position {bad[0]} outside vocabulary of size {config.vocab_size}"
        )
    if ids[0] != config.cls_token_id:
        raise InputError(f"sequence must start with cls token {config.cls_token_id}, got {ids[0]}")
    return ids


def key_mask_for(config: EncoderConfig, token_ids: np.ndarray) -> np.ndarray:
    """True where a position may be attended to (everything except padding)."""
    return np.asarray(token_ids) != config.pad_token_id


class ParamView:
    """Wraps model arrays as tensors once per forward run."""

    def __init__(self, model: EncoderModel, requires_grad: bool = False):
        self.tensors = {k: Tensor(v, requires_grad=requires_grad, name=k) for k, v in model.params.items()}

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]


def embed(model: EncoderModel, token_ids: np.ndarray, pv: Optional[ParamView] = None) -> Tensor:
    """Token plus position embeddings for ids of shape ``[B, s]``."""
    pv = pv or ParamView(model)
    s = token_ids.shape[-1]
    tok = T.embedding(pv["token_embedding"], token_ids)
    pos = T.getitem(pv["position_embedding"], slice(0, s))
    return tok + pos


def run_block(
    model: EncoderModel,
    b: int,
    x: Tensor,
    key_mask: np.ndarray,
    pv: ParamView,
    attention_override: Optional[Tensor] = None,
) -> tuple[Tensor, Tensor, Tensor]:
    """One post-norm block on ``x`` of shape ``[B, s, d]``.

    Returns (output, attention ``[B, h, s, s]``, pre-norm residual sum).
    """
    cfg = model.config
    B, s, d = x.shape
    h, dk = cfg.num_heads, cfg.head_dim
    p = f"blocks.{b}."

    def heads(t: Tensor) -> Tensor:
        return T.transpose(T.reshape(t, (B, s, h, dk)), (0, 2, 1, 3))

    q = heads(x @ pv[p + "attn.w_q"] + pv[p + "attn.b_q"])
    k = heads(x @ pv[p + "attn.w_k"] + pv[p + "attn.b_k"])
    v = heads(x @ pv[p + "attn.w_v"] + pv[p + "attn.b_v"])
    if attention_override is None:
        scores = T.scale(q @ T.swapaxes(k, -1, -2), 1.0 / math.sqrt(dk))
        attn = T.softmax_lastdim(scores, key_mask[:, None, None, :])
    else:
        attn = attention_override
    ctx = T.reshape(T.transpose(attn @ v, (0, 2, 1, 3)), (B, s, d))
    attn_out = ctx @ pv[p + "attn.w_o"] + pv[p + "attn.b_o"]
    y1 = T.layer_norm(x + attn_out, pv[p + "ln1.gamma"], pv[p + "ln1.beta"])
    ff = T.gelu(y1 @ pv[p + "ff.w1"] + pv[p + "ff.b1"]) @ pv[p + "ff.w2"] + pv[p + "ff.b2"]
    pre = y1 + ff
    out = T.layer_norm(pre, pv[p + "ln2.gamma"], pv[p + "ln2.beta"])
    return out, attn, pre


def classify(model: EncoderModel, final_hidden: Tensor, pv: ParamView) -> Tensor:
    """Affine head on the cls position (index 0); returns ``[B, C]`` logits."""
    # A [B, 1, d] stack multiplies each example separately, so a row's logits do
    # not depend on what else shares the batch (a flat [B, d] GEMM does).
    cls_state = T.getitem(final_hidden, (slice(None), slice(0, 1)))
    logits = cls_state @ pv["classifier.weight"] + pv["classifier.bias"]
    return T.reshape(logits, (final_hidden.shape[0], model.config.num_classes))


def _as_batch(hidden) -> tuple[Tensor, bool]:
    t = hidden if isinstance(hidden, Tensor) else Tensor(hidden)
    if t.ndim == 2:
        return T.reshape(t, (1,) + t.shape), True
    if t.ndim != 3:
        raise InputError(f"hidden must be [s, d] or [B, s, d], got {t.shape}")
    return t, False


def forward_from_hidden(
    model: EncoderModel,
    layer: int,
    hidden,
    key_mask: Optional[np.ndarray] = None,
    attention_overrides: Optional[dict[int, Tensor]] = None,
    pv: Optional[ParamView] = None,
) -> tuple[Tensor, list[Tensor]]:
    """Run blocks ``layer .. L-1`` and the classifier from an arbitrary state.

    ``hidden`` is ``[s, d]`` or a batch ``[B, s, d]`` (array or tensor); pass a
    tensor with ``requires_grad`` and an active tape to differentiate through
    the suffix. ``layer == L`` runs the classifier only. Logits come back as
    ``[C]`` for unbatched input and ``[B, C]`` otherwise, together with the
    attention tensors of the blocks that ran.
    """
    L = model.config.num_layers
    if not 0 <= layer <= L:
        raise IndexError(f"layer {layer} outside [0, {L}]")
    x, squeeze = _as_batch(hidden)
    B, s, d = x.shape
    if d != model.config.hidden_dim:
        raise InputError(f"hidden dim {d} does not match model dim {model.config.hidden_dim}")
    if key_mask is None:
        key_mask = np.ones((B, s), dtype=bool)
    key_mask = np.broadcast_to(np.asarray(key_mask, dtype=bool), (B, s))
    pv = pv or ParamView(model)
    overrides = attention_overrides or {}
    attns = []
    for b in range(layer, L):
        x, attn, _ = run_block(model, b, x, key_mask, pv, overrides.get(b))
        attns.append(attn)
    logits = classify(model, x, pv)
    if squeeze:
        logits = T.reshape(logits, (logits.shape[-1],))
    return logits, attns


def forward(model: EncoderModel, token_ids: Sequence[int]) -> ForwardTrace:
    ids = validate_tokens(model.config, token_ids)
    mask = key_mask_for(model.config, ids)[None, :]
    pv = ParamView(model)
    x = embed(model, ids[None, :], pv)
    hidden = [x.data[0]]
    attentions, pre_norm = [], []
    for b in range(model.config.num_layers):
        x, attn, pre = run_block(model, b, x, mask, pv)
        hidden.append(x.data[0])
        attentions.append(attn.data[0])
        pre_norm.append(pre.data[0])
    logits = classify(model, x, pv).data[0]
    return ForwardTrace(
        token_ids=ids,
        hidden_states=hidden,
        attentions=attentions,
        logits=logits,
        predicted_class=int(np.argmax(logits)),
        key_mask=mask[0],
        pre_norm_states=pre_norm,
    )


def batch_logits(model: EncoderModel, token_batch: np.ndarray) -> np.ndarray:
    """Inference logits ``[B, C]`` for equal-length sequences ``[B, s]``."""
    ids = np.asarray(token_batch, dtype=np.int64)
    pv = ParamView(model)
    x = embed(model, ids, pv)
    mask = key_mask_for(model.config, ids)
    for b in range(model.config.num_layers):
        x, _, _ = run_block(model, b, x, mask, pv)
    return classify(model, x, pv).data


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)
