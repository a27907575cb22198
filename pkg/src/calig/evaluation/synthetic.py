"""Planted-keyword classification task with exact gold rationales.

Vocabulary layout: ``pad_id`` and ``cls_id`` first (0 and 1 by default), then
one disjoint keyword pool per class, then filler tokens. Every sequence is
``[CLS]`` followed by filler with ``keywords_per_class`` distinct keywords of
its class planted at random positions; the rationale mask is true exactly
at those positions.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from calig.data import RationaleExample


class SyntheticConfigError(ValueError):
    pass


@dataclass(frozen=True)
class SyntheticConfig:
    vocab_size: int = 64
    seq_len: int = 32
    num_classes: int = 2
    keywords_per_class: int = 2
    keyword_pool_size: int = 4
    n_examples: int = 2500
    seed: int = 0
    pad_id: int = 0
    cls_id: int = 1

    def __post_init__(self):
        if self.keyword_pool_size < self.keywords_per_class or self.keywords_per_class < 1:
            raise SyntheticConfigError("need 1 <= keywords_per_class <= keyword_pool_size")
        if self.seq_len < self.keywords_per_class + 2:
            raise SyntheticConfigError(
                f"seq_len {self.seq_len} too short for {self.keywords_per_class} keywords"
            )
        if self.num_classes < 2:
            raise SyntheticConfigError("num_classes must be >= 2")
        if sorted((self.pad_id, self.cls_id)) != [0, 1]:
            raise SyntheticConfigError("pad_id and cls_id must be 0 and 1 in some order")
        if self.filler_start >= self.vocab_size:
            raise SyntheticConfigError(
                f"vocab_size {self.vocab_size} leaves no filler tokens after keyword pools"
            )

    @property
    def filler_start(self) -> int:
        return 2 + self.num_classes * self.keyword_pool_size

    def keyword_pool(self, cls: int) -> np.ndarray:
        start = 2 + cls * self.keyword_pool_size
        return np.arange(start, start + self.keyword_pool_size)

    def to_dict(self) -> dict:
        return asdict(self)


def generate_synthetic(config: SyntheticConfig) -> list[RationaleExample]:
    rng = np.random.default_rng(config.seed)
    k = config.keywords_per_class
    out = []
    for i in range(config.n_examples):
        label = int(rng.integers(config.num_classes))
        ids = rng.integers(config.filler_start, config.vocab_size, size=config.seq_len)
        ids[0] = config.cls_id
        positions = 1 + rng.choice(config.seq_len - 1, size=k, replace=False)
        ids[positions] = rng.choice(config.keyword_pool(label), size=k, replace=False)
        mask = np.zeros(config.seq_len, dtype=bool)
        mask[positions] = True
        out.append(RationaleExample(id=f"syn-{config.seed}-{i}", token_ids=ids, label=label, rationale_mask=mask))
    return out


def split(examples, n_train: int):
    return list(examples[:n_train]), list(examples[n_train:])
