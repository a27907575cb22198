"""Rationale-annotated examples and their line-delimited JSON form."""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Iterable, Iterator, Optional

import numpy as np


class DatasetError(ValueError):
    pass


@dataclass(frozen=True)
class RationaleExample:
    id: str
    token_ids: tuple
    label: int
    rationale_mask: Optional[tuple] = None

    def __post_init__(self):
        object.__setattr__(self, "token_ids", tuple(int(t) for t in self.token_ids))
        if self.rationale_mask is not None:
            mask = tuple(bool(m) for m in self.rationale_mask)
            if len(mask) != len(self.token_ids):
                raise DatasetError(
                    f"example {self.id}: mask length {len(mask)} != sequence length {len(self.token_ids)}"
                )
            object.__setattr__(self, "rationale_mask", mask)

    def to_json(self) -> dict:
        record = {"id": self.id, "token_ids": list(self.token_ids), "label": int(self.label)}
        if self.rationale_mask is not None:
            record["rationale_mask"] = [bool(m) for m in self.rationale_mask]
        return record

    @classmethod
    def from_json(cls, record: dict) -> "RationaleExample":
        try:
            return cls(
                id=str(record["id"]),
                token_ids=record["token_ids"],
                label=int(record["label"]),
                rationale_mask=record.get("rationale_mask"),
            )
        except KeyError as err:
            raise DatasetError(f"record missing field {err}") from None


def write_jsonl(examples: Iterable[RationaleExample], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for ex in examples:
            fh.write(json.dumps(ex.to_json(), sort_keys=True) + "\n")


def read_jsonl(path) -> list[RationaleExample]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                out.append(RationaleExample.from_json(json.loads(line)))
            except (json.JSONDecodeError, DatasetError, TypeError, ValueError) as err:
                raise DatasetError(f"{path}:{lineno}: {err}") from None
    return out


def pad_batch(examples, pad_id: int) -> np.ndarray:
    width = max(len(ex.token_ids) for ex in examples)
    batch = np.full((len(examples), width), pad_id, dtype=np.int64)
    for i, ex in enumerate(examples):
        batch[i, : len(ex.token_ids)] = ex.token_ids
    return batch


def iter_batches(items, size: int) -> Iterator[list]:
    for i in range(0, len(items), size):
        yield items[i : i + size]
