"""Benchmark runner producing a MetricReport over a rationale-annotated dataset."""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import time
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np

from calig import num_threads
from calig.attribution.baselines import METHODS, score_tokens
from calig.attribution.pipeline import AttributionConfig
from calig.data import RationaleExample
from calig.encoder.model import EncoderModel, batch_logits, forward, softmax
from calig.evaluation.metrics import (
    F1_GRID,
    curve_auc,
    perturbation_fractions,
    perturbation_sequences,
    random_scores,
    token_f1,
)

logger = logging.getLogger(__name__)

RANDOM = "random"
MODES = ("insertion", "deletion")


@dataclass(frozen=True)
class BenchmarkConfig:
    attribution: AttributionConfig = AttributionConfig()
    p_grid: tuple = F1_GRID
    random_shuffles: int = 20
    seed: int = 0
    target: str = "predicted"
    metrics: tuple = ("f1", "auc")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["attribution"] = self.attribution.to_dict()
        d["p_grid"] = list(self.p_grid)
        d["metrics"] = list(self.metrics)
        return d


def _stats(values: Sequence[float]) -> tuple[float, float]:
    """Mean and population std with exactly rounded sums (order independent)."""
    n = len(values)
    if n == 0:
        return float("nan"), float("nan")
    mean = math.fsum(values) / n
    var = math.fsum((v - mean) ** 2 for v in values) / n
    return mean, math.sqrt(var)


@dataclass
class MetricReport:
    rows: list[dict] = field(default_factory=list)
    examples: list[dict] = field(default_factory=list)
    config: dict = field(default_factory=dict)
    runtime: dict = field(default_factory=dict)
    failures: list[dict] = field(default_factory=list)

    def value(self, method: str, metric: str, key) -> float:
        for row in self.rows:
            if row["method"] == method and row["metric"] == metric and row["key"] == str(key):
                return row["mean"]
        raise KeyError((method, metric, key))

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True)

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["method", "metric", "p_or_mode", "mean", "std", "n"])
        for r in self.rows:
            writer.writerow([r["method"], r["metric"], r["key"], repr(r["mean"]), repr(r["std"]), r["n"]])
        return buf.getvalue()


def _example_rng(seed: int, example_id: str) -> np.random.Generator:
    return np.random.default_rng([seed, zlib.crc32(example_id.encode())])


def _perturbation_aucs(model, ids, score_sets: list, c: int) -> list[dict]:
    """Insertion and deletion AUC for every score vector, from one batched forward."""
    pad = model.config.pad_token_id
    seqs = np.concatenate([perturbation_sequences(ids, sc, mode, pad) for sc in score_sets for mode in MODES])
    # Curves share their endpoints (and often more), so each distinct sequence runs once.
    unique, inverse = np.unique(seqs, axis=0, return_inverse=True)
    probs = softmax(batch_logits(model, unique))[:, c]
    curves = probs[inverse.reshape(-1)].reshape(len(score_sets) * len(MODES), -1)
    x = perturbation_fractions(len(ids))
    out = []
    for i in range(len(score_sets)):
        out.append({("auc", mode): curve_auc(curves[i * len(MODES) + j], x) for j, mode in enumerate(MODES)})
    return out


def evaluate_example(model: EncoderModel, ex: RationaleExample, methods, config: BenchmarkConfig, timings: dict) -> dict:
    trace = forward(model, ex.token_ids)
    c = trace.predicted_class if config.target == "predicted" else int(ex.label)
    ids = trace.token_ids
    special = (ids == model.config.cls_token_id) | (ids == model.config.pad_token_id)
    record = {"id": ex.id, "label": int(ex.label), "target": c, "metrics": {}}

    score_sets: dict[str, list[np.ndarray]] = {}
    for method in methods:
        if method == RANDOM:
            rng = _example_rng(config.seed, ex.id)
            score_sets[method] = [random_scores(len(ids), rng) for _ in range(config.random_shuffles)]
        else:
            t0 = time.perf_counter()
            score_sets[method] = [score_tokens(method, model, ids, c, config.attribution, trace=trace)]
            timings[method] = timings.get(method, 0.0) + time.perf_counter() - t0

    flat = [sc for method in methods for sc in score_sets[method]]
    aucs = _perturbation_aucs(model, ids, flat, c) if "auc" in config.metrics else [{} for _ in flat]
    pos = 0
    for method in methods:
        draws = []
        for sc in score_sets[method]:
            values = dict(aucs[pos])
            pos += 1
            if "f1" in config.metrics and ex.rationale_mask is not None:
                for p in config.p_grid:
                    values[("f1", str(p))] = token_f1(sc, ex.rationale_mask, p, special)
            draws.append(values)
        # The random baseline reports the mean over its shuffles.
        values = {k: math.fsum(d[k] for d in draws) / len(draws) for k in draws[0]}
        record["metrics"][method] = {f"{m}:{k}": v for (m, k), v in sorted(values.items())}
    return record


def run_benchmark(
    model: EncoderModel,
    dataset: Sequence[RationaleExample],
    methods: Sequence[str],
    config: BenchmarkConfig = BenchmarkConfig(),
    workers: Optional[int] = None,
) -> MetricReport:
    """Score every example with every method and aggregate per (method, metric, key).

    Examples may be evaluated on ``workers`` threads (default from
    ``CALIG_NUM_THREADS``); aggregation runs over records sorted by id, so
    the report does not depend on scheduling or dataset order.
    """
    for m in methods:
        if m != RANDOM and m not in METHODS:
            raise KeyError(f"unknown method {m!r}")
    if not config.metrics or set(config.metrics) - {"f1", "auc"}:
        raise ValueError(f"metrics must be a non-empty subset of ('f1', 'auc'), got {config.metrics!r}")
    if config.target not in ("predicted", "label"):
        raise ValueError(f"target must be 'predicted' or 'label', got {config.target!r}")
    report = MetricReport(config=config.to_dict())
    workers = num_threads() if workers is None else workers

    def one(ex):
        timings: dict = {}
        try:
            return evaluate_example(model, ex, methods, config, timings), timings, None
        except Exception as err:  # recorded per example, never fatal
            logger.warning("example %s failed: %s", ex.id, err)
            return None, timings, {"id": ex.id, "error": f"{type(err).__name__}: {err}"}

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(one, dataset))
    else:
        outcomes = [one(ex) for ex in dataset]
    timings: dict = {}
    for record, t, failure in outcomes:
        for m, v in t.items():
            timings[m] = timings.get(m, 0.0) + v
        if failure is None:
            report.examples.append(record)
        else:
            report.failures.append(failure)
    report.examples.sort(key=lambda r: r["id"])
    report.failures.sort(key=lambda f: f["id"])
    canonical = report.examples
    for method in methods:
        keys = sorted({k for r in canonical for k in r["metrics"][method]}, key=_key_order)
        for key in keys:
            vals = [r["metrics"][method][key] for r in canonical if key in r["metrics"][method]]
            metric, sub = key.split(":", 1)
            mean, std = _stats(vals)
            report.rows.append({"method": method, "metric": metric, "key": sub, "mean": mean, "std": std, "n": len(vals)})
    report.runtime = {m: timings.get(m, 0.0) for m in methods if m != RANDOM}
    return report


def _key_order(key: str):
    metric, sub = key.split(":", 1)
    return (metric, float(sub) if sub.replace(".", "", 1).isdigit() else math.inf, sub)
