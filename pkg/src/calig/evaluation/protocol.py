"""Repeated-seed benchmark on the planted-keyword task.

For each seed: generate the dataset, train an encoder, evaluate every method
on the held-out split. Aggregates are means over per-seed means; the
directional checks compare CA-LIG with the baselines on those aggregates.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence

from calig.encoder.model import EncoderConfig, EncoderModel
from calig.encoder.train import TrainHyperparams, train_synthetic
from calig.evaluation.benchmark import RANDOM, BenchmarkConfig, MetricReport, _stats, run_benchmark
from calig.evaluation.synthetic import SyntheticConfig, generate_synthetic, split

logger = logging.getLogger(__name__)

DEFAULT_METHODS = ("calig", "caig_last", "ig", "ixg", "attn_rollout", "attn_last", RANDOM)


@dataclass(frozen=True)
class ProtocolConfig:
    seeds: tuple = tuple(range(10))
    synthetic: SyntheticConfig = SyntheticConfig()
    encoder: EncoderConfig = EncoderConfig(max_seq_len=32)
    train: TrainHyperparams = TrainHyperparams(epochs=3)
    n_train: int = 2000
    eval_limit: Optional[int] = None  # first N held-out examples; None keeps all
    benchmark: BenchmarkConfig = BenchmarkConfig()
    methods: tuple = DEFAULT_METHODS
    min_accuracy: float = 0.95

    def to_dict(self) -> dict:
        return {
            "seeds": list(self.seeds),
            "synthetic": self.synthetic.to_dict(),
            "encoder": self.encoder.to_dict(),
            "train": self.train.to_dict(),
            "n_train": self.n_train,
            "eval_limit": self.eval_limit,
            "benchmark": self.benchmark.to_dict(),
            "methods": list(self.methods),
            "min_accuracy": self.min_accuracy,
        }


@dataclass
class SeedRun:
    seed: int
    train_accuracy: float
    heldout_accuracy: float
    report: MetricReport
    model: Optional[EncoderModel] = field(default=None, repr=False)

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "train_accuracy": self.train_accuracy,
            "heldout_accuracy": self.heldout_accuracy,
            "report": self.report.to_dict(),
        }


@dataclass
class Check:
    name: str
    passed: bool
    detail: str

    def line(self) -> str:
        return f"[{'PASS' if self.passed else 'FAIL'}] {self.name}: {self.detail}"


def train_seed(config: ProtocolConfig, seed: int):
    """Dataset and trained model for one seed; returns (result, held-out examples)."""
    data = generate_synthetic(replace(config.synthetic, seed=seed))
    train, test = split(data, config.n_train)
    result = train_synthetic(config.encoder, train, replace(config.train, seed=seed), heldout=test)
    return result, test


def run_seed(config: ProtocolConfig, seed: int, keep_model: bool = False) -> SeedRun:
    result, test = train_seed(config, seed)
    if config.eval_limit is not None:
        test = test[: config.eval_limit]
    report = run_benchmark(result.model, test, config.methods, replace(config.benchmark, seed=seed))
    logger.info("seed %d: held-out accuracy %.4f", seed, result.heldout_accuracy)
    return SeedRun(
        seed=seed,
        train_accuracy=result.train_accuracy,
        heldout_accuracy=result.heldout_accuracy,
        report=report,
        model=result.model if keep_model else None,
    )


def aggregate(runs: Sequence[SeedRun]) -> dict:
    """Across-seed mean and std of each per-seed mean, plus the per-seed rows."""
    runs = sorted(runs, key=lambda r: r.seed)
    per_seed = []
    for run in runs:
        for row in run.report.rows:
            per_seed.append({"seed": run.seed, **row})
    keys = []
    for row in per_seed:
        k = (row["method"], row["metric"], row["key"])
        if k not in keys:
            keys.append(k)
    rows = []
    for method, metric, key in keys:
        vals = [r["mean"] for r in per_seed if (r["method"], r["metric"], r["key"]) == (method, metric, key)]
        mean, std = _stats(vals)
        rows.append({"method": method, "metric": metric, "key": key, "mean": mean, "std": std, "n": len(vals)})
    return {
        "rows": rows,
        "per_seed": per_seed,
        "accuracy": [{"seed": r.seed, "train": r.train_accuracy, "heldout": r.heldout_accuracy} for r in runs],
        "failures": [{"seed": r.seed, **f} for r in runs for f in r.report.failures],
    }


def aggregate_value(agg: dict, method: str, metric: str, key) -> float:
    for row in agg["rows"]:
        if (row["method"], row["metric"], row["key"]) == (method, metric, str(key)):
            return row["mean"]
    raise KeyError((method, metric, key))


def directional_checks(agg: dict, min_accuracy: float = 0.95, auc_margin: float = 0.05) -> list[Check]:
    """Pass/fail lines for the comparisons the protocol is meant to reproduce."""
    checks = []
    accs = [a["heldout"] for a in agg["accuracy"]]
    if accs:
        worst = min(accs)
        checks.append(Check("held-out accuracy", worst >= min_accuracy, f"min over seeds {worst:.4f} (need >= {min_accuracy})"))
    methods = {r["method"] for r in agg["rows"]}
    metrics = {r["metric"] for r in agg["rows"]}
    if "calig" in methods and "f1" in metrics:
        f1 = aggregate_value(agg, "calig", "f1", 20)
        for other, name in (("ig", "IG"), ("attn_rollout", "attention rollout")):
            if other in methods:
                ref = aggregate_value(agg, other, "f1", 20)
                checks.append(Check(f"CA-LIG F1@20 >= {name}", f1 >= ref, f"{f1:.4f} vs {ref:.4f}"))
        if RANDOM in methods:
            ref = aggregate_value(agg, RANDOM, "f1", 20)
            checks.append(Check("CA-LIG F1@20 >= 3x random", f1 >= 3 * ref, f"{f1:.4f} vs 3 x {ref:.4f}"))
    if "calig" in methods and RANDOM in methods and "auc" in metrics:
        ins, ins_r = aggregate_value(agg, "calig", "auc", "insertion"), aggregate_value(agg, RANDOM, "auc", "insertion")
        dele, dele_r = aggregate_value(agg, "calig", "auc", "deletion"), aggregate_value(agg, RANDOM, "auc", "deletion")
        checks.append(
            Check("insertion AUC above random", ins > ins_r + auc_margin, f"{ins:.4f} vs {ins_r:.4f} + {auc_margin}")
        )
        checks.append(
            Check("deletion AUC below random", dele < dele_r - auc_margin, f"{dele:.4f} vs {dele_r:.4f} - {auc_margin}")
        )
    return checks


def run_protocol(
    config: ProtocolConfig = ProtocolConfig(),
    on_seed: Optional[Callable[[SeedRun], None]] = None,
    keep_models: bool = False,
) -> tuple[list[SeedRun], dict]:
    runs = []
    for seed in config.seeds:
        run = run_seed(config, seed, keep_model=keep_models)
        if on_seed is not None:
            on_seed(run)
        runs.append(run)
    return runs, aggregate(runs)
