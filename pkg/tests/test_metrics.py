import numpy as np
import pytest

from calig.data import DatasetError, RationaleExample, read_jsonl, write_jsonl
from calig.encoder import forward
from calig.encoder.model import softmax
from calig.evaluation.benchmark import BenchmarkConfig, run_benchmark
from calig.evaluation.metrics import (
    F1_GRID,
    MetricContractError,
    confidence_curve,
    curve_auc,
    perturbation_auc,
    perturbation_fractions,
    perturbation_sequences,
    random_scores,
    token_f1,
)
from calig.evaluation.synthetic import SyntheticConfig, SyntheticConfigError, generate_synthetic

from conftest import TINY, random_ids


# --- token F1 --------------------------------------------------------------------


def test_f1_minimum_of_five_tokens():
    scores = np.array([0, 0, 9, 8, 7, 6, 5, 0, 0, 0], dtype=float)
    mask = np.zeros(10, dtype=bool)
    mask[[2, 3]] = True
    assert abs(token_f1(scores, mask, 5) - 2 * 0.4 * 1.0 / 1.4) < 1e-15
    assert round(token_f1(scores, mask, 5), 3) == 0.571


def test_f1_perfect_and_disjoint():
    s = 20
    mask = np.zeros(s, dtype=bool)
    mask[[1, 4, 7, 9, 12]] = True
    assert token_f1(mask.astype(float), mask, 25) == 1.0
    assert token_f1((~mask).astype(float), mask, 25) == 0.0


def test_f1_excludes_special_positions():
    mask = np.array([True, True, False, False, False, False, False])
    special = np.array([True, False, False, False, False, False, True])
    scores = np.array([9.0, 1, 0, 0, 0, 0, 8])
    # CLS is gold but special: only position 1 counts, k = 5 over 5 eligible.
    assert abs(token_f1(scores, mask, 10, special) - 2 * 0.2 / 1.2) < 1e-15


def test_f1_ties_break_toward_earlier_positions():
    mask = np.zeros(12, dtype=bool)
    mask[[0, 1]] = True
    assert token_f1(np.zeros(12), mask, 5) == token_f1(-np.arange(12.0), mask, 5)


def test_f1_contract_errors():
    with pytest.raises(MetricContractError):
        token_f1(np.ones(4), np.zeros(4, dtype=bool), 10)
    with pytest.raises(MetricContractError):
        token_f1(np.ones(4), np.ones(4, dtype=bool), 0)
    with pytest.raises(MetricContractError):
        token_f1(np.ones(4), np.ones(4, dtype=bool), 101)
    with pytest.raises(MetricContractError):
        token_f1(np.ones(4), np.ones(3, dtype=bool), 10)


def test_f1_swap_in_gold_never_lowers():
    rng = np.random.default_rng(0)
    for _ in range(200):
        s = int(rng.integers(6, 30))
        mask = rng.random(s) < 0.3
        mask[rng.integers(s)] = True
        scores = rng.normal(size=s)
        p = float(rng.choice(F1_GRID))
        order = np.argsort(-scores, kind="stable")
        k = min(max(int(np.ceil(p * s / 100)), 5), s)
        chosen, rest = order[:k], order[k:]
        out_gold = [j for j in rest if mask[j]]
        in_plain = [j for j in chosen if not mask[j]]
        if not out_gold or not in_plain:
            continue
        swapped = scores.copy()
        swapped[out_gold[0]], swapped[in_plain[-1]] = scores[in_plain[-1]], scores[out_gold[0]]
        assert token_f1(swapped, mask, p) >= token_f1(scores, mask, p)


# --- perturbation curves -------------------------------------------------------------


def test_perturbation_sequences_shape_and_schedule():
    ids = np.arange(1, 12)
    ids[0] = TINY.cls_token_id
    seqs = perturbation_sequences(ids, np.arange(11.0), "deletion", TINY.pad_token_id)
    assert seqs.shape == (21, 11)
    assert np.all(seqs[:, 0] == TINY.cls_token_id)
    removed = (seqs == TINY.pad_token_id).sum(axis=1)
    assert removed[0] == 0 and removed[1] == 1 and removed[-1] == 10
    assert np.all(np.diff(removed) >= 0)
    ins = perturbation_sequences(ids, np.arange(11.0), "insertion", TINY.pad_token_id)
    assert np.array_equal(ins[-1], ids)
    assert np.all(ins[0, 1:] == TINY.pad_token_id)
    with pytest.raises(MetricContractError):
        perturbation_sequences(ids, np.arange(11.0), "blur", 0)
    with pytest.raises(MetricContractError):
        perturbation_sequences(ids, np.arange(5.0), "deletion", 0)


def test_insertion_endpoint_is_clean_confidence(tiny_model, rng):
    ids = random_ids(rng, TINY, 10)
    clean = softmax(forward(tiny_model, ids).logits[None])[0]
    for c in (0, 1):
        curve = confidence_curve(tiny_model, ids, rng.normal(size=10), "insertion", c)
        assert curve[-1] == clean[c]


def test_endpoint_identity_between_modes(tiny_model, rng):
    ids = random_ids(rng, TINY, 9)
    flat = np.zeros(9)
    dele = confidence_curve(tiny_model, ids, flat, "deletion", 1)
    ins = confidence_curve(tiny_model, ids, flat, "insertion", 1)
    assert dele[0] == ins[-1]
    assert dele[-1] == ins[0]


def test_auc_bounds_and_examples(tiny_model, rng):
    assert curve_auc(np.ones(21)) == 1.0
    assert curve_auc(np.zeros(21)) == 0.0
    assert abs(curve_auc(np.linspace(0, 1, 21)) - 0.5) < 1e-15
    # Points past full coverage add no area.
    x = perturbation_fractions(11)
    assert x[0] == 0.0 and x[10] == 1.0 and x[-1] == 1.0
    assert curve_auc(np.r_[np.ones(11), np.zeros(10)], x) == 1.0
    for _ in range(20):
        ids = random_ids(rng, TINY, int(rng.integers(2, 12)))
        for mode in ("insertion", "deletion"):
            a = perturbation_auc(tiny_model, ids, rng.normal(size=ids.size), mode, int(rng.integers(2)))
            assert 0.0 <= a <= 1.0


def test_random_ranking_has_no_direction(trained):
    result, test = trained
    model = result.model
    rng = np.random.default_rng(7)
    ins, dele = [], []
    for ex in test[:20]:
        c = forward(model, ex.token_ids).predicted_class
        for _ in range(20):
            sc = random_scores(len(ex.token_ids), rng)
            ins.append(perturbation_auc(model, ex.token_ids, sc, "insertion", c))
            dele.append(perturbation_auc(model, ex.token_ids, sc, "deletion", c))
    assert abs(np.mean(ins) - np.mean(dele)) < 0.05


# --- synthetic data and records ------------------------------------------------------------


def test_synthetic_construction():
    cfg = SyntheticConfig(n_examples=300, seed=4)
    data = generate_synthetic(cfg)
    for ex in data:
        ids = np.array(ex.token_ids)
        mask = np.array(ex.rationale_mask)
        assert mask.sum() == cfg.keywords_per_class
        assert ids[0] == cfg.cls_id
        assert np.all(np.isin(ids[mask], cfg.keyword_pool(ex.label)))
        other = cfg.keyword_pool(1 - ex.label)
        assert not np.isin(ids, other).any()
        assert not np.isin(ids[~mask], cfg.keyword_pool(ex.label)).any()
    assert generate_synthetic(cfg) == data
    assert generate_synthetic(SyntheticConfig(n_examples=300, seed=5)) != data


def test_synthetic_config_errors():
    with pytest.raises(SyntheticConfigError):
        SyntheticConfig(seq_len=3)
    with pytest.raises(SyntheticConfigError):
        SyntheticConfig(keywords_per_class=5, keyword_pool_size=4)
    with pytest.raises(SyntheticConfigError):
        SyntheticConfig(vocab_size=10)


def test_jsonl_round_trip_and_errors(tmp_path):
    data = generate_synthetic(SyntheticConfig(n_examples=5))
    data.append(RationaleExample(id="plain", token_ids=[1, 30, 31], label=0))
    path = tmp_path / "d.jsonl"
    write_jsonl(data, path)
    assert read_jsonl(path) == data
    path.write_text('{"id": "a", "token_ids": [1, 2], "label": 0}\n{"id": "b"}\n')
    with pytest.raises(DatasetError, match=":2:"):
        read_jsonl(path)
    with pytest.raises(DatasetError):
        RationaleExample(id="x", token_ids=[1, 2, 3], label=0, rationale_mask=[True])


# --- benchmark -------------------------------------------------------------------------


def _small_set(n=6):
    cfg = SyntheticConfig(vocab_size=TINY.vocab_size, seq_len=10, keyword_pool_size=3, n_examples=n, seed=2)
    return generate_synthetic(cfg)


FAST = BenchmarkConfig(random_shuffles=3)


def test_report_structure(tiny_model):
    methods = ["calig", "ig", "attn_last", "random"]
    report = run_benchmark(tiny_model, _small_set(), methods, FAST)
    f1_rows = [(r["method"], r["key"]) for r in report.rows if r["metric"] == "f1"]
    assert sorted(f1_rows) == sorted((m, str(p)) for m in methods for p in F1_GRID)
    auc_rows = [(r["method"], r["key"]) for r in report.rows if r["metric"] == "auc"]
    assert sorted(auc_rows) == sorted((m, mode) for m in methods for mode in ("deletion", "insertion"))
    for r in report.rows:
        assert 0.0 <= r["mean"] <= 1.0 and r["n"] == 6
    assert set(report.runtime) == {"calig", "ig", "attn_last"}
    assert report.config["random_shuffles"] == 3
    lines = report.to_csv().splitlines()
    assert lines[0] == "method,metric,p_or_mode,mean,std,n" and len(lines) == len(report.rows) + 1


def test_report_is_reproducible_and_order_free(tiny_model):
    data = _small_set()
    methods = ["calig", "random"]
    a = run_benchmark(tiny_model, data, methods, FAST)
    b = run_benchmark(tiny_model, data, methods, FAST)
    c = run_benchmark(tiny_model, data[::-1], methods, FAST, workers=3)
    assert a.rows == b.rows == c.rows
    assert a.examples == c.examples


def test_failures_are_recorded_not_fatal(tiny_model):
    data = _small_set(3)
    data.append(RationaleExample(id="bad", token_ids=[1, 99, 3], label=0, rationale_mask=[False, True, False]))
    report = run_benchmark(tiny_model, data, ["ig"], FAST)
    assert [f["id"] for f in report.failures] == ["bad"]
    assert "InputError" in report.failures[0]["error"]
    assert all(r["n"] == 3 for r in report.rows)


def test_benchmark_argument_errors(tiny_model):
    with pytest.raises(KeyError):
        run_benchmark(tiny_model, _small_set(2), ["lrp"])
    with pytest.raises(ValueError):
        run_benchmark(tiny_model, _small_set(2), ["ig"], BenchmarkConfig(metrics=("f1", "iou")))


def test_f1_only_and_auc_only(tiny_model):
    data = _small_set(2)
    f1 = run_benchmark(tiny_model, data, ["ig"], BenchmarkConfig(metrics=("f1",)))
    auc = run_benchmark(tiny_model, data, ["ig"], BenchmarkConfig(metrics=("auc",)))
    assert {r["metric"] for r in f1.rows} == {"f1"}
    assert {r["metric"] for r in auc.rows} == {"auc"}
