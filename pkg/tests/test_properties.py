"""Property-based checks of the fusion and metric algebra."""

import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from calig.attribution import decompose_signed, fuse_block, normalize_relevance, rollout
from calig.evaluation.metrics import curve_auc, perturbation_fractions, perturbation_sequences, token_f1

finite = st.floats(-1e6, 1e6, allow_nan=False, allow_infinity=False)


@st.composite
def fusion_inputs(draw):
    s = draw(st.integers(1, 8))
    h = draw(st.integers(1, 3))
    grads = draw(arrays(np.float64, (h, s, s), elements=finite))
    r = draw(arrays(np.float64, (s,), elements=st.floats(-1, 1)))
    lam = draw(st.floats(0, 1))
    return grads, r, lam


@settings(max_examples=300, deadline=None)
@given(fusion_inputs())
def test_fused_rows_unit_norm(inputs):
    out = fuse_block(*inputs)
    assert np.all(np.abs(out).sum(axis=1) == 1.0)


@settings(max_examples=100, deadline=None)
@given(st.lists(fusion_inputs(), min_size=1, max_size=4).filter(lambda xs: len({x[1].size for x in xs}) == 1))
def test_rollout_rows_bounded_and_split_exact(stack):
    c = rollout([fuse_block(*x) for x in stack])
    assert np.all(np.abs(c).sum(axis=1) <= 1 + 1e-9)
    pos, neg = decompose_signed(c)
    assert (pos + neg).tobytes() == c.tobytes()


@settings(max_examples=200, deadline=None)
@given(arrays(np.float64, st.integers(1, 30), elements=finite), st.sampled_from(["symmetric_minmax", "l1"]))
def test_normalization_bounds(r, scheme):
    out = normalize_relevance(r, scheme)
    assert np.all(np.abs(out) <= 1 + 1e-12)
    if scheme == "symmetric_minmax" and r.max() > r.min():
        assert out.min() == -1.0 and out.max() == 1.0


@settings(max_examples=200, deadline=None)
@given(st.data())
def test_f1_in_unit_interval_and_permutation_free(data):
    s = data.draw(st.integers(2, 40))
    mask = data.draw(arrays(bool, (s,)))
    mask[data.draw(st.integers(0, s - 1))] = True
    scores = data.draw(arrays(np.float64, (s,), elements=st.floats(-5, 5), unique=True))
    p = data.draw(st.sampled_from([5, 10, 15, 20, 30, 40, 50, 100]))
    f = token_f1(scores, mask, p)
    assert 0.0 <= f <= 1.0
    perm = np.random.default_rng(data.draw(st.integers(0, 100))).permutation(s)
    assert token_f1(scores[perm], mask[perm], p) == f


@settings(max_examples=200, deadline=None)
@given(st.integers(2, 60), st.data())
def test_perturbation_schedule(s, data):
    ids = np.arange(s) + 5
    scores = data.draw(arrays(np.float64, (s,), elements=st.floats(-5, 5)))
    x = perturbation_fractions(s)
    assert x[0] == 0.0 and x[-1] == 1.0 and np.all(np.diff(x) >= 0)
    dele = perturbation_sequences(ids, scores, "deletion", 0)
    ins = perturbation_sequences(ids, scores, "insertion", 0)
    # At every point the deleted positions are exactly the restored ones; CLS is never touched.
    assert np.array_equal((dele == 0)[:, 1:], (ins != 0)[:, 1:])
    assert np.all(dele[:, 0] == ids[0]) and np.all(ins[:, 0] == ids[0])
    curve = data.draw(arrays(np.float64, (21,), elements=st.floats(0, 1)))
    assert -1e-12 <= curve_auc(curve, x) <= 1 + 1e-12
