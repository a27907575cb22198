import threading

import numpy as np
import pytest

from calig import tensor as T
from calig.tensor import Tape, TapeContractError, Tensor, TensorShapeError

from conftest import analytic_grads, numeric_grad, rel_err, value_of


def _weighted(out: Tensor, w: np.ndarray) -> Tensor:
    return T.reduce_sum(T.mul(out, Tensor(w)))


def _ops(rng):
    """(name, shapes, builder) triples; builders map input tensors to an array-valued output."""
    mask = rng.random((3, 5)) > 0.3
    mask[:, 0] = True
    ids = rng.integers(0, 6, size=(2, 4))
    return [
        ("add", [(3, 4), (4,)], lambda a, b: T.add(a, b)),
        ("sub", [(3, 4), (3, 1)], lambda a, b: T.sub(a, b)),
        ("mul", [(2, 3), (2, 3)], lambda a, b: T.mul(a, b)),
        ("scale", [(5,)], lambda a: T.scale(a, -1.7)),
        ("matmul", [(3, 3), (3, 3)], lambda a, b: T.matmul(a, b)),
        ("matmul_batched", [(2, 3, 4), (4, 2)], lambda a, b: T.matmul(a, b)),
        ("gelu", [(4, 3)], lambda a: T.gelu(a)),
        ("softmax", [(3, 5)], lambda a: T.softmax_lastdim(a)),
        ("softmax_masked", [(3, 5)], lambda a: T.softmax_lastdim(a, mask)),
        ("layer_norm", [(3, 6), (6,), (6,)], lambda x, g, b: T.layer_norm(x, g, b)),
        ("embedding", [(6, 3)], lambda w: T.embedding(w, ids)),
        ("concat", [(2, 3), (1, 3)], lambda a, b: T.concat([a, b], axis=0)),
        ("slice", [(4, 5)], lambda a: T.getitem(a, (slice(1, 3), slice(None, None, 2)))),
        ("sum_axis", [(3, 4, 2)], lambda a: T.reduce_sum(a, axis=1)),
        ("mean", [(3, 4)], lambda a: T.mean(a, axis=0, keepdims=True)),
        ("transpose", [(2, 3, 4)], lambda a: T.transpose(a, (2, 0, 1))),
        ("swapaxes", [(2, 3, 4)], lambda a: T.swapaxes(a, -1, -2)),
        ("reshape", [(2, 6)], lambda a: T.reshape(a, (3, 4))),
        ("cross_entropy", [(4, 3)], lambda a: T.reshape(T.cross_entropy(a, [0, 2, 1, 2]), (1,))),
    ]


def test_every_op_matches_finite_differences_over_many_trials():
    rng = np.random.default_rng(0)
    trials, worst = 0, 0.0
    for _ in range(6):
        for name, shapes, op in _ops(rng):
            arrays = [rng.uniform(-2, 2, size=s) for s in shapes]
            probe = op(*[Tensor(a) for a in arrays])
            w = rng.uniform(-1, 1, size=probe.shape)

            def build(*ts):
                return _weighted(op(*ts), w)

            grads = analytic_grads(build, arrays)
            for i, arr in enumerate(arrays):
                def f(x, i=i):
                    args = [a if j != i else x for j, a in enumerate(arrays)]
                    return value_of(build, args)

                err = rel_err(grads[i], numeric_grad(f, arr.copy()))
                worst = max(worst, err)
                assert err < 1e-4, (name, i, err)
            trials += 1
    assert trials >= 100
    assert worst < 1e-4


def test_matmul_examples_and_tight_gradient():
    assert np.array_equal(T.matmul(Tensor(np.eye(2)), Tensor([[2.0, 3], [4, 5]])).data, [[2, 3], [4, 5]])
    assert T.matmul(Tensor([[1.0, 2]]), Tensor([[3.0], [4]])).data.tolist() == [[11.0]]
    rng = np.random.default_rng(3)
    a, b = rng.uniform(-2, 2, (3, 3)), rng.uniform(-2, 2, (3, 3))
    build = lambda x, y: T.reduce_sum(T.matmul(x, y))
    ga, _ = analytic_grads(build, [a, b])
    assert rel_err(ga, numeric_grad(lambda x: value_of(build, [x, b]), a.copy())) < 1e-6


def test_matmul_shape_error_names_both_shapes():
    with pytest.raises(TensorShapeError, match=r"\(2, 3\).*\(4, 2\)"):
        T.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((4, 2))))


def test_softmax_examples():
    assert np.allclose(T.softmax_lastdim(Tensor([0.0, 0.0])).data, [0.5, 0.5])
    big = T.softmax_lastdim(Tensor([1000.0, 0.0])).data
    assert np.all(np.isfinite(big))
    assert abs(big[0] - 1.0) < 1e-12 and abs(big[1]) < 1e-12
    rows = T.softmax_lastdim(Tensor(np.random.default_rng(0).normal(size=(50, 7)) * 30)).data
    assert np.max(np.abs(rows.sum(axis=-1) - 1.0)) < 1e-12
    assert np.all((rows > 0) & (rows <= 1))


def test_softmax_backward_tight():
    rng = np.random.default_rng(5)
    for _ in range(5):
        x = rng.uniform(-2, 2, 4)
        w = rng.uniform(-1, 1, 4)
        build = lambda t: _weighted(T.softmax_lastdim(t), w)
        (g,) = analytic_grads(build, [x])
        assert rel_err(g, numeric_grad(lambda v: value_of(build, [v]), x.copy())) < 1e-6


def test_masked_softmax_zeroes_masked_entries_exactly():
    x = Tensor(np.array([[3.0, 1.0, 2.0]]))
    y = T.softmax_lastdim(x, np.array([[True, False, True]])).data
    assert y[0, 1] == 0.0
    assert abs(y.sum() - 1.0) < 1e-15


def test_layer_norm_examples():
    one, zero = np.ones(4), np.zeros(4)
    out = T.layer_norm(Tensor([5.0, 5, 5, 5]), Tensor(one), Tensor(zero)).data
    assert np.array_equal(out, np.zeros(4))
    out = T.layer_norm(Tensor([1.0, -1.0]), Tensor(np.ones(2)), Tensor(np.zeros(2)), eps=1e-12).data
    assert np.allclose(out, [1.0, -1.0], atol=1e-10)
    rng = np.random.default_rng(9)
    x, g, b = rng.uniform(-2, 2, (2, 5)), rng.uniform(0.5, 1.5, 5), rng.uniform(-1, 1, 5)
    w = rng.uniform(-1, 1, (2, 5))
    build = lambda *ts: _weighted(T.layer_norm(*ts), w)
    grads = analytic_grads(build, [x, g, b])
    for i, arr in enumerate([x, g, b]):
        args = [x, g, b]

        def f(v, i=i):
            return value_of(build, [v if j == i else a for j, a in enumerate(args)])

        assert rel_err(grads[i], numeric_grad(f, arr.copy())) < 1e-5


def test_gelu_is_exact_erf_form():
    from scipy.special import erf

    x = np.linspace(-4, 4, 17)
    expected = 0.5 * x * (1 + erf(x / np.sqrt(2)))
    assert np.allclose(T.gelu(Tensor(x)).data, expected, rtol=0, atol=1e-15)


def test_backward_examples():
    with Tape() as tape:
        x = Tensor(np.random.default_rng(0).normal(size=(2, 3)), requires_grad=True)
        y = x.sum()
    tape.backward(y)
    assert np.array_equal(x.grad, np.ones((2, 3)))
    with Tape() as tape:
        x = Tensor([1.0, 2.0, 3.0], requires_grad=True)
        y = (x * x).sum()
    T.backward(y, tape)
    assert np.array_equal(x.grad, [2.0, 4.0, 6.0])


def test_backward_contract_errors():
    with Tape() as tape:
        x = Tensor(np.ones(3), requires_grad=True)
        y = x * 2.0
    with pytest.raises(TapeContractError):
        tape.backward(y)
    with pytest.raises(TapeContractError):
        tape.backward(Tensor(1.0))
    with Tape() as other:
        z = (x * x).sum()
    with pytest.raises(TapeContractError):
        tape.backward(z)
    other.backward(z)


def test_intermediate_gradients_are_exposed():
    with Tape() as tape:
        x = Tensor([1.0, -2.0], requires_grad=True)
        h = x * x
        y = (h * 3.0).sum()
    tape.backward(y)
    assert np.array_equal(h.grad, [3.0, 3.0])
    assert np.array_equal(x.grad, [6.0, -12.0])


def test_backward_deterministic_and_repeatable():
    rng = np.random.default_rng(2)
    a = rng.normal(size=(4, 4))
    with Tape() as tape:
        x = Tensor(a, requires_grad=True)
        y = T.reduce_sum(T.softmax_lastdim(T.gelu(x @ x)))
    tape.backward(y)
    first = x.grad.copy()
    tape.backward(y)
    assert np.array_equal(first, x.grad)


def test_gradient_linearity():
    rng = np.random.default_rng(4)
    a = rng.uniform(-2, 2, (3, 3))
    f = lambda t: T.reduce_sum(T.gelu(t) * t)
    g = lambda t: T.reduce_sum(T.softmax_lastdim(t @ t))
    (gf,) = analytic_grads(f, [a])
    (gg,) = analytic_grads(g, [a])
    (gsum,) = analytic_grads(lambda t: f(t) + g(t), [a])
    assert np.allclose(gsum, gf + gg, rtol=0, atol=1e-14)


def test_no_recording_without_tape_or_grad():
    x = Tensor(np.ones(3), requires_grad=True)
    y = x * x
    assert not y.requires_grad
    with Tape() as tape:
        z = Tensor(np.ones(3)) * 2.0
    assert len(tape) == 0 and not z.requires_grad


def test_tapes_are_thread_confined():
    results = {}

    def work(k):
        with Tape() as tape:
            x = Tensor(np.full(3, float(k)), requires_grad=True)
            y = (x * x).sum()
        tape.backward(y)
        results[k] = x.grad

    threads = [threading.Thread(target=work, args=(k,)) for k in range(1, 6)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    for k, g in results.items():
        assert np.array_equal(g, np.full(3, 2.0 * k))


def test_shape_errors():
    with pytest.raises(TensorShapeError):
        T.add(Tensor(np.ones((2, 3))), Tensor(np.ones((4,))))
    with pytest.raises(TensorShapeError):
        T.reshape(Tensor(np.ones(6)), (4, 2))
    with pytest.raises(TensorShapeError):
        T.softmax_lastdim(Tensor(np.ones((2, 0))))
