import numpy as np
import pytest

from calig import tensor as T
from calig.encoder import EncoderConfig, EncoderModel, TrainHyperparams, train_synthetic
from calig.evaluation.synthetic import SyntheticConfig, generate_synthetic, split

TINY = EncoderConfig(num_layers=2, num_heads=2, hidden_dim=8, ff_dim=16, vocab_size=20, max_seq_len=12)


def rel_err(a, b) -> float:
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(a), np.linalg.norm(b), 1e-12))


def numeric_grad(f, x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central differences of scalar ``f`` at ``x`` (x is restored afterwards)."""
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = x[i]
        x[i] = old + h
        fp = f(x)
        x[i] = old - h
        fm = f(x)
        x[i] = old
        g[i] = (fp - fm) / (2 * h)
    return g


def analytic_grads(build, arrays):
    """Gradients of the scalar ``build(*tensors)`` for every input array."""
    with T.Tape() as tape:
        ts = [T.Tensor(a.copy(), requires_grad=True) for a in arrays]
        y = build(*ts)
    tape.backward(y)
    return [t.grad for t in ts]


def value_of(build, arrays) -> float:
    return float(build(*[T.Tensor(a) for a in arrays]).data)


@pytest.fixture(scope="session")
def tiny_model():
    return EncoderModel.initialize(TINY, seed=0, scheme="random")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_ids(rng, config, s):
    ids = rng.integers(2, config.vocab_size, size=s)
    ids[0] = config.cls_token_id
    return ids


@pytest.fixture(scope="session")
def trained():
    """Seed-0 planted-keyword model with its held-out split."""
    data = generate_synthetic(SyntheticConfig(seed=0))
    train, test = split(data, 2000)
    result = train_synthetic(EncoderConfig(max_seq_len=32), train, TrainHyperparams(epochs=3, seed=0), heldout=test)
    return result, test


CRITERIA = pytest.StashKey[dict]()


def pytest_configure(config):
    config.stash[CRITERIA] = {}


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(CRITERIA, {})
    if lines:
        terminalreporter.section("acceptance criteria")
        for n in sorted(lines):
            terminalreporter.write_line(lines[n])
