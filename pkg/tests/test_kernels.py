import os
import subprocess
import sys

import numpy as np
import pytest

from calig import _kernels_py as ref
from calig import kernels

compiled = pytest.importorskip("calig._kernels")


@pytest.fixture
def data():
    rng = np.random.default_rng(11)
    x = rng.normal(size=(40, 9)) * 3
    mask = (rng.random((40, 9)) > 0.3).astype(np.uint8)
    mask[5] = 0
    return x, mask, rng


def test_softmax_backends_agree(data):
    x, mask, rng = data
    assert np.allclose(compiled.softmax_rows(x), ref.softmax_rows(x), rtol=0, atol=1e-15)
    a, b = compiled.softmax_rows(x, mask), ref.softmax_rows(x, mask)
    assert np.allclose(a, b, rtol=0, atol=1e-15)
    assert np.array_equal(a == 0, b == 0)
    assert np.all(a[5] == 0)
    gy = rng.normal(size=x.shape)
    assert np.allclose(compiled.softmax_rows_backward(a, gy), ref.softmax_rows_backward(b, gy), atol=1e-14)


def test_layer_norm_backends_agree(data):
    x, _, rng = data
    g, b = rng.normal(size=9), rng.normal(size=9)
    out_c, out_r = compiled.layer_norm_rows(x, g, b, 1e-5), ref.layer_norm_rows(x, g, b, 1e-5)
    for u, v in zip(out_c, out_r):
        assert np.allclose(u, v, rtol=1e-13, atol=1e-13)
    gy = rng.normal(size=x.shape)
    for u, v in zip(
        compiled.layer_norm_rows_backward(gy, out_c[1], out_c[2], g),
        ref.layer_norm_rows_backward(gy, out_r[1], out_r[2], g),
    ):
        assert np.allclose(u, v, rtol=1e-12, atol=1e-12)


def test_gelu_backends_agree(data):
    x, _, rng = data
    flat = x.reshape(-1).copy()
    assert np.allclose(compiled.gelu(flat), ref.gelu(flat), rtol=1e-14, atol=1e-15)
    gy = rng.normal(size=flat.shape)
    assert np.allclose(compiled.gelu_backward(flat, gy), ref.gelu_backward(flat, gy), rtol=1e-13, atol=1e-14)


def test_backend_selected_at_import():
    assert kernels.BACKEND in ("compiled", "python")
    env = dict(os.environ, CALIG_PURE_PYTHON="1")
    out = subprocess.run(
        [sys.executable, "-c", "from calig import kernels; print(kernels.BACKEND)"],
        env=env, capture_output=True, text=True, check=True,
    )
    assert out.stdout.strip() == "python"


def test_pure_python_forward_matches_compiled():
    script = (
        "import numpy as np;"
        "from calig.encoder import EncoderConfig, EncoderModel, forward;"
        "m = EncoderModel.initialize(EncoderConfig(max_seq_len=16), 3, 'random');"
        "ids = np.arange(1, 13); print(repr(forward(m, ids).logits.tolist()))"
    )
    runs = {}
    for flag in ("0", "1"):
        env = dict(os.environ, CALIG_PURE_PYTHON=flag)
        out = subprocess.run([sys.executable, "-c", script], env=env, capture_output=True, text=True, check=True)
        runs[flag] = np.array(eval(out.stdout))
    assert np.allclose(runs["0"], runs["1"], rtol=1e-12, atol=1e-12)
