"""Compare the compiled row kernels with the numpy fallback.

Micro benchmarks call both implementations directly on the same arrays. The
end-to-end rows run one forward pass, a batched perturbation forward and one
CA-LIG explanation in a subprocess per backend, since the backend is fixed at
import time.

    python benchmarks/bench_kernels.py [--repeats 20] [--json out.json]
"""

from __future__ import annotations

import argparse
import json
import os
import subprocess
import sys
import timeit

import numpy as np

from calig import _kernels_py as py_impl

try:
    from calig import _kernels as c_impl
except ImportError:
    c_impl = None

E2E = r"""
import json, sys, timeit
import numpy as np
from calig import kernels
from calig.attribution import AttributionConfig, explain
from calig.encoder import EncoderConfig, EncoderModel, forward
from calig.encoder.model import batch_logits

repeats = int(sys.argv[1])
model = EncoderModel.initialize(EncoderConfig(max_seq_len=32), 0, "random")
rng = np.random.default_rng(0)
ids = rng.integers(2, 64, size=32)
ids[0] = 1
batch = np.tile(ids, (420, 1))
cfg = AttributionConfig(steps=50)
cases = {
    "forward s=32": lambda: forward(model, ids),
    "batch forward 420x32": lambda: batch_logits(model, batch),
    "explain m=50": lambda: explain(model, ids, cfg),
}
out = {name: min(timeit.repeat(fn, number=1, repeat=repeats)) for name, fn in cases.items()}
print(json.dumps({"backend": kernels.BACKEND, "times": out}))
"""


def _micro_cases(rng):
    x = rng.normal(size=(4 * 420 * 32, 32)) * 3
    mask = np.ones_like(x, dtype=np.uint8)
    mask[:, -5:] = 0
    gy = rng.normal(size=x.shape)
    gamma, beta = rng.normal(size=32), rng.normal(size=32)
    flat = x[: 420 * 32].reshape(-1).copy()
    gflat = gy[: 420 * 32].reshape(-1).copy()

    def cases(impl):
        y = impl.softmax_rows(x, mask)
        _, xhat, rstd = impl.layer_norm_rows(x, gamma, beta, 1e-5)
        return {
            "softmax (masked)": lambda: impl.softmax_rows(x, mask),
            "softmax backward": lambda: impl.softmax_rows_backward(y, gy),
            "layer norm": lambda: impl.layer_norm_rows(x, gamma, beta, 1e-5),
            "layer norm backward": lambda: impl.layer_norm_rows_backward(gy, xhat, rstd, gamma),
            "gelu": lambda: impl.gelu(flat),
            "gelu backward": lambda: impl.gelu_backward(flat, gflat),
        }

    return cases


def micro(repeats: int) -> dict:
    cases = _micro_cases(np.random.default_rng(0))
    results = {}
    impls = {"python": py_impl} if c_impl is None else {"python": py_impl, "compiled": c_impl}
    for backend, impl in impls.items():
        for name, fn in cases(impl).items():
            results.setdefault(name, {})[backend] = min(timeit.repeat(fn, number=1, repeat=repeats))
    return results


def end_to_end(repeats: int) -> dict:
    results = {}
    for flag in ("1", "0"):
        env = dict(os.environ, CALIG_PURE_PYTHON=flag)
        proc = subprocess.run([sys.executable, "-c", E2E, str(repeats)], env=env, capture_output=True, text=True, check=True)
        doc = json.loads(proc.stdout)
        for name, secs in doc["times"].items():
            results.setdefault(name, {})[doc["backend"]] = secs
    return results


def _table(title: str, results: dict) -> str:
    lines = [title, f"{'case':28s} {'python ms':>11s} {'compiled ms':>12s} {'speedup':>8s}"]
    for name, t in results.items():
        py, c = t.get("python"), t.get("compiled")
        speed = f"{py / c:7.2f}x" if py and c else "     n/a"
        cms = f"{c * 1e3:12.2f}" if c else f"{'n/a':>12s}"
        lines.append(f"{name:28s} {py * 1e3:11.2f} {cms} {speed}")
    return "\n".join(lines)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeats", type=int, default=20, help="best-of repeats per case")
    parser.add_argument("--json", help="also write the timings to this file")
    args = parser.parse_args(argv)
    if c_impl is None:
        print("compiled extension not built; only the numpy backend is timed", file=sys.stderr)
    report = {"micro": micro(args.repeats), "end_to_end": end_to_end(max(3, args.repeats // 4))}
    print(_table("row kernels (53760 x 32 rows; gelu on 430080 values)", report["micro"]))
    print()
    print(_table("end to end", report["end_to_end"]))
    if args.json:
        with open(args.json, "w", encoding="utf-8") as fh:
            json.dump(report, fh, indent=1, sort_keys=True)
    return 0


if __name__ == "__main__":
    sys.exit(main())
