"""Context-aware layer-wise integrated gradients for transformer encoders.

``CALIG_NUM_THREADS`` caps the worker count used for per-example evaluation
and, when set before the first numpy import, the BLAS thread pools.
"""

import os

__version__ = "0.1.0"

THREADS_ENV = "CALIG_NUM_THREADS"

if os.environ.get(THREADS_ENV):
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ.setdefault(_var, os.environ[THREADS_ENV])


def num_threads() -> int:
    """Worker threads requested through ``CALIG_NUM_THREADS`` (default 1)."""
    raw = os.environ.get(THREADS_ENV, "").strip()
    if not raw:
        return 1
    try:
        n = int(raw)
    except ValueError:
        raise ValueError(f"{THREADS_ENV} must be a positive integer, got {raw!r}") from None
    if n < 1:
        raise ValueError(f"{THREADS_ENV} must be a positive integer, got {raw!r}")
    return n
