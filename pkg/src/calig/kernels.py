"""Backend selection for the row kernels.

The compiled extension is used when it was built and ``CALIG_PURE_PYTHON`` is
unset; otherwise the numpy implementation is loaded. ``BACKEND`` names the
active choice. Both backends agree to rounding error, not bitwise, so
determinism guarantees hold per backend.
"""

import os

if os.environ.get("CALIG_PURE_PYTHON", "").strip() not in ("", "0"):
    from calig import _kernels_py as _impl

    BACKEND = "python"
else:
    try:
        from calig import _kernels as _impl

        BACKEND = "compiled"
    except ImportError:
        from calig import _kernels_py as _impl

        BACKEND = "python"

softmax_rows = _impl.softmax_rows
softmax_rows_backward = _impl.softmax_rows_backward
layer_norm_rows = _impl.layer_norm_rows
layer_norm_rows_backward = _impl.layer_norm_rows_backward
gelu = _impl.gelu
gelu_backward = _impl.gelu_backward
