"""Backend selection for the forward-backward kernel.

The compiled extension is used when importable; setting the environment
variable ``COMORBID_HMM_PURE_PYTHON=1`` forces the numpy implementation.
"""
import os

import numpy as np

from . import _kernels_py

if os.environ.get("COMORBID_HMM_PURE_PYTHON", "") not in ("", "0"):
    _impl = _kernels_py
    BACKEND = "python"
else:
    try:
        from . import _kernels as _impl

        BACKEND = "cython"
    except ImportError:  # extension not built
        _impl = _kernels_py
        BACKEND = "python"


def forward_backward(log_pi, alpha, beta, mu_a, mu_b, log_sigma_a, log_sigma_b,
                     state_a, state_b, ya, yb, X, offsets, want_grad=True, backend=None):
    """Dispatch to the selected backend after normalising dtypes and layout."""
    impl = {None: _impl, "python": _kernels_py}.get(backend)
    if impl is None:
        from . import _kernels as impl
    f8 = lambda a: np.ascontiguousarray(a, dtype=np.float64)
    i8 = lambda a: np.ascontiguousarray(a, dtype=np.int64)
    X = f8(X)
    if X.ndim == 1:
        X = X.reshape(len(ya), -1)
    return impl.forward_backward(
        f8(log_pi), f8(alpha), f8(beta), f8(mu_a), f8(mu_b), float(log_sigma_a),
        float(log_sigma_b), i8(state_a), i8(state_b), f8(ya), f8(yb), X, i8(offsets),
        bool(want_grad),
    )
