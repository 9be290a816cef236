"""Backend selection for the pairwise kernel core.

The compiled extension is used when importable; set DYNMGP_BACKEND=python or
DYNMGP_BACKEND=compiled to force one (the latter raises if unavailable).
"""

import os

from . import _kernels_py

_forced = os.environ.get("DYNMGP_BACKEND", "").lower()

if _forced == "python":
    BACKEND = "python"
    _impl = _kernels_py
else:
    try:
        from . import _kernels_cy as _impl

        BACKEND = "compiled"
    except ImportError:
        if _forced == "compiled":
            raise
        BACKEND = "python"
        _impl = _kernels_py


def _as_c(x):
    import numpy as np

    return np.ascontiguousarray(x, dtype=np.float64)


def pairwise_cov(xa, xb, aL, thL, aR, thR):
    return _impl.pairwise_cov(_as_c(xa), _as_c(xb), _as_c(aL), _as_c(thL),
                              _as_c(aR), _as_c(thR))


def pairwise_cov_grads(xa, xb, aL, thL, aR, thR, K, G):
    return _impl.pairwise_cov_grads(_as_c(xa), _as_c(xb), _as_c(aL), _as_c(thL),
                                    _as_c(aR), _as_c(thR), _as_c(K), _as_c(G))
