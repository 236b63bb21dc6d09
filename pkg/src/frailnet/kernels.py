"""Hot-loop dispatch.

The compiled Cython module is used when it was built; otherwise the numpy
fallback is used. Set ``FRAILNET_PURE_PYTHON=1`` to force the fallback.
``BACKEND`` names whichever implementation was selected.
"""

import os

import numpy as np

from . import _pykernels

_force_py = os.environ.get("FRAILNET_PURE_PYTHON", "").strip() not in ("", "0")

try:
    if _force_py:
        raise ImportError("pure-python backend requested")
    from . import _ckernels as _impl
    BACKEND = "cython"
except ImportError:
    _impl = _pykernels
    BACKEND = "python"


def risk_logsumexp(eta_sorted, starts):
    return _impl.risk_logsumexp(
        np.ascontiguousarray(eta_sorted, dtype=np.float64),
        np.ascontiguousarray(starts, dtype=np.int64),
    )


def pair_counts(time, event, score, group, n_groups):
    return _impl.pair_counts(
        np.ascontiguousarray(time, dtype=np.float64),
        np.ascontiguousarray(event, dtype=np.int64),
        np.ascontiguousarray(score, dtype=np.float64),
        np.ascontiguousarray(group, dtype=np.int64),
        int(n_groups),
    )
