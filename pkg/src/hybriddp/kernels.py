"""Kernel backend selection.

The compiled Cython extension is used when it imports; otherwise the numpy
fallback is used. Set ``HYBRIDDP_PURE_PYTHON=1`` to force the fallback.
"""

from __future__ import annotations

import os

from . import _pykernels

BACKEND = "python"
_impl = _pykernels

if os.environ.get("HYBRIDDP_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _ckernels as _impl  # type: ignore[no-redef]

        BACKEND = "cython"
    except ImportError:  # extension not built
        _impl = _pykernels

binomial_log_mgf = _impl.binomial_log_mgf
subsampled_gaussian_curve = _impl.subsampled_gaussian_curve
twice_curve = _impl.twice_curve
max_sign_quadratic = _impl.max_sign_quadratic


def backends() -> dict:
    """Both implementations keyed by name; the compiled one only if available."""
    out = {"python": _pykernels}
    try:
        from . import _ckernels

        out["cython"] = _ckernels
    except ImportError:
        pass
    return out
