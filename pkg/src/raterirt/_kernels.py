"""Kernel backend selection.

The compiled extension is used when it imports; ``RATERIRT_PURE=1`` forces
the numpy fallback.
"""

import os

from . import _pykernels

BACKEND = "python"
_impl = _pykernels

if os.environ.get("RATERIRT_PURE") != "1":
    try:
        from . import _ckernels as _impl  # type: ignore[no-redef]

        BACKEND = "cython"
    except ImportError:  # pragma: no cover - depends on build
        _impl = _pykernels

record_probs = _impl.record_probs
record_terms = _impl.record_terms
record_loglik = _impl.record_loglik
tau_terms = _impl.tau_terms

__all__ = ["BACKEND", "record_probs", "record_terms", "record_loglik", "tau_terms"]
