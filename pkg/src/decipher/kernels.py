"""Backend selection for the DP kernels.

The compiled extension is used when importable.  Setting
``DECIPHER_BACKEND=python`` forces the pure-Python fallback.
"""

import logging
import os

from decipher import _pykernels

logger = logging.getLogger(__name__)

BACKENDS = {"python": _pykernels}

try:
    from decipher import _ckernels
except ImportError:  # extension not built
    _ckernels = None
else:
    BACKENDS["cython"] = _ckernels

_requested = os.environ.get("DECIPHER_BACKEND", "").strip().lower()
if _requested and _requested not in BACKENDS:
    logger.warning("backend %r unavailable, falling back", _requested)
    _requested = ""
BACKEND = _requested or ("cython" if _ckernels is not None else "python")
if BACKEND == "python" and _ckernels is None:
    logger.info("compiled kernels not built; using the pure-Python fallback")


def set_backend(name):
    """Switch the active kernels; returns the previous backend name."""
    global BACKEND, align_chunk, align_backward, segment_forward, segment_backward
    if name not in BACKENDS:
        raise ValueError(f"unknown or unavailable backend {name!r}; have {sorted(BACKENDS)}")
    prev, BACKEND = BACKEND, name
    impl = BACKENDS[name]
    align_chunk = impl.align_chunk
    align_backward = impl.align_backward
    segment_forward = impl.segment_forward
    segment_backward = impl.segment_backward
    return prev


set_backend(BACKEND)


def get_backend(name=None):
    """Return the kernel module for ``name`` (default: the active backend)."""
    return BACKENDS[name or BACKEND]
