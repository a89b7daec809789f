"""Backend selection for the F0 hot loop.

The compiled extension is used when it imports; ``HYFACE_PURE_PYTHON=1``
forces the numpy fallback.
"""
import logging
import os

from . import _yin_py

log = logging.getLogger(__name__)

BACKEND = "python"
yin_track = _yin_py.yin_track

if os.environ.get("HYFACE_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _yin_ext
    except ImportError:  # pragma: no cover - depends on build
        log.debug("compiled YIN kernel unavailable, using numpy fallback")
    else:
        yin_track = _yin_ext.yin_track
        BACKEND = "cython"
