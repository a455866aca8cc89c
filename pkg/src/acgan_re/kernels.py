"""Kernel backend selection.

The compiled extension is used when importable; set ``ACGAN_RE_KERNELS`` to
``python`` to force the numpy fallback or ``compiled`` to fail loudly when the
extension is missing.
"""
import importlib
import logging
import os

from . import _pykernels

logger = logging.getLogger(__name__)

_NAMES = (
    "pool_forward",
    "pool_backward",
    "lstm_pointwise",
    "lstm_pointwise_backward",
    "sample_categorical",
)


# numpy's vectorised exp/tanh beat the scalar libm loop for the LSTM gate
# nonlinearities (see benchmarks/bench_kernels.py), so the compiled backend
# keeps the fallback for this one kernel
_PREFER_NUMPY = ("lstm_pointwise",)


def _load(choice):
    if choice == "python":
        return _pykernels, "python"
    try:
        mod = importlib.import_module("acgan_re._ckernels")
    except ImportError:
        if choice == "compiled":
            raise
        logger.debug("compiled kernels unavailable, using numpy fallback")
        return _pykernels, "python"
    return mod, "compiled"


def use(choice):
    """Switch backend at runtime (``"auto"``, ``"compiled"`` or ``"python"``)."""
    global BACKEND
    mod, BACKEND = _load(choice)
    g = globals()
    for name in _NAMES:
        g[name] = getattr(_pykernels if name in _PREFER_NUMPY else mod, name)
    return BACKEND


def available():
    try:
        importlib.import_module("acgan_re._ckernels")
    except ImportError:
        return ["python"]
    return ["compiled", "python"]


BACKEND = None
use(os.environ.get("ACGAN_RE_KERNELS", "auto"))
