"""Kernel backend selection.

The compiled ``_ckernels`` extension is used when it imports; otherwise, or
when ``NRPRACH_PURE_PYTHON`` is set to a non-empty value other than "0",
the numpy implementations in ``_pykernels`` are used.  ``BACKEND`` names the
active one.
"""

import os

from . import _pykernels

_force_py = os.environ.get("NRPRACH_PURE_PYTHON", "") not in ("", "0")

try:
    if _force_py:
        raise ImportError("pure-Python backend forced")
    from . import _ckernels as _impl
    BACKEND = "cython"
except ImportError:
    _impl = _pykernels
    BACKEND = "python"

im2col = _impl.im2col
col2im = _impl.col2im
bn_act_forward = _impl.bn_act_forward
bn_act_apply = _impl.bn_act_apply
bn_act_backward = _impl.bn_act_backward
leaky_relu = _impl.leaky_relu
leaky_relu_backward = _impl.leaky_relu_backward


def backends():
    """Mapping of available backend name -> kernel module."""
    out = {"python": _pykernels}
    try:
        from . import _ckernels
        out["cython"] = _ckernels
    except ImportError:
        pass
    return out
