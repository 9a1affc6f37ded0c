"""Hot kernels: compiled extension when available, numpy fallback otherwise.

Set ``MCDGLN_PURE_PYTHON=1`` before import to force the fallback.
"""
import os

from . import _kernels_py

BACKEND = "python"
_impl = _kernels_py

if not os.environ.get("MCDGLN_PURE_PYTHON"):
    try:
        from . import _kernels_c as _impl  # noqa: F811
        BACKEND = "compiled"
    except ImportError:
        _impl = _kernels_py

cross_conv_forward = _impl.cross_conv_forward
cross_conv_backward = _impl.cross_conv_backward
windowed_pcc = _impl.windowed_pcc
betainc = _impl.betainc

__all__ = ["BACKEND", "cross_conv_forward", "cross_conv_backward", "windowed_pcc", "betainc"]
