"""Convolution kernel backend selection.

The compiled extension is preferred when it was built; otherwise the numpy
implementation is used. Set DUSTBIN_LAB_PURE_KERNELS=1 to force the numpy
path (useful for benchmarking and debugging).
"""

import os

from . import pure

if os.environ.get("DUSTBIN_LAB_PURE_KERNELS") == "1":
    _impl = pure
else:
    try:
        from . import _convcore as _impl  # type: ignore[no-redef]
    except ImportError:
        _impl = pure

conv2d_forward = _impl.conv2d_forward
conv2d_backward_input = _impl.conv2d_backward_input
conv2d_backward_kernels = _impl.conv2d_backward_kernels


def backend() -> str:
    """Name of the active kernel backend: 'compiled' or 'pure'."""
    return _impl.BACKEND
