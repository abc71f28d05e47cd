"""Conv kernel backend selection.

The compiled extension is preferred when importable; otherwise the pure
numpy implementation takes over. Set LDPI_BACKEND=cython or =numpy to
force one (cython raises if the extension is missing).
"""

import os

from ..errors import ConfigInvalid
from . import _kernels_np

_choice = os.environ.get("LDPI_BACKEND", "auto").lower()
if _choice not in ("auto", "cython", "numpy"):
    raise ConfigInvalid(f"LDPI_BACKEND must be auto/cython/numpy, got {_choice!r}")

_impl = None
if _choice in ("auto", "cython"):
    try:
        from . import _kernels as _impl  # type: ignore[no-redef]
    except ImportError:
        if _choice == "cython":
            raise

if _impl is not None:
    BACKEND = "cython"
    conv1d_forward = _impl.conv1d_forward
    conv1d_backward = _impl.conv1d_backward
else:
    BACKEND = "numpy"
    conv1d_forward = _kernels_np.conv1d_forward
    conv1d_backward = _kernels_np.conv1d_backward
