"""Select the compiled kernel module when available, else the pure-Python one.

Set ``FPLAB_PURE_PYTHON=1`` to force the fallback.
"""

import os

from . import _pykernels

if os.environ.get("FPLAB_PURE_PYTHON") == "1":
    kernels = _pykernels
else:
    try:
        from . import _ckernels as kernels
    except ImportError:
        kernels = _pykernels

BACKEND = kernels.BACKEND
