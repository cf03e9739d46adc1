"""Kernel selection.

The compiled extension is used when it imports; setting ``PHMOR_BACKEND=python``
forces the numpy fallback.
"""

import os

from . import _kernels_py

if os.environ.get("PHMOR_BACKEND", "").lower() == "python":
    kernels = _kernels_py
    BACKEND = "python"
else:
    try:
        from . import _kernels as kernels
        BACKEND = "compiled"
    except ImportError:
        kernels = _kernels_py
        BACKEND = "python"

resolvent_batch = kernels.resolvent_batch
