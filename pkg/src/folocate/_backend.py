"""Select the compiled kernels when available, else the pure-Python ones.

Set ``FOLOCATE_PURE_PYTHON=1`` to force the fallback.
"""

import os

from . import _kernels_py

BACKEND = "python"
kernels = _kernels_py

if os.environ.get("FOLOCATE_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _kernels as _compiled
    except ImportError:
        pass
    else:
        kernels = _compiled
        BACKEND = "cython"

run_em = kernels.run_em
zscore_signals = kernels.zscore_signals
