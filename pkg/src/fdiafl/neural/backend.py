"""Kernel backend selection.

The compiled extension is preferred when importable; the numpy fallback is
always available. FDIAFL_KERNELS=py|cy forces a choice (the forced compiled
backend raises if the extension is missing).
"""

from __future__ import annotations

import os

_forced = os.environ.get("FDIAFL_KERNELS", "").lower()

if _forced in ("py", "python"):
    from . import _kernels_py as kernels

    BACKEND = "python"
elif _forced in ("cy", "cython", "ext"):
    from . import _kernels as kernels  # type: ignore[no-redef]

    BACKEND = "cython"
else:
    try:
        from . import _kernels as kernels  # type: ignore[no-redef]

        BACKEND = "cython"
    except ImportError:
        from . import _kernels_py as kernels  # type: ignore[no-redef]

        BACKEND = "python"
