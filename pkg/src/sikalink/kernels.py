"""Kernel backend selection.

SIKA_KERNELS=numpy forces the pure-numpy path; SIKA_KERNELS=numba requires the
JIT backend (ImportError if numba is unavailable). Default: numba when
importable, numpy otherwise.
"""

from __future__ import annotations

import os

_choice = os.environ.get("SIKA_KERNELS", "auto").strip().lower()

if _choice == "numpy":
    from . import _kernels_numpy as _impl
elif _choice == "numba":
    from . import _kernels_numba as _impl
elif _choice == "auto" or _choice == "":
    try:
        from . import _kernels_numba as _impl
    except ImportError:  # pragma: no cover - environment dependent
        from . import _kernels_numpy as _impl
else:
    raise RuntimeError(f"SIKA_KERNELS must be 'numba', 'numpy' or 'auto', got {_choice!r}")

BACKEND = _impl.BACKEND
solve_band = _impl.solve_band
decode_band = _impl.decode_band
