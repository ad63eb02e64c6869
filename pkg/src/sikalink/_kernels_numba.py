"""JIT-compiled hot loops for the band-matrix store.

Same contracts as _kernels_numpy; both backends produce bit-identical tables
for identical inputs (stable elimination order, fixed back-substitution order).
"""

from __future__ import annotations

import numpy as np
from numba import njit

BACKEND = "numba"

_U0 = np.uint64(0)
_U1 = np.uint64(1)


@njit(cache=True)
def solve_band(starts, pat_lo, pat_hi, values, table):  # pragma: no cover - jit
    m = starts.shape[0]
    vw = values.shape[1]
    mp = table.shape[0]
    order = np.argsort(starts, kind="mergesort")
    piv_lo = np.zeros(mp, dtype=np.uint64)
    piv_hi = np.zeros(mp, dtype=np.uint64)
    piv_val = np.zeros((mp, vw), dtype=np.uint64)
    piv_used = np.zeros(mp, dtype=np.uint8)
    piv_cols = np.empty(m, dtype=np.int64)
    val = np.empty(vw, dtype=np.uint64)
    for idx in range(m):
        r = order[idx]
        cur = starts[r]
        lo = pat_lo[r]
        hi = pat_hi[r]
        for k in range(vw):
            val[k] = values[r, k]
        while True:
            if lo == _U0 and hi == _U0:
                return False
            if lo == _U0:
                lo = hi
                hi = _U0
                cur += 64
            tz = 0
            while (lo >> np.uint64(tz)) & _U1 == _U0:
                tz += 1
            if tz:
                lo = (lo >> np.uint64(tz)) | (hi << np.uint64(64 - tz))
                hi = hi >> np.uint64(tz)
                cur += tz
            if piv_used[cur] == 0:
                piv_used[cur] = 1
                piv_lo[cur] = lo
                piv_hi[cur] = hi
                for k in range(vw):
                    piv_val[cur, k] = val[k]
                piv_cols[idx] = cur
                break
            lo ^= piv_lo[cur]
            hi ^= piv_hi[cur]
            for k in range(vw):
                val[k] ^= piv_val[cur, k]
    # Back-substitute pivot columns high to low; every referenced column above
    # the pivot is already final (another pivot or a free random row).
    cols = np.sort(piv_cols)
    for i in range(m - 1, -1, -1):
        cur = cols[i]
        lo = piv_lo[cur]
        hi = piv_hi[cur]
        for k in range(vw):
            val[k] = piv_val[cur, k]
        for j in range(1, 64):
            if (lo >> np.uint64(j)) & _U1:
                for k in range(vw):
                    val[k] ^= table[cur + j, k]
        if hi != _U0:
            for j in range(64):
                if (hi >> np.uint64(j)) & _U1:
                    for k in range(vw):
                        val[k] ^= table[cur + 64 + j, k]
        for k in range(vw):
            table[cur, k] = val[k]
    return True


@njit(cache=True)
def decode_band(starts, pat_lo, pat_hi, table):  # pragma: no cover - jit
    q = starts.shape[0]
    vw = table.shape[1]
    out = np.zeros((q, vw), dtype=np.uint64)
    for i in range(q):
        base = starts[i]
        lo = pat_lo[i]
        hi = pat_hi[i]
        for j in range(64):
            if (lo >> np.uint64(j)) & _U1:
                for k in range(vw):
                    out[i, k] ^= table[base + j, k]
        if hi != _U0:
            for j in range(64):
                if (hi >> np.uint64(j)) & _U1:
                    for k in range(vw):
                        out[i, k] ^= table[base + 64 + j, k]
    return out
