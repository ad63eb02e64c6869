"""Pure-numpy fallback for the band-matrix hot loops.

Elimination walks rows in the same stable order as the numba backend and
back-substitutes in the same column order, so tables are bit-identical
across backends. Band patterns are handled as Python ints (<= 128 bits).
"""

from __future__ import annotations

import numpy as np

BACKEND = "numpy"


def solve_band(starts, pat_lo, pat_hi, values, table):
    m = starts.shape[0]
    order = np.argsort(starts, kind="stable")
    piv_pat: dict[int, int] = {}
    piv_val: dict[int, np.ndarray] = {}
    for r in order:
        cur = int(starts[r])
        pat = int(pat_lo[r]) | (int(pat_hi[r]) << 64)
        val = values[r].copy()
        while True:
            if pat == 0:
                return False
            tz = (pat & -pat).bit_length() - 1
            pat >>= tz
            cur += tz
            existing = piv_pat.get(cur)
            if existing is None:
                piv_pat[cur] = pat
                piv_val[cur] = val
                break
            pat ^= existing
            val = val ^ piv_val[cur]
    for cur in sorted(piv_pat, reverse=True):
        pat = piv_pat[cur] >> 1
        val = piv_val[cur]
        j = 1
        while pat:
            tz = (pat & -pat).bit_length() - 1
            j += tz
            val ^= table[cur + j]
            pat >>= tz + 1
            j += 1
        table[cur] = val
    return True


def decode_band(starts, pat_lo, pat_hi, table):
    q = starts.shape[0]
    vw = table.shape[1]
    out = np.zeros((q, vw), dtype=np.uint64)
    if q == 0:
        return out
    # One vectorized gather-XOR pass per band bit position.
    for word, pats in ((0, pat_lo), (1, pat_hi)):
        if word == 1 and not pats.any():
            continue
        for j in range(64):
            bits = (pats >> np.uint64(j)) & np.uint64(1)
            if not bits.any():
                continue
            mask = (np.uint64(0) - bits)[:, None]
            out ^= table[starts + (64 * word + j)] & mask
    return out
