"""Desk-scale benchmark: session runtime, bytes on the wire, kernel backends.

Cells are (m, n, kappa) triples run in-process with a fixed intersection of
m/16 records; each cell reports mean wall time and relative standard
deviation over the requested repeats plus the per-edge byte volumes. The
optional kernel comparison times the band-store encode/decode hot loops under
the numba and numpy backends on identical inputs.
"""

from __future__ import annotations

import statistics
import time

import numpy as np

from . import okvs, session
from .outputs import Record
from .primitives import SecurityParams, SystemRng, random_token

MAX_SAFE_EXP = 20


def synth_inputs(n: int, m: int) -> dict[int, list[Record]]:
    """n provider inputs of size m whose full intersection has m/16 ids."""
    overlap = max(1, m // 16)
    common = [b"common-%08d" % t for t in range(overlap)]
    inputs = {}
    for i in range(1, n + 1):
        own = [b"p%d-%08d" % (i, t) for t in range(m - overlap)]
        inputs[i] = [Record(raw_id=r, atts=()) for r in common + own]
    return inputs


def run_cell(m: int, n: int, kappa: int, mode: str, repeats: int,
             timeout: float = session.DEFAULT_TIMEOUT) -> dict:
    """One benchmark cell; returns the JSON-ready cell dict."""
    sec = SecurityParams(kappa, 40 if kappa == 128 else 80)
    inputs = synth_inputs(n, m)
    times: list[float] = []
    edges: dict[str, int] = {}
    for _ in range(repeats):
        run = session.run_inproc(random_token(), n, m, sec, inputs,
                                 mode=mode, timeout=timeout)
        times.append(run.wall_s)
        edges = {row["edge"]: row["bytes"] for row in
                 session.counters_report(run.hub.counters)}
    mean = statistics.fmean(times)
    rsd = (statistics.stdev(times) / mean * 100.0) if len(times) > 1 and mean > 0 else 0.0
    return {"m": m, "n": n, "kappa": kappa, "mode": mode,
            "runtime_s_mean": round(mean, 4), "runtime_s_rsd": round(rsd, 2),
            "bytes": edges}


def format_cells(cells: list[dict]) -> str:
    lines = [f"{'m':>9} {'n':>3} {'kappa':>5} {'mean_s':>9} {'rsd_%':>6} "
             f"{'Pi->Pj_MB':>10} {'Pi->C_MB':>9}"]
    for c in cells:
        pp = c["bytes"].get("P1->P2", 0) / 1e6
        pc = c["bytes"].get("P1->C", 0) / 1e6
        lines.append(f"{c['m']:>9} {c['n']:>3} {c['kappa']:>5} "
                     f"{c['runtime_s_mean']:>9.3f} {c['runtime_s_rsd']:>6.2f} "
                     f"{pp:>10.3f} {pc:>9.3f}")
    return "\n".join(lines)


def _kernel_inputs(m: int, kappa: int):
    sec = SecurityParams(kappa, 40 if kappa == 128 else 80)
    params = okvs.OkvsParams.create(m, sec)
    rng = np.random.default_rng(12345)
    keys = rng.integers(0, 256, size=(m, params.key_bytes), dtype=np.uint8)
    keys = np.unique(keys, axis=0)
    while keys.shape[0] < m:  # vanishing probability; top up
        extra = rng.integers(0, 256, size=(m, params.key_bytes), dtype=np.uint8)
        keys = np.unique(np.concatenate([keys, extra]), axis=0)
    keys = keys[:m]
    values = rng.integers(0, 256, size=(m, params.value_bytes), dtype=np.uint8)
    return params, keys, values


def compare_kernels(m_exps: list[int], kappa: int) -> list[dict]:
    """Time encode/decode under both backends on identical inputs."""
    from . import _kernels_numpy
    try:
        from . import _kernels_numba
        backends = [("numba", _kernels_numba), ("numpy", _kernels_numpy)]
    except ImportError:
        backends = [("numpy", _kernels_numpy)]

    rows = []
    rng = SystemRng()
    for exp in m_exps:
        m = 1 << exp
        params, keys, values = _kernel_inputs(m, kappa)
        seed = b"\x42" * okvs.SEED_BYTES
        starts, lo, hi = okvs._band_positions(seed, keys, params.m_prime, params.w)
        vw = params.value_bytes // 8
        values_u64 = values.view(np.uint64).reshape(m, vw)
        row = {"m": m, "kappa": kappa}
        for name, impl in backends:
            table = np.frombuffer(bytearray(rng.fill(params.m_prime * params.value_bytes)),
                                  dtype=np.uint64).reshape(params.m_prime, vw)
            impl.solve_band(starts, lo, hi, values_u64, table.copy())  # warm JIT
            t0 = time.perf_counter()
            ok = impl.solve_band(starts, lo, hi, values_u64, table)
            row[f"encode_{name}_ms"] = round((time.perf_counter() - t0) * 1000, 3)
            row[f"encode_{name}_ok"] = bool(ok)
            impl.decode_band(starts, lo, hi, table)  # warm JIT
            t0 = time.perf_counter()
            impl.decode_band(starts, lo, hi, table)
            row[f"decode_{name}_ms"] = round((time.perf_counter() - t0) * 1000, 3)
        rows.append(row)
    return rows


def format_kernel_rows(rows: list[dict]) -> str:
    lines = ["kernel comparison (band store encode/decode):",
             f"{'m':>9} {'enc_numba_ms':>13} {'enc_numpy_ms':>13} "
             f"{'dec_numba_ms':>13} {'dec_numpy_ms':>13}"]
    for r in rows:
        lines.append(f"{r['m']:>9} {r.get('encode_numba_ms', float('nan')):>13} "
                     f"{r.get('encode_numpy_ms', float('nan')):>13} "
                     f"{r.get('decode_numba_ms', float('nan')):>13} "
                     f"{r.get('decode_numpy_ms', float('nan')):>13}")
    return "\n".join(lines)
