"""Band-store contracts: correctness, random decodings, obliviousness, sizing."""

import math
import struct

import numpy as np
import pytest

from sikalink import okvs
from sikalink.okvs import (BandRow, EncodeFailure, OkvsParams, OkvsTable, band_map,
                           decode, decode_many, encode, encode_arrays)
from sikalink.primitives import SeededRng

from conftest import SEC128, SEC256

# chi-square critical values (pinned): upper 4-sigma normal approximations
# mean df + 4*sqrt(2 df), and the df=255 alpha=0.01 quantile 310.457.
CHI2_4SIGMA_DF255 = 345.34
CHI2_4SIGMA_DF15 = 36.91
CHI2_99_DF255 = 310.457


def _pairs(rng, params, count):
    keys = np.frombuffer(rng.fill(count * params.key_bytes),
                         dtype=np.uint8).reshape(count, params.key_bytes).copy()
    values = np.frombuffer(rng.fill(count * params.value_bytes),
                           dtype=np.uint8).reshape(count, params.value_bytes).copy()
    return keys, values


def test_params_sizing():
    p = OkvsParams.create(2 ** 12, SEC128)
    assert p.w == 40 + 12 + 8
    assert p.m_prime == math.ceil((1 + p.epsilon) * 2 ** 12) + p.w
    assert p.m_prime >= p.m + p.w
    assert p.value_bytes == 32
    p256 = OkvsParams.create(100, SEC256)
    assert p256.value_bytes == 64
    assert p256.w == 80 + 7 + 8
    with pytest.raises(ValueError):
        OkvsParams.create(2 ** 12, SEC128, w=10)
    with pytest.raises(ValueError):
        OkvsParams.create(2 ** 12, SEC128, epsilon=-0.1)


def test_band_map_deterministic(rng):
    params = OkvsParams.create(64, SEC128)
    seed = rng.fill(16)
    key = rng.fill(16)
    assert band_map(seed, key, params) == band_map(seed, key, params)
    assert band_map(rng.fill(16), key, params) != band_map(seed, key, params)


def test_band_map_leading_bit_and_range(rng):
    params = OkvsParams.create(256, SEC128)
    seed = rng.fill(16)
    for _ in range(500):
        row = band_map(seed, rng.fill(16), params)
        assert row.pattern & 1 == 1
        assert row.pattern < (1 << params.w)
        assert 0 <= row.start <= params.m_prime - params.w


def test_band_map_start_uniformity(rng):
    # 10^4 keys over 16 equal buckets; chi-square within 4 sigma (df=15).
    params = OkvsParams.create(2 ** 10, SEC128)
    seed = rng.fill(16)
    keys = np.frombuffer(rng.fill(10_000 * 16), dtype=np.uint8).reshape(10_000, 16)
    starts, _, _ = okvs._band_positions(seed, keys, params.m_prime, params.w)
    span = params.m_prime - params.w + 1
    buckets = np.bincount((starts * 16 // span).astype(int), minlength=16)
    expected = 10_000 / 16
    chi2 = float(((buckets - expected) ** 2 / expected).sum())
    assert chi2 <= CHI2_4SIGMA_DF15, f"chi2={chi2}"


@pytest.mark.parametrize("sec", [SEC128, SEC256])
def test_encode_single_pair(sec, rng):
    params = OkvsParams.create(1, sec)
    k, v = rng.fill(params.key_bytes), rng.fill(params.value_bytes)
    table = encode([(k, v)], params, rng=rng)
    assert decode(table, k) == v


def test_encode_decode_replay_1024(rng):
    # Every encoded key decodes to exactly the value it was encoded with.
    params = OkvsParams.create(2 ** 10, SEC128)
    keys, values = _pairs(rng, params, 2 ** 10)
    table = encode_arrays(keys, values, params, rng=rng)
    out = decode_many(table, keys)
    assert (out == values).all()


@pytest.mark.parametrize("m", [1, 2, 2 ** 8, 2 ** 12])
def test_encode_correctness_sizes(m, rng):
    params = OkvsParams.create(m, SEC128)
    keys, values = _pairs(rng, params, m)
    table = encode_arrays(keys, values, params, rng=rng)
    assert (decode_many(table, keys) == values).all()


def test_encode_empty(rng):
    params = OkvsParams.create(0, SEC128)
    table = encode([], params, rng=rng)
    assert table.m_prime == params.w  # all rows free
    assert len(decode(table, rng.fill(16))) == 32


def test_encode_duplicate_keys(rng):
    params = OkvsParams.create(2, SEC128)
    k = rng.fill(16)
    with pytest.raises(ValueError, match="duplicate"):
        encode([(k, rng.fill(32)), (k, rng.fill(32))], params, rng=rng)


def test_encode_retry_and_failure(rng, monkeypatch):
    from sikalink import kernels
    params = OkvsParams.create(4, SEC128)
    keys, values = _pairs(rng, params, 4)

    calls = {"n": 0}
    real = kernels.solve_band

    def fail_once(*a):
        calls["n"] += 1
        return False if calls["n"] == 1 else real(*a)

    monkeypatch.setattr(okvs.kernels, "solve_band", fail_once)
    table = encode_arrays(keys, values, params, rng=rng)
    assert table.attempts == 2
    assert (decode_many(table, keys) == values).all()

    monkeypatch.setattr(okvs.kernels, "solve_band", lambda *a: False)
    with pytest.raises(EncodeFailure):
        encode_arrays(keys, values, params, max_retries=3, rng=rng)


def test_first_attempt_success_rate(rng):
    # 200 trials at m=2^12: >= 99% succeed on the first seed.
    m = 2 ** 12
    params = OkvsParams.create(m, SEC128)
    first = 0
    for _ in range(200):
        keys, values = _pairs(rng, params, m)
        table = encode_arrays(keys, values, params, rng=rng)
        first += table.attempts == 1
    assert first >= 198, f"only {first}/200 first-attempt successes"


def test_serialization_round_trip(rng):
    params = OkvsParams.create(64, SEC256)
    keys, values = _pairs(rng, params, 64)
    table = encode_arrays(keys, values, params, rng=rng)
    blob = table.to_bytes()
    # bit-exact layout: magic | u8 version | u16 kappa | u32 w | u64 m' | seed | rows
    magic, ver, kappa, w, m_prime = struct.unpack_from("<4sBHIQ", blob)
    assert (magic, ver, kappa, w, m_prime) == (b"OKVS", 1, 256, params.w, params.m_prime)
    assert len(blob) == 19 + 16 + m_prime * 64
    assert blob[19:35] == table.seed
    back = OkvsTable.from_bytes(blob)
    assert back.to_bytes() == blob
    assert (decode_many(back, keys) == values).all()
    with pytest.raises(ValueError):
        OkvsTable.from_bytes(blob[:40])
    with pytest.raises(ValueError):
        OkvsTable.from_bytes(b"JUNK" + blob[4:])


def test_random_decodings(rng):
    # Absent-key decodes must look uniform: monobit and per-byte chi-square
    # over 10^4 probes against a store of 2^10 random pairs.
    m = 2 ** 10
    params = OkvsParams.create(m, SEC128)
    keys, values = _pairs(rng, params, m)
    table = encode_arrays(keys, values, params, rng=rng)
    probes = np.frombuffer(rng.fill(10_000 * 16), dtype=np.uint8).reshape(10_000, 16)
    out = decode_many(table, probes)

    nbits = out.size * 8
    ones = int(np.unpackbits(out.reshape(-1)).sum())
    assert abs(ones - nbits / 2) <= 4 * (nbits ** 0.5) / 2, f"monobit {ones}/{nbits}"

    counts = np.bincount(out.reshape(-1), minlength=256)
    expected = out.size / 256
    chi2 = float(((counts - expected) ** 2 / expected).sum())
    assert chi2 <= CHI2_4SIGMA_DF255, f"per-byte chi2={chi2}"


def test_obliviousness_smoke(rng):
    # Two stores over disjoint key sets with uniform values: serialized byte
    # histograms pass a two-sample chi-square at alpha=0.01 (df=255).
    m = 2 ** 10
    params = OkvsParams.create(m, SEC128)
    k1, v1 = _pairs(rng, params, m)
    k2, v2 = _pairs(rng, params, m)
    t1 = encode_arrays(k1, v1, params, rng=rng)
    t2 = encode_arrays(k2, v2, params, rng=rng)
    h1 = np.bincount(t1.rows.reshape(-1), minlength=256).astype(float)
    h2 = np.bincount(t2.rows.reshape(-1), minlength=256).astype(float)
    n1, n2 = h1.sum(), h2.sum()
    pooled = (h1 + h2) / (n1 + n2)
    e1, e2 = pooled * n1, pooled * n2
    chi2 = float((((h1 - e1) ** 2) / e1 + ((h2 - e2) ** 2) / e2).sum())
    assert chi2 <= CHI2_99_DF255, f"two-sample chi2={chi2}"


def test_kernel_backends_agree(rng):
    numba = pytest.importorskip("sikalink._kernels_numba")
    from sikalink import _kernels_numpy as numpy_k

    params = OkvsParams.create(2 ** 8, SEC128)
    keys, values = _pairs(rng, params, 2 ** 8)
    seed = rng.fill(16)
    starts, lo, hi = okvs._band_positions(seed, keys, params.m_prime, params.w)
    vals64 = values.view(np.uint64).reshape(2 ** 8, 4)
    base = np.frombuffer(bytearray(rng.fill(params.m_prime * 32)),
                         dtype=np.uint64).reshape(params.m_prime, 4)
    t_a, t_b = base.copy(), base.copy()
    ok_a = numba.solve_band(starts, lo, hi, vals64, t_a)
    ok_b = numpy_k.solve_band(starts, lo, hi, vals64, t_b)
    assert ok_a == ok_b is True
    assert (t_a == t_b).all(), "backends produced different tables"
    d_a = numba.decode_band(starts, lo, hi, t_a)
    d_b = numpy_k.decode_band(starts, lo, hi, t_b)
    assert (d_a == d_b).all()
    assert (d_a == vals64).all()


def test_band_row_is_dataclass():
    row = BandRow(start=3, pattern=0b101)
    assert row.start == 3 and row.pattern == 5


def test_kernel_backend_env_selection():
    import subprocess
    import sys

    def backend(env_value):
        return subprocess.run(
            [sys.executable, "-c", "from sikalink import kernels; print(kernels.BACKEND)"],
            capture_output=True, text=True, env={"SIKA_KERNELS": env_value, "PATH": "/usr/bin:/bin"})

    assert backend("numpy").stdout.strip() == "numpy"
    assert backend("numba").stdout.strip() == "numba"
    bad = backend("bogus")
    assert bad.returncode != 0 and "SIKA_KERNELS" in bad.stderr
