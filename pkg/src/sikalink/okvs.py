"""Oblivious key-value store over GF(2) built on random band matrices.

Encode places each kappa-bit key on a short random band of the table: a
seeded PRF maps the key to a start row and a w-bit band pattern (leading bit
forced to 1), and the key's 2*kappa-bit value must equal the XOR of the table
rows selected by the pattern. Solving all m constraints is banded Gaussian
elimination over GF(2) after sorting rows by start position; unconstrained
rows keep the uniform random values they were pre-filled with, which is what
makes absent-key decodes uniform and the table itself oblivious. A solve
failure (linearly dependent bands) is retried under a fresh seed; the seed
that succeeded ships inside the table.

Decode is O(w) row XORs and never fails: keys that were never encoded simply
yield the XOR of random rows.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .primitives import Rng, SecurityParams, _SYSTEM_RNG, _aes_ecb

DEFAULT_EPSILON = 0.15  # empirically <1% first-attempt failure down to m=2^12
DEFAULT_MAX_RETRIES = 16
SEED_BYTES = 16

_MAGIC = b"OKVS"
_VERSION = 1
_HEADER = struct.Struct("<4sBHIQ")  # magic, version, kappa, w, m_prime

# Second-block tweak for the band PRF (E_seed(t1 ^ _TWEAK)).
_TWEAK = bytes(15) + b"\x01"


class EncodeFailure(Exception):
    """All encode attempts hit a linearly dependent band system."""


@dataclass(frozen=True)
class OkvsParams:
    """Sizing for one store: m pairs in ceil((1+epsilon)*m) + w rows."""

    m: int
    kappa: int
    lam: int
    w: int
    epsilon: float
    m_prime: int

    @classmethod
    def create(cls, m: int, sec: SecurityParams,
               epsilon: float = DEFAULT_EPSILON, w: int | None = None) -> "OkvsParams":
        if m < 0:
            raise ValueError("pair count must be >= 0")
        if epsilon <= 0:
            raise ValueError("expansion must be > 0")
        w_min = sec.lam + (math.ceil(math.log2(m)) if m >= 2 else 0) + 8
        if w is None:
            w = w_min
        if w < w_min:
            raise ValueError(f"band width {w} below minimum {w_min}")
        if w > 128:
            raise ValueError(f"band width {w} exceeds the 128-bit implementation cap")
        m_prime = math.ceil((1 + epsilon) * m) + w
        return cls(m=m, kappa=sec.kappa, lam=sec.lam, w=w,
                   epsilon=epsilon, m_prime=m_prime)

    @property
    def key_bytes(self) -> int:
        return self.kappa // 8

    @property
    def value_bytes(self) -> int:
        return 2 * self.kappa // 8


@dataclass(frozen=True)
class BandRow:
    """Band placement of one key: table row `start`, w pattern bits, bit 0 set."""

    start: int
    pattern: int


@dataclass
class OkvsTable:
    """Encoded store; rows are big-endian 2*kappa-bit strings."""

    seed: bytes
    kappa: int
    w: int
    rows: np.ndarray  # (m_prime, 2*kappa//8) uint8
    attempts: int = field(default=1, compare=False)

    @property
    def m_prime(self) -> int:
        return self.rows.shape[0]

    @property
    def key_bytes(self) -> int:
        return self.kappa // 8

    @property
    def value_bytes(self) -> int:
        return 2 * self.kappa // 8

    def to_bytes(self) -> bytes:
        head = _HEADER.pack(_MAGIC, _VERSION, self.kappa, self.w, self.m_prime)
        return head + self.seed + self.rows.tobytes()

    @classmethod
    def from_bytes(cls, data: bytes) -> "OkvsTable":
        if len(data) < _HEADER.size + SEED_BYTES:
            raise ValueError("truncated store")
        magic, version, kappa, w, m_prime = _HEADER.unpack_from(data)
        if magic != _MAGIC or version != _VERSION:
            raise ValueError("bad store header")
        vb = 2 * kappa // 8
        seed = data[_HEADER.size:_HEADER.size + SEED_BYTES]
        body = data[_HEADER.size + SEED_BYTES:]
        if len(body) != m_prime * vb:
            raise ValueError(f"store body length {len(body)} != {m_prime}*{vb}")
        rows = np.frombuffer(body, dtype=np.uint8).reshape(m_prime, vb).copy()
        return cls(seed=seed, kappa=kappa, w=w, rows=rows)


def _band_positions(seed: bytes, keys: np.ndarray, m_prime: int, w: int):
    """Seeded PRF from keys to (start, pattern-lo, pattern-hi) arrays.

    One CBC-MAC block chain per key plus one expansion block, all batched
    through bulk AES-ECB calls.
    """
    m, kb = keys.shape
    if m == 0:
        z = np.zeros(0, dtype=np.uint64)
        return np.zeros(0, dtype=np.int64), z, z
    enc = _aes_ecb(seed).encryptor()
    t1 = np.frombuffer(enc.update(keys[:, :16].tobytes()), dtype=np.uint8).reshape(m, 16)
    if kb == 32:
        t1 = np.frombuffer(enc.update((t1 ^ keys[:, 16:]).tobytes()),
                           dtype=np.uint8).reshape(m, 16)
    tweak = np.frombuffer(_TWEAK, dtype=np.uint8)
    t2 = np.frombuffer(enc.update((t1 ^ tweak).tobytes()), dtype=np.uint8).reshape(m, 16)

    span = np.uint64(m_prime - w + 1)
    starts = (t1[:, :8].copy().view(">u8").reshape(m) % span).astype(np.int64)
    lo = t1[:, 8:16].copy().view("<u8").reshape(m)
    hi = t2[:, :8].copy().view("<u8").reshape(m)
    if w >= 64:
        hi &= np.uint64((1 << (w - 64)) - 1)
    else:
        lo &= np.uint64((1 << w) - 1)
        hi &= np.uint64(0)
    lo |= np.uint64(1)
    return starts, lo, hi


def band_map(seed: bytes, key: bytes, params: OkvsParams) -> BandRow:
    """Band placement of a single key under `seed`."""
    keys = np.frombuffer(key, dtype=np.uint8).reshape(1, len(key))
    starts, lo, hi = _band_positions(seed, keys, params.m_prime, params.w)
    return BandRow(start=int(starts[0]), pattern=int(lo[0]) | (int(hi[0]) << 64))


def encode_arrays(keys: np.ndarray, values: np.ndarray, params: OkvsParams,
                  max_retries: int = DEFAULT_MAX_RETRIES,
                  rng: Rng | None = None) -> OkvsTable:
    """Encode aligned (m, kappa/8) keys and (m, 2*kappa/8) values."""
    rng = rng or _SYSTEM_RNG
    m = keys.shape[0]
    if m != params.m or values.shape[0] != m:
        raise ValueError("key/value count does not match params.m")
    if keys.shape[1] != params.key_bytes or values.shape[1] != params.value_bytes:
        raise ValueError("key or value width does not match params")
    if m and len(np.unique(keys, axis=0)) != m:
        raise ValueError("duplicate keys")
    vw = params.value_bytes // 8
    values_u64 = np.ascontiguousarray(values).view(np.uint64).reshape(m, vw)
    for attempt in range(1, max_retries + 1):
        seed = rng.fill(SEED_BYTES)
        rows = np.frombuffer(bytearray(rng.fill(params.m_prime * params.value_bytes)),
                             dtype=np.uint8).reshape(params.m_prime, params.value_bytes)
        table = rows.view(np.uint64).reshape(params.m_prime, vw)
        starts, lo, hi = _band_positions(seed, keys, params.m_prime, params.w)
        if kernels.solve_band(starts, lo, hi, values_u64, table):
            return OkvsTable(seed=seed, kappa=params.kappa, w=params.w,
                             rows=rows, attempts=attempt)
    raise EncodeFailure(f"encode failed after {max_retries} attempts (m={m}, w={params.w})")


def encode(pairs, params: OkvsParams, max_retries: int = DEFAULT_MAX_RETRIES,
           rng: Rng | None = None) -> OkvsTable:
    """Encode an iterable of (key, value) byte-string pairs."""
    pairs = list(pairs)
    keys = np.zeros((len(pairs), params.key_bytes), dtype=np.uint8)
    values = np.zeros((len(pairs), params.value_bytes), dtype=np.uint8)
    for i, (k, v) in enumerate(pairs):
        if len(k) != params.key_bytes or len(v) != params.value_bytes:
            raise ValueError(f"pair {i}: expected {params.key_bytes}-byte key and "
                             f"{params.value_bytes}-byte value")
        keys[i] = np.frombuffer(k, dtype=np.uint8)
        values[i] = np.frombuffer(v, dtype=np.uint8)
    return encode_arrays(keys, values, params, max_retries=max_retries, rng=rng)


def decode_many(table: OkvsTable, keys: np.ndarray) -> np.ndarray:
    """Decode a (q, kappa/8) key array to a (q, 2*kappa/8) value array."""
    if keys.shape[1] != table.key_bytes:
        raise ValueError(f"expected {table.key_bytes}-byte keys, got {keys.shape[1]}")
    starts, lo, hi = _band_positions(table.seed, keys, table.m_prime, table.w)
    vw = table.value_bytes // 8
    table_u64 = np.ascontiguousarray(table.rows).view(np.uint64).reshape(table.m_prime, vw)
    out = kernels.decode_band(starts, lo, hi, table_u64)
    return out.view(np.uint8).reshape(keys.shape[0], table.value_bytes)


def decode(table: OkvsTable, key: bytes) -> bytes:
    """Decode one key; absent keys yield a pseudo-value, never an error."""
    keys = np.frombuffer(key, dtype=np.uint8).reshape(1, len(key))
    return decode_many(table, keys)[0].tobytes()
