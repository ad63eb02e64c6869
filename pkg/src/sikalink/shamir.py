"""(t, m) threshold sharing over GF(2^128) with 32-bit share indices.

Field: GF(2)[x] mod x^128 + x^7 + x^2 + x + 1. Secrets wider than 128 bits
are split into independent 128-bit components (a 256-bit secret becomes two
polynomials sharing the same x coordinates), which does not weaken the
information-theoretic guarantee. Share x values are simply 1..m, keeping
shares at 4 + kappa/8 bytes.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

from .primitives import Rng, _SYSTEM_RNG

POLY = (1 << 128) | 0x87  # x^128 + x^7 + x^2 + x + 1
MAX_SHARES = (1 << 32) - 1

_X = struct.Struct("<I")


class InsufficientShares(Exception):
    """Fewer shares than the reconstruction threshold."""


@dataclass(frozen=True)
class Share:
    """One evaluation point: nonzero 32-bit index x, kappa-bit y."""

    x: int
    y: bytes

    def to_bytes(self) -> bytes:
        return _X.pack(self.x) + self.y

    @classmethod
    def from_bytes(cls, data: bytes) -> "Share":
        if len(data) not in (4 + 16, 4 + 32):
            raise ValueError(f"bad share length {len(data)}")
        return cls(x=_X.unpack_from(data)[0], y=data[4:])


@dataclass(frozen=True)
class ThresholdPolicy:
    """Per-provider release threshold t over m shares."""

    t: int
    m: int

    def __post_init__(self):
        if not 1 <= self.t <= self.m:
            raise ValueError(f"threshold must satisfy 1 <= t <= m, got t={self.t} m={self.m}")


def gf_mul(a: int, b: int) -> int:
    """Carry-less multiply mod POLY."""
    if a.bit_length() < b.bit_length():
        a, b = b, a
    r = 0
    while b:
        if b & 1:
            r ^= a
        b >>= 1
        a <<= 1
        if a >> 128:
            a ^= POLY
    return r


def gf_inv(a: int) -> int:
    """Multiplicative inverse via polynomial extended Euclid."""
    if a == 0:
        raise ZeroDivisionError("zero has no inverse in GF(2^128)")
    u, v = a, POLY
    g1, g2 = 1, 0
    while u != 1:
        j = u.bit_length() - v.bit_length()
        if j < 0:
            u, v = v, u
            g1, g2 = g2, g1
            j = -j
        u ^= v << j
        g1 ^= g2 << j
    return g1


def _components(secret: bytes) -> list[int]:
    if len(secret) not in (16, 32):
        raise ValueError(f"secret must be 16 or 32 bytes, got {len(secret)}")
    return [int.from_bytes(secret[i:i + 16], "big") for i in range(0, len(secret), 16)]


def split(secret: bytes, t: int, m: int, rng: Rng | None = None) -> list[Share]:
    """Split into m shares at x = 1..m; any t of them reconstruct."""
    if t < 1 or t > m:
        raise ValueError(f"need 1 <= t <= m, got t={t} m={m}")
    if m > MAX_SHARES:
        raise ValueError(f"at most {MAX_SHARES} shares")
    rng = rng or _SYSTEM_RNG
    comps = _components(secret)
    # coeffs[c] = [secret_c, a_1, ..., a_{t-1}], degree t-1
    coeffs = [[comp] + [int.from_bytes(rng.fill(16), "big") for _ in range(t - 1)]
              for comp in comps]
    shares = []
    for x in range(1, m + 1):
        ys = []
        for poly in coeffs:
            acc = 0
            for c in reversed(poly):
                acc = gf_mul(acc, x) ^ c
            ys.append(acc)
        shares.append(Share(x=x, y=b"".join(y.to_bytes(16, "big") for y in ys)))
    return shares


def reconstruct(shares, t: int) -> bytes:
    """Lagrange-interpolate the first t shares (sorted by x) at x = 0."""
    shares = sorted(shares, key=lambda s: s.x)
    if len(shares) < t:
        raise InsufficientShares(f"need {t} shares, got {len(shares)}")
    shares = shares[:t]
    xs = [s.x for s in shares]
    if len(set(xs)) != t:
        raise ValueError("duplicate share indices")
    ylen = len(shares[0].y)
    if any(len(s.y) != ylen for s in shares):
        raise ValueError("inconsistent share widths")
    ncomp = ylen // 16
    out = []
    lams = []
    for j in range(t):
        num, den = 1, 1
        for i in range(t):
            if i == j:
                continue
            num = gf_mul(num, xs[i])
            den = gf_mul(den, xs[j] ^ xs[i])
        lams.append(gf_mul(num, gf_inv(den)))
    for c in range(ncomp):
        acc = 0
        for j, s in enumerate(shares):
            y = int.from_bytes(s.y[c * 16:(c + 1) * 16], "big")
            acc ^= gf_mul(lams[j], y)
        out.append(acc.to_bytes(16, "big"))
    return b"".join(out)
