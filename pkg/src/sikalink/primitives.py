"""Symbol-level crypto primitives: fixed-length bit strings, the blinding PRP,
key derivation, authenticated record encryption, identifier hashing and
randomness sources.

Bit strings are plain ``bytes`` in big-endian order with a fixed length of
kappa/8 (or 2*kappa/8) bytes; all combining is XOR. The blinding permutation
is AES with a one-time key: a single block call at kappa=128, and two blocks
chained CBC-style with a zero IV at kappa=256 (so block 2 of the output is
E(key, block2 ^ E(key, block1))).

Record encryption is AES-256-GCM under keys produced by a labeled KDF, so a
wrong or missing key fails loudly (AuthFailure) instead of yielding garbage.
"""

from __future__ import annotations

import hashlib
import os
import secrets
from dataclasses import dataclass

import numpy as np
from cryptography.exceptions import InvalidTag
from cryptography.hazmat.primitives.ciphers import Cipher, algorithms, modes
from cryptography.hazmat.primitives.ciphers.aead import AESGCM

# Supported (computational, statistical) security pairs.
SECURITY_LEVELS = {128: 40, 256: 80}

KDF_LABELS = ("payload", "share", "psi-id")

NONCE_BYTES = 12
TAG_BYTES = 16
MAX_PLAINTEXT = 1 << 24


class AuthFailure(Exception):
    """Decryption failed: wrong key or tampered ciphertext."""


@dataclass(frozen=True)
class SecurityParams:
    """Computational (kappa) and statistical (lam) security in bits."""

    kappa: int
    lam: int

    def __post_init__(self):
        if self.kappa not in SECURITY_LEVELS or SECURITY_LEVELS[self.kappa] != self.lam:
            raise ValueError(
                f"unsupported security pair (kappa={self.kappa}, lambda={self.lam}); "
                f"expected one of {[(k, v) for k, v in SECURITY_LEVELS.items()]}"
            )

    @property
    def kappa_bytes(self) -> int:
        return self.kappa // 8


def xor_bits(a: bytes, b: bytes) -> bytes:
    """Bitwise XOR of two equal-length byte strings."""
    if len(a) != len(b):
        raise ValueError(f"xor length mismatch: {len(a)} != {len(b)}")
    return (int.from_bytes(a, "big") ^ int.from_bytes(b, "big")).to_bytes(len(a), "big")


def hash_id(raw: bytes, kappa: int) -> bytes:
    """Map a raw identifier to a kappa-bit id, identically at every party.

    Unsalted on purpose: all providers must agree on the mapping.
    """
    if not raw:
        raise ValueError("empty identifier")
    if kappa not in SECURITY_LEVELS:
        raise ValueError(f"unsupported kappa {kappa}")
    return hashlib.sha256(raw).digest()[: kappa // 8]


def _aes_ecb(key: bytes):
    return Cipher(algorithms.AES(key), modes.ECB())


def prp_forward(key: bytes, block: bytes) -> bytes:
    """Keyed permutation on kappa-bit blocks (kappa inferred from key length)."""
    if len(block) != len(key) or len(key) not in (16, 32):
        raise ValueError(f"prp expects matching 16- or 32-byte key/block, "
                         f"got key={len(key)} block={len(block)}")
    enc = _aes_ecb(key).encryptor()
    if len(key) == 16:
        return enc.update(block)
    c1 = enc.update(block[:16])
    c2 = enc.update(xor_bits(block[16:], c1))
    return c1 + c2


def prp_inverse(key: bytes, block: bytes) -> bytes:
    """Exact inverse of prp_forward. Test-side only; the protocol never inverts."""
    if len(block) != len(key) or len(key) not in (16, 32):
        raise ValueError(f"prp expects matching 16- or 32-byte key/block, "
                         f"got key={len(key)} block={len(block)}")
    dec = _aes_ecb(key).decryptor()
    if len(key) == 16:
        return dec.update(block)
    p1 = dec.update(block[:16])
    p2 = xor_bits(dec.update(block[16:32]), block[:16])
    return p1 + p2


def prp_forward_many(key: bytes, blocks: np.ndarray) -> np.ndarray:
    """prp_forward over a (m, kappa/8) uint8 array in two bulk AES calls."""
    kb = len(key)
    if blocks.ndim != 2 or blocks.shape[1] != kb:
        raise ValueError(f"expected (m, {kb}) array, got {blocks.shape}")
    m = blocks.shape[0]
    if m == 0:
        return blocks.copy()
    enc = _aes_ecb(key).encryptor()
    if kb == 16:
        out = enc.update(blocks.tobytes())
        return np.frombuffer(out, dtype=np.uint8).reshape(m, 16)
    c1 = np.frombuffer(enc.update(blocks[:, :16].tobytes()), dtype=np.uint8).reshape(m, 16)
    x2 = blocks[:, 16:] ^ c1
    c2 = np.frombuffer(enc.update(x2.tobytes()), dtype=np.uint8).reshape(m, 16)
    return np.concatenate([c1, c2], axis=1)


def derive_key(sk: bytes, label: str) -> bytes:
    """Domain-separated 256-bit key from a per-record secret."""
    if label not in KDF_LABELS:
        raise ValueError(f"unknown KDF label {label!r}")
    return hashlib.blake2b(sk, digest_size=32, person=label.encode()).digest()


@dataclass(frozen=True)
class Ciphertext:
    """AEAD ciphertext: 96-bit nonce, body, 128-bit tag."""

    nonce: bytes
    body: bytes
    tag: bytes

    def to_bytes(self) -> bytes:
        return self.nonce + self.body + self.tag

    @classmethod
    def from_bytes(cls, data: bytes) -> "Ciphertext":
        if len(data) < NONCE_BYTES + TAG_BYTES:
            raise ValueError(f"ciphertext too short: {len(data)} bytes")
        return cls(data[:NONCE_BYTES], data[NONCE_BYTES:-TAG_BYTES], data[-TAG_BYTES:])


def sym_encrypt(key: bytes, plaintext: bytes, rng: "Rng | None" = None) -> Ciphertext:
    """Authenticated encryption under a derive_key output."""
    if len(key) != 32:
        raise ValueError("encryption key must be 32 bytes (use derive_key)")
    if len(plaintext) > MAX_PLAINTEXT:
        raise ValueError(f"plaintext exceeds {MAX_PLAINTEXT} bytes")
    nonce = (rng or _SYSTEM_RNG).fill(NONCE_BYTES)
    blob = AESGCM(key).encrypt(nonce, plaintext, None)
    return Ciphertext(nonce, blob[:-TAG_BYTES], blob[-TAG_BYTES:])


def sym_decrypt(key: bytes, ct: Ciphertext) -> bytes:
    """Inverse of sym_encrypt; raises AuthFailure on any mismatch."""
    if len(key) != 32:
        raise ValueError("encryption key must be 32 bytes (use derive_key)")
    try:
        return AESGCM(key).decrypt(ct.nonce, ct.body + ct.tag, None)
    except InvalidTag as exc:
        raise AuthFailure("ciphertext rejected (wrong key or tampered)") from exc


class Rng:
    """Byte-stream randomness source. fill(n) returns n fresh bytes."""

    def fill(self, nbytes: int) -> bytes:
        raise NotImplementedError


class SystemRng(Rng):
    """OS-backed CSPRNG; safe to share across threads."""

    def fill(self, nbytes: int) -> bytes:
        return os.urandom(nbytes)


class SeededRng(Rng):
    """Deterministic AES-256-CTR stream for reproducible simulation runs.

    Not a substitute for SystemRng in deployment; the seed fully determines
    every protocol value derived from it.
    """

    def __init__(self, seed: bytes):
        key = hashlib.sha256(seed).digest()
        self._stream = Cipher(algorithms.AES(key), modes.CTR(bytes(16))).encryptor()

    def fill(self, nbytes: int) -> bytes:
        return self._stream.update(bytes(nbytes))

    @classmethod
    def for_party(cls, seed: bytes, party: int) -> "SeededRng":
        """Independent per-party stream so thread scheduling cannot reorder draws."""
        return cls(hashlib.blake2b(seed, digest_size=32,
                                   person=b"party-%04d" % party).digest())


_SYSTEM_RNG = SystemRng()


def csprng_fill(nbits: int, rng: Rng | None = None) -> bytes:
    """Uniform random bit string of the requested length (whole bytes)."""
    if nbits <= 0 or nbits % 8:
        raise ValueError(f"bit count must be a positive multiple of 8, got {nbits}")
    return (rng or _SYSTEM_RNG).fill(nbits // 8)


def random_token(nbytes: int = 16) -> bytes:
    """Fresh session identifiers and similar one-off tokens."""
    return secrets.token_bytes(nbytes)
