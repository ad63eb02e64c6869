"""Output protocols layered on the key-agreement core.

Every record's payload is encrypted up front under a key only derivable from
that record's secret; the collector can therefore decrypt exactly the records
whose identifier is held by all providers. Modes:

    psi-id            encrypt the identifier itself (plain delegated PSI)
    payload           encrypt the record attributes (labeled D-PSI)
    threshold-payload additionally gate release on the intersection size via
                      a (t, m) sharing of a per-provider secret r: attributes
                      are encrypted under KDF(r ^ sk_k), and each record
                      carries its share of r encrypted under KDF(sk_k), so r
                      is recoverable only from >= t matched records

Plaintexts are framed as a marker byte (1 real, 0 padding record), a
length-prefixed field list, and zero padding up to a bucket multiple so
ciphertext lengths do not reveal the real/padding split or attribute sizes.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from . import shamir
from .primitives import (AuthFailure, Ciphertext, Rng, _SYSTEM_RNG, derive_key,
                         sym_decrypt, sym_encrypt, xor_bits)
from .shamir import Share, ThresholdPolicy
from .sika import IntersectionResult, ProtocolError, ProviderOutput

MODE_PSI_ID = "psi-id"
MODE_PAYLOAD = "payload"
MODE_THRESHOLD = "threshold-payload"
MODES = (MODE_PSI_ID, MODE_PAYLOAD, MODE_THRESHOLD)

_MODE_WIRE = {MODE_PSI_ID: 1, MODE_PAYLOAD: 2, MODE_THRESHOLD: 3}
_MODE_UNWIRE = {v: k for k, v in _MODE_WIRE.items()}

_KDF_LABEL = {MODE_PSI_ID: "psi-id", MODE_PAYLOAD: "payload", MODE_THRESHOLD: "payload"}

DEFAULT_PAD_BUCKET = 64

_HEAD = struct.Struct("<BIQ")  # mode, t, m
_U32 = struct.Struct("<I")

_REAL = 0x01
_DUMMY = 0x00


@dataclass(frozen=True)
class Record:
    """One provider row: identifier plus its ordered attribute strings."""

    raw_id: bytes
    atts: tuple[str, ...]

    def __post_init__(self):
        if not self.raw_id:
            raise ValueError("empty identifier")


@dataclass
class PayloadMessage:
    """Per-provider ciphertext upload, aligned with the key-agreement upload."""

    mode: str
    t: int
    bnyms: np.ndarray              # (m, kb), same order as the BMessage
    cts: list[Ciphertext]
    share_cts: list[Ciphertext] | None  # threshold mode only

    @property
    def m(self) -> int:
        return self.bnyms.shape[0]

    def to_bytes(self) -> bytes:
        parts = [_HEAD.pack(_MODE_WIRE[self.mode], self.t, self.m)]
        for k in range(self.m):
            parts.append(self.bnyms[k].tobytes())
            blob = self.cts[k].to_bytes()
            parts.append(_U32.pack(len(blob)))
            parts.append(blob)
            if self.share_cts is not None:
                blob = self.share_cts[k].to_bytes()
                parts.append(_U32.pack(len(blob)))
                parts.append(blob)
        return b"".join(parts)

    @classmethod
    def from_bytes(cls, data: bytes, kappa: int) -> "PayloadMessage":
        if len(data) < _HEAD.size:
            raise ProtocolError("truncated payload message")
        mode_w, t, m = _HEAD.unpack_from(data)
        if mode_w not in _MODE_UNWIRE:
            raise ProtocolError(f"unknown payload mode byte {mode_w}")
        mode = _MODE_UNWIRE[mode_w]
        kb = kappa // 8
        off = _HEAD.size
        bnyms = np.zeros((m, kb), dtype=np.uint8)
        cts: list[Ciphertext] = []
        share_cts: list[Ciphertext] | None = [] if mode == MODE_THRESHOLD else None

        def take_ct(off: int) -> tuple[Ciphertext, int]:
            if off + 4 > len(data):
                raise ProtocolError("truncated ciphertext frame")
            (ln,) = _U32.unpack_from(data, off)
            off += 4
            if off + ln > len(data):
                raise ProtocolError("truncated ciphertext body")
            return Ciphertext.from_bytes(data[off:off + ln]), off + ln

        for k in range(m):
            if off + kb > len(data):
                raise ProtocolError("truncated payload entry")
            bnyms[k] = np.frombuffer(data, dtype=np.uint8, count=kb, offset=off)
            off += kb
            ct, off = take_ct(off)
            cts.append(ct)
            if share_cts is not None:
                ct, off = take_ct(off)
                share_cts.append(ct)
        if off != len(data):
            raise ProtocolError("trailing bytes in payload message")
        return cls(mode=mode, t=t, bnyms=bnyms, cts=cts, share_cts=share_cts)


@dataclass
class JoinedOutput:
    """Collector join: one row per intersection rank p, columns per provider.

    rows[p-1][i-1] is provider i's attribute list for rank p, or None when
    that provider's threshold exceeded the intersection size (locked).
    """

    size: int
    rows: list[list[list[str] | None]]
    locked: set[int]


def cardinality(result: IntersectionResult) -> int:
    """Size of the intersection (the highest rank in the result)."""
    return result.size


def _frame_fields(fields: list[bytes]) -> bytes:
    out = [bytes([_REAL]), _U32.pack(len(fields))]
    for f in fields:
        out.append(_U32.pack(len(f)))
        out.append(f)
    return b"".join(out)


def _pad(blob: bytes, bucket: int) -> bytes:
    total = max(1, -(-len(blob) // bucket)) * bucket
    return blob + bytes(total - len(blob))


def _parse_fields(blob: bytes) -> list[bytes]:
    if not blob:
        raise ProtocolError("empty plaintext")
    if blob[0] == _DUMMY:
        raise ProtocolError("decrypted a padding record (session desync)")
    if blob[0] != _REAL:
        raise ProtocolError(f"bad plaintext marker {blob[0]}")
    off = 1
    (count,) = _U32.unpack_from(blob, off)
    off += 4
    fields = []
    for _ in range(count):
        (ln,) = _U32.unpack_from(blob, off)
        off += 4
        if off + ln > len(blob):
            raise ProtocolError("truncated plaintext field")
        fields.append(blob[off:off + ln])
        off += ln
    return fields  # trailing bytes are bucket padding


def encrypt_payload(pout: ProviderOutput, records, mode: str,
                    policy: ThresholdPolicy | None = None,
                    rng: Rng | None = None,
                    pad_bucket: int = DEFAULT_PAD_BUCKET) -> PayloadMessage:
    """Encrypt one provider's records, aligned with its key-agreement output."""
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
    records = list(records)
    if len(records) != pout.n_real:
        raise ValueError(f"{len(records)} records for {pout.n_real} real entries")
    if (policy is not None) != (mode == MODE_THRESHOLD):
        raise ValueError("threshold policy required exactly in threshold-payload mode")
    rng = rng or _SYSTEM_RNG
    m = pout.bnyms.shape[0]
    kb = pout.bnyms.shape[1]
    if policy is not None and policy.m != m:
        raise ValueError(f"policy covers {policy.m} shares, need {m}")

    r_secret = b""
    shares: list[Share] = []
    if mode == MODE_THRESHOLD:
        r_secret = rng.fill(kb)
        shares = shamir.split(r_secret, policy.t, m, rng=rng)

    cts: list[Ciphertext] = [None] * m  # type: ignore[list-item]
    share_cts: list[Ciphertext] | None = [None] * m if mode == MODE_THRESHOLD else None  # type: ignore[list-item]
    label = _KDF_LABEL[mode]
    for k in range(m):
        sk = pout.sks[k].tobytes()
        if k < pout.n_real:
            rec = records[k]
            if mode == MODE_PSI_ID:
                fields = [rec.raw_id]
            else:
                fields = [a.encode() for a in rec.atts]
            plain = _pad(_frame_fields(fields), pad_bucket)
        else:
            plain = _pad(bytes([_DUMMY]), pad_bucket)
        if mode == MODE_THRESHOLD:
            pay_key = derive_key(xor_bits(r_secret, sk), label)
            share_cts[k] = sym_encrypt(derive_key(sk, "share"),
                                       shares[k].to_bytes(), rng=rng)
        else:
            pay_key = derive_key(sk, label)
        cts[k] = sym_encrypt(pay_key, plain, rng=rng)

    perm = pout.perm
    return PayloadMessage(
        mode=mode,
        t=policy.t if policy else 0,
        bnyms=pout.bnyms[perm].copy(),
        cts=[cts[k] for k in perm],
        share_cts=[share_cts[k] for k in perm] if share_cts is not None else None,
    )


def collector_join(result: IntersectionResult, msgs: dict[int, PayloadMessage],
                   mode: str) -> JoinedOutput:
    """Decrypt matched records and join them across providers by rank.

    Ciphertexts of unmatched entries are never touched; in threshold mode a
    provider whose t exceeds the intersection size stays locked (its columns
    are None) while the others still decrypt.
    """
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
    n = len(result.bnyms)
    if sorted(msgs) != list(range(1, n + 1)):
        raise ProtocolError(f"need one payload message per provider 1..{n}")
    size = result.size
    rows: list[list[list[str] | None]] = [[None] * n for _ in range(size)]
    locked: set[int] = set()
    label = _KDF_LABEL[mode]

    for i in range(1, n + 1):
        msg = msgs[i]
        if msg.mode != mode:
            raise ProtocolError(f"provider {i} sent mode {msg.mode!r}, expected {mode!r}")
        pos = {msg.bnyms[k].tobytes(): k for k in range(msg.m)}
        have = {result.bnyms[i - 1][k].tobytes() for k in range(result.bnyms[i - 1].shape[0])}
        if set(pos) != have:
            raise ProtocolError(f"payload entries of provider {i} do not match its upload")

        matched = [(int(p), result.bnyms[i - 1][k].tobytes(), result.sks[i - 1][k].tobytes())
                   for k, p in enumerate(result.ps[i - 1]) if p > 0]

        r_secret = b""
        if mode == MODE_THRESHOLD:
            t_i = msg.t
            if t_i < 1:
                raise ProtocolError(f"provider {i} sent invalid threshold {t_i}")
            if size < t_i:
                locked.add(i)
                continue
            shares = []
            for _, bnym, sk in matched:
                try:
                    blob = sym_decrypt(derive_key(sk, "share"), msg.share_cts[pos[bnym]])
                except AuthFailure as exc:
                    raise ProtocolError(f"share of provider {i} undecryptable "
                                        f"(session desync)") from exc
                shares.append(Share.from_bytes(blob))
            r_secret = shamir.reconstruct(shares, t_i)

        for p, bnym, sk in matched:
            if mode == MODE_THRESHOLD:
                key = derive_key(xor_bits(r_secret, sk), label)
            else:
                key = derive_key(sk, label)
            try:
                plain = sym_decrypt(key, msg.cts[pos[bnym]])
            except AuthFailure as exc:
                raise ProtocolError(f"matched record of provider {i} undecryptable "
                                    f"(session desync)") from exc
            fields = _parse_fields(plain)
            rows[p - 1][i - 1] = [f.decode() for f in fields]
    return JoinedOutput(size=size, rows=rows, locked=locked)
