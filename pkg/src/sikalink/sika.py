"""Core set-intersection key-agreement state machines.

Provider side (steps 1-3): sample a blinding key, per-record nym shares s_k
and an n-column matrix of z-values; publish to every peer j an oblivious
store mapping id_k -> (s_k ^ PRP(key, z_k->j)) || z_k->j; after receiving the
n-1 peer stores, decode them at the local ids and fold the blinded shares
into a blinded pseudonym per record. The record's secret key is the XOR of
its own z-row, so it is fixed locally before any peer input arrives.

Collector side (step 4): each provider uploads its blinding key and, per
record, the blinded pseudonym plus the z-vector it decoded. Applying every
other provider's PRP to the matching z entries strips the blinding; records
held by all providers collapse to one global pseudonym per id, while any
record missing somewhere unblinds to an unlinkable pseudorandom value. For
records in the intersection the collector re-derives each provider's secret
key by XORing that provider's z column across all uploads.

Entries are uploaded in a fresh uniform order so the collector learns nothing
from record positions; the provider keeps its own output in input order.
"""

from __future__ import annotations

import enum
import logging
import struct
from dataclasses import dataclass, field

import numpy as np

from . import okvs
from .primitives import Rng, SecurityParams, _SYSTEM_RNG, hash_id, prp_forward_many

log = logging.getLogger("sikalink.sika")

COLLECTOR = 0  # my_index value for the collector role

_BMSG_HEAD = struct.Struct("<HIQ")  # kappa, n, m


class InputError(ValueError):
    """Rejected local input (duplicates, oversize, bad index)."""


class ProtocolError(Exception):
    """Peer message or session state violates the protocol contract."""


class Phase(enum.Enum):
    INIT = "init"
    OKVS_SENT = "okvs_sent"
    FINALIZED = "finalized"


@dataclass(frozen=True)
class SessionConfig:
    """Parameters every party must agree on before the first message."""

    session_id: bytes
    n: int
    m: int
    sec: SecurityParams
    my_index: int  # 0 = collector, 1..n = provider

    def __post_init__(self):
        if len(self.session_id) != 16:
            raise ValueError("session_id must be 16 bytes")
        if self.n < 2:
            raise ValueError("need at least 2 providers")
        if self.m < 1:
            raise ValueError("padded input size must be >= 1")
        if not 0 <= self.my_index <= self.n:
            raise ValueError(f"index {self.my_index} out of range for n={self.n}")

    def okvs_params(self) -> okvs.OkvsParams:
        return okvs.OkvsParams.create(self.m, self.sec)


@dataclass
class ProviderState:
    """Single-owner provider state; phases only move forward."""

    cfg: SessionConfig
    rng: Rng
    key: bytes
    ids: np.ndarray        # (m, kb) hashed ids, dummies appended
    n_real: int
    s: np.ndarray          # (m, kb) nym shares
    z: np.ndarray          # (n, m, kb); z[j-1] is the column for provider j
    phase: Phase = Phase.INIT

    @property
    def index(self) -> int:
        return self.cfg.my_index


@dataclass
class ProviderOutput:
    """Local result M^i in input order: per record (id, bnym, sk)."""

    ids: np.ndarray        # (m, kb)
    bnyms: np.ndarray      # (m, kb)
    sks: np.ndarray        # (m, kb)
    n_real: int
    perm: np.ndarray       # upload order used for the collector message

    def entry(self, k: int) -> tuple[bytes, bytes, bytes]:
        return (self.ids[k].tobytes(), self.bnyms[k].tobytes(), self.sks[k].tobytes())


@dataclass
class BMessage:
    """Provider upload: blinding key plus permuted (bnym, z-vector) tuples."""

    key: bytes
    bnyms: np.ndarray      # (m, kb)
    zvecs: np.ndarray      # (m, n, kb)

    @property
    def m(self) -> int:
        return self.bnyms.shape[0]

    @property
    def n(self) -> int:
        return self.zvecs.shape[1]

    def to_bytes(self) -> bytes:
        kappa = self.bnyms.shape[1] * 8
        head = _BMSG_HEAD.pack(kappa, self.n, self.m)
        return head + self.key + self.bnyms.tobytes() + self.zvecs.tobytes()

    @classmethod
    def from_bytes(cls, data: bytes) -> "BMessage":
        if len(data) < _BMSG_HEAD.size:
            raise ProtocolError("truncated upload")
        kappa, n, m = _BMSG_HEAD.unpack_from(data)
        if kappa not in (128, 256):
            raise ProtocolError(f"bad kappa {kappa} in upload")
        kb = kappa // 8
        off = _BMSG_HEAD.size
        want = off + kb + m * kb + m * n * kb
        if len(data) != want:
            raise ProtocolError(f"upload length {len(data)} != expected {want}")
        key = data[off:off + kb]
        off += kb
        bnyms = np.frombuffer(data, dtype=np.uint8, count=m * kb,
                              offset=off).reshape(m, kb).copy()
        off += m * kb
        zvecs = np.frombuffer(data, dtype=np.uint8, count=m * n * kb,
                              offset=off).reshape(m, n, kb).copy()
        return cls(key=key, bnyms=bnyms, zvecs=zvecs)


@dataclass
class IntersectionResult:
    """Collector output R: per provider, per uploaded entry, (bnym, p, sk).

    p is the 1-based rank of the record's global pseudonym in the ascending
    ordering of intersection pseudonyms, or 0 for records outside it (sk rows
    are zeroed there and must not be read).
    """

    size: int
    bnyms: list[np.ndarray]   # per provider (m, kb), upload order
    ps: list[np.ndarray]      # per provider (m,) int64, 0 = not matched
    sks: list[np.ndarray]     # per provider (m, kb), valid where ps > 0

    def entries(self, i: int):
        """Per-entry view for provider i (1-based): (bnym, p | None, sk | None)."""
        b, p, s = self.bnyms[i - 1], self.ps[i - 1], self.sks[i - 1]
        for k in range(b.shape[0]):
            if p[k] > 0:
                yield b[k].tobytes(), int(p[k]), s[k].tobytes()
            else:
                yield b[k].tobytes(), None, None


@dataclass
class CollectorState:
    """Collector inbox: first upload per provider wins, repeats are ignored."""

    cfg: SessionConfig
    received: dict[int, BMessage] = field(default_factory=dict)

    @property
    def ready(self) -> bool:
        return len(self.received) == self.cfg.n


def provider_init(raw_ids, cfg: SessionConfig, rng: Rng | None = None) -> ProviderState:
    """Hash and pad the local input set, then sample all per-session randomness."""
    if not 1 <= cfg.my_index <= cfg.n:
        raise InputError(f"provider index must be 1..{cfg.n}, got {cfg.my_index}")
    raw_ids = list(raw_ids)
    if len(raw_ids) > cfg.m:
        raise InputError(f"{len(raw_ids)} records exceed the padded size m={cfg.m}")
    rng = rng or _SYSTEM_RNG
    kb = cfg.sec.kappa_bytes

    seen: dict[bytes, int] = {}
    dups: list[tuple[int, int]] = []
    ids = np.zeros((cfg.m, kb), dtype=np.uint8)
    for k, raw in enumerate(raw_ids):
        h = hash_id(raw, cfg.sec.kappa)
        if h in seen:
            dups.append((seen[h] + 1, k + 1))
        seen[h] = k
        ids[k] = np.frombuffer(h, dtype=np.uint8)
    if dups:
        raise InputError("duplicate identifiers at rows (1-based): "
                         + ", ".join(f"{a}/{b}" for a, b in dups))
    n_pad = cfg.m - len(raw_ids)
    if n_pad:
        ids[len(raw_ids):] = np.frombuffer(rng.fill(n_pad * kb),
                                           dtype=np.uint8).reshape(n_pad, kb)

    key = rng.fill(kb)
    s = np.frombuffer(rng.fill(cfg.m * kb), dtype=np.uint8).reshape(cfg.m, kb).copy()
    z = np.frombuffer(rng.fill(cfg.n * cfg.m * kb),
                      dtype=np.uint8).reshape(cfg.n, cfg.m, kb).copy()
    return ProviderState(cfg=cfg, rng=rng, key=key, ids=ids,
                         n_real=len(raw_ids), s=s, z=z)


def build_okvs_for(state: ProviderState, j: int) -> okvs.OkvsTable:
    """Store for peer j: id_k -> (s_k ^ PRP(key, z_k->j)) || z_k->j."""
    if state.phase is Phase.FINALIZED:
        raise ProtocolError("provider already finalized")
    if j == state.index or not 1 <= j <= state.cfg.n:
        raise ValueError(f"destination must be another provider in 1..{state.cfg.n}")
    zj = state.z[j - 1]
    bs = state.s ^ prp_forward_many(state.key, zj)
    values = np.concatenate([bs, zj], axis=1)
    table = okvs.encode_arrays(state.ids, values, state.cfg.okvs_params(), rng=state.rng)
    state.phase = Phase.OKVS_SENT
    return table


def _check_table(table: okvs.OkvsTable, params: okvs.OkvsParams, sender: int):
    if table.kappa != params.kappa or table.w != params.w or table.m_prime != params.m_prime:
        raise ProtocolError(
            f"table from provider {sender} sized (kappa={table.kappa}, w={table.w}, "
            f"rows={table.m_prime}); expected ({params.kappa}, {params.w}, {params.m_prime})")


def provider_finalize(state: ProviderState, okvs_in) -> tuple[ProviderOutput, BMessage]:
    """Fold the n-1 received stores into M^i and the collector upload."""
    cfg = state.cfg
    i = state.index
    others = [j for j in range(1, cfg.n + 1) if j != i]
    missing = [j for j in others if j not in okvs_in]
    if missing:
        raise ProtocolError(f"missing store from provider(s) {missing}")
    extra = [j for j in okvs_in if j not in others]
    if extra:
        raise ProtocolError(f"unexpected store sender(s) {extra}")
    params = cfg.okvs_params()
    kb = cfg.sec.kappa_bytes

    bnyms = state.s.copy()
    zvecs = np.zeros((cfg.m, cfg.n, kb), dtype=np.uint8)
    zvecs[:, i - 1, :] = state.z[i - 1]
    for j in others:
        table = okvs_in[j]
        _check_table(table, params, j)
        decoded = okvs.decode_many(table, state.ids)
        bnyms ^= decoded[:, :kb]
        zvecs[:, j - 1, :] = decoded[:, kb:]
    sks = np.bitwise_xor.reduce(state.z, axis=0)

    # Upload in a fresh uniform order; input order stays local.
    sort_keys = np.frombuffer(state.rng.fill(cfg.m * 8), dtype=np.uint64)
    perm = np.argsort(sort_keys, kind="stable")
    out = ProviderOutput(ids=state.ids, bnyms=bnyms, sks=sks,
                         n_real=state.n_real, perm=perm)
    msg = BMessage(key=state.key, bnyms=bnyms[perm].copy(), zvecs=zvecs[perm].copy())
    state.phase = Phase.FINALIZED
    return out, msg


def collector_absorb(state: CollectorState, i: int, msg: BMessage) -> None:
    """Store the first upload from provider i; silently ignore repeats."""
    cfg = state.cfg
    if not 1 <= i <= cfg.n:
        raise ProtocolError(f"upload from unknown provider index {i}")
    if i in state.received:
        log.info("duplicate upload from provider %d ignored", i)
        return
    kb = cfg.sec.kappa_bytes
    if msg.m != cfg.m or msg.n != cfg.n or len(msg.key) != kb or msg.bnyms.shape[1] != kb:
        raise ProtocolError(
            f"upload from provider {i} sized (m={msg.m}, n={msg.n}, key={len(msg.key)}B); "
            f"expected (m={cfg.m}, n={cfg.n}, key={kb}B)")
    state.received[i] = msg


def collector_unblind(state: CollectorState) -> list[np.ndarray]:
    """Strip each provider's blinding: nym_k = bnym_k ^ XOR_j PRP(key_j, z_j->i)."""
    cfg = state.cfg
    if not state.ready:
        raise ProtocolError(f"have {len(state.received)}/{cfg.n} uploads")
    nyms = []
    for i in range(1, cfg.n + 1):
        msg = state.received[i]
        acc = msg.bnyms.copy()
        for j in range(1, cfg.n + 1):
            if j == i:
                continue
            acc ^= prp_forward_many(state.received[j].key, msg.zvecs[:, j - 1, :])
        nyms.append(acc)
    return nyms


def collector_intersect(state: CollectorState, nyms: list[np.ndarray]) -> IntersectionResult:
    """Match global pseudonyms across all n uploads and recover secret keys.

    A pseudonym counts only if present in every upload (the two-list shortcut
    is skipped; the full check removes the residual false-positive path).
    """
    cfg = state.cfg
    kb = cfg.sec.kappa_bytes
    maps: list[dict[bytes, int]] = []
    for i in range(1, cfg.n + 1):
        d: dict[bytes, int] = {}
        arr = nyms[i - 1]
        for k in range(cfg.m):
            v = arr[k].tobytes()
            if v in d:
                raise ProtocolError(f"pseudonym collision inside upload of provider {i}")
            d[v] = k
        maps.append(d)

    common = set(maps[0])
    for d in maps[1:]:
        common &= set(d)
    ordered = sorted(common)  # ascending big-endian numeric order defines p
    rank = {v: p + 1 for p, v in enumerate(ordered)}

    bnyms, ps, sks = [], [], []
    for i in range(1, cfg.n + 1):
        msg = state.received[i]
        p_arr = np.zeros(cfg.m, dtype=np.int64)
        sk_arr = np.zeros((cfg.m, kb), dtype=np.uint8)
        for v, p in rank.items():
            k = maps[i - 1][v]
            p_arr[k] = p
            acc = np.zeros(kb, dtype=np.uint8)
            for j in range(1, cfg.n + 1):
                acc ^= state.received[j].zvecs[maps[j - 1][v], i - 1, :]
            sk_arr[k] = acc
        bnyms.append(msg.bnyms.copy())
        ps.append(p_arr)
        sks.append(sk_arr)
    return IntersectionResult(size=len(ordered), bnyms=bnyms, ps=ps, sks=sks)
