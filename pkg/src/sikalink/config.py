"""Shared JSON session configuration: parsing and validation.

The same file is distributed to every party; it pins the session id,
security sizes, padded input size m, the party/endpoint list (exactly one
collector at index 0, providers at 1..n) and the output mode. An optional
`checksum` field (SHA-256 over the canonical JSON without that field) guards
against accidental divergence between parties; full signing infrastructure is
an institutional concern outside this artifact.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

from .primitives import SECURITY_LEVELS

MODES = ("sika", "cardinality", "psi", "payload", "threshold-payload")

COLLECTOR_INDEX = 0


@dataclass(frozen=True)
class PartySpec:
    index: int
    role: str
    listen: str | None = None
    dial: str | None = None

    @property
    def reach(self) -> str | None:
        """Address peers should dial; defaults to the bind address."""
        return self.dial or self.listen


@dataclass
class Config:
    session_id: bytes
    kappa: int
    lam: int
    n: int
    m: int
    mode: str
    parties: list[PartySpec]
    thresholds: dict[int, int] = field(default_factory=dict)
    pad_bucket: int = 64
    timeout_s: float = 600.0
    description: str = ""

    def party(self, index: int) -> PartySpec | None:
        for p in self.parties:
            if p.index == index:
                return p
        return None

    def provider_indices(self) -> list[int]:
        return sorted(p.index for p in self.parties if p.role == "provider")


def canonical_checksum(doc: dict) -> str:
    """SHA-256 over the sorted-key compact JSON, checksum field excluded."""
    trimmed = {k: v for k, v in doc.items() if k != "checksum"}
    blob = json.dumps(trimmed, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()


def parse_config(doc: dict) -> tuple[Config | None, list[str]]:
    """Build a Config from a parsed JSON document; returns (config, violations).

    The config is None when violations prevent building a usable object at
    all; otherwise it is returned together with any remaining violations.
    """
    errs: list[str] = []

    def need(key, types, default=None):
        if key not in doc:
            if default is not None:
                return default
            errs.append(f"missing field {key!r}")
            return None
        val = doc[key]
        if not isinstance(val, types):
            errs.append(f"field {key!r} has wrong type {type(val).__name__}")
            return None
        return val

    sid_hex = need("session_id", str)
    session_id = b""
    if sid_hex is not None:
        try:
            session_id = bytes.fromhex(sid_hex)
        except ValueError:
            errs.append("session_id is not hex")
        if len(session_id) != 16:
            errs.append(f"session_id must be 32 hex chars, got {len(sid_hex)}")

    kappa = need("kappa", int)
    lam = need("lambda", int)
    if kappa is not None and lam is not None:
        if kappa not in SECURITY_LEVELS or SECURITY_LEVELS.get(kappa) != lam:
            errs.append(f"(kappa={kappa}, lambda={lam}) is not a supported pair "
                        f"{sorted(SECURITY_LEVELS.items())}")

    n = need("n", int)
    m = need("m", int)
    if n is not None and n < 2:
        errs.append(f"n must be >= 2, got {n}")
    if m is not None and m < 1:
        errs.append(f"m must be >= 1, got {m}")

    mode = need("mode", str)
    if mode is not None and mode not in MODES:
        errs.append(f"mode {mode!r} not in {MODES}")

    parties: list[PartySpec] = []
    raw_parties = need("parties", list)
    if raw_parties is not None:
        for k, entry in enumerate(raw_parties):
            if not isinstance(entry, dict):
                errs.append(f"parties[{k}] is not an object")
                continue
            idx = entry.get("index")
            role = entry.get("role")
            if not isinstance(idx, int) or not isinstance(role, str):
                errs.append(f"parties[{k}] needs integer 'index' and string 'role'")
                continue
            if role not in ("provider", "collector"):
                errs.append(f"parties[{k}] role {role!r} invalid")
                continue
            parties.append(PartySpec(index=idx, role=role,
                                     listen=entry.get("listen"), dial=entry.get("dial")))
        collectors = [p for p in parties if p.role == "collector"]
        if len(collectors) != 1:
            errs.append(f"exactly one collector required, found {len(collectors)}")
        elif collectors[0].index != COLLECTOR_INDEX:
            errs.append(f"collector must use index {COLLECTOR_INDEX}, "
                        f"got {collectors[0].index}")
        prov = sorted(p.index for p in parties if p.role == "provider")
        if n is not None and prov != list(range(1, n + 1)):
            errs.append(f"provider indices must be exactly 1..{n}, got {prov}")

    thresholds: dict[int, int] = {}
    if "thresholds" in doc:
        if mode is not None and mode != "threshold-payload":
            errs.append("thresholds given but mode is not threshold-payload")
        if not isinstance(doc["thresholds"], dict):
            errs.append("thresholds must be an object of index -> t")
        else:
            for key, val in doc["thresholds"].items():
                try:
                    idx = int(key)
                except ValueError:
                    errs.append(f"threshold key {key!r} is not an index")
                    continue
                if not isinstance(val, int) or val < 1 or (m is not None and val > m):
                    errs.append(f"threshold for provider {idx} must be in 1..m, got {val}")
                thresholds[idx] = val if isinstance(val, int) else 1
    if mode == "threshold-payload" and n is not None:
        missing = [i for i in range(1, n + 1) if i not in thresholds]
        if missing:
            errs.append(f"mode threshold-payload needs a threshold for provider(s) {missing}")

    pad_bucket = need("pad_bucket", int, default=64)
    if pad_bucket is not None and pad_bucket < 1:
        errs.append(f"pad_bucket must be >= 1, got {pad_bucket}")

    timeout_s = need("timeout_s", (int, float), default=600.0)
    if timeout_s is not None and timeout_s <= 0:
        errs.append(f"timeout_s must be > 0, got {timeout_s}")

    if "checksum" in doc:
        if doc["checksum"] != canonical_checksum(doc):
            errs.append("checksum mismatch (config differs from the signed-off version)")

    description = doc.get("description", "")
    if not isinstance(description, str):
        errs.append("description must be a string")
        description = ""

    if any(v is None for v in (kappa, lam, n, m, mode)) or len(session_id) != 16:
        return None, errs
    cfg = Config(session_id=session_id, kappa=kappa, lam=lam, n=n, m=m,
                 mode=mode, parties=parties, thresholds=thresholds,
                 pad_bucket=pad_bucket or 64, timeout_s=float(timeout_s or 600.0),
                 description=description)
    return cfg, errs


def load_config(path: str) -> tuple[Config | None, list[str]]:
    """Read and validate a config file; I/O or JSON failure raises OSError/ValueError."""
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    if not isinstance(doc, dict):
        raise ValueError("config root must be a JSON object")
    return parse_config(doc)
