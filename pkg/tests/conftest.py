"""Shared helpers: a transport-free protocol driver and plaintext oracles."""

from __future__ import annotations

import pytest

from sikalink import outputs, sika
from sikalink.outputs import Record, ThresholdPolicy
from sikalink.primitives import SecurityParams, SeededRng

SEC128 = SecurityParams(128, 40)
SEC256 = SecurityParams(256, 80)


def run_core(inputs: dict[int, list[bytes]], m: int, sec: SecurityParams = SEC128,
             seed: bytes = b"test-seed"):
    """Drive the core protocol through direct calls (no transport).

    inputs maps provider index (1..n) to raw id lists. Returns
    (provider_outputs, IntersectionResult, collector_state).
    """
    n = len(inputs)
    sid = bytes(16)
    states = {}
    for i in range(1, n + 1):
        cfg = sika.SessionConfig(session_id=sid, n=n, m=m, sec=sec, my_index=i)
        states[i] = sika.provider_init(inputs[i], cfg, rng=SeededRng.for_party(seed, i))
    tables = {(i, j): sika.build_okvs_for(states[i], j)
              for i in states for j in states if i != j}
    ccfg = sika.SessionConfig(session_id=sid, n=n, m=m, sec=sec, my_index=0)
    cstate = sika.CollectorState(ccfg)
    pouts = {}
    for j in range(1, n + 1):
        pout, bmsg = sika.provider_finalize(
            states[j], {i: tables[(i, j)] for i in range(1, n + 1) if i != j})
        pouts[j] = pout
        sika.collector_absorb(cstate, j, bmsg)
    nyms = sika.collector_unblind(cstate)
    result = sika.collector_intersect(cstate, nyms)
    return pouts, result, cstate


def run_payload(records: dict[int, list[Record]], m: int, mode: str,
                sec: SecurityParams = SEC128, seed: bytes = b"test-seed",
                thresholds: dict[int, int] | None = None, pad_bucket: int = 64):
    """Core protocol plus one payload mode; returns (pouts, result, joined)."""
    inputs = {i: [r.raw_id for r in recs] for i, recs in records.items()}
    pouts, result, _ = run_core(inputs, m, sec=sec, seed=seed)
    msgs = {}
    for i, recs in records.items():
        policy = None
        if mode == outputs.MODE_THRESHOLD:
            policy = ThresholdPolicy(t=thresholds[i], m=m)
        msgs[i] = outputs.encrypt_payload(pouts[i], recs, mode, policy=policy,
                                          rng=SeededRng.for_party(seed + b"pay", i),
                                          pad_bucket=pad_bucket)
    joined = outputs.collector_join(result, msgs, mode)
    return pouts, result, joined


def plaintext_intersection(inputs: dict[int, list[bytes]]) -> set[bytes]:
    """Functionality-level oracle: direct set intersection of the raw inputs."""
    sets = [set(v) for v in inputs.values()]
    out = sets[0]
    for s in sets[1:]:
        out &= s
    return out


def matched_groups(pouts, result) -> dict[int, dict[int, bytes]]:
    """For each rank p, the hashed id each provider's matched entry points at."""
    groups: dict[int, dict[int, bytes]] = {}
    for i, pout in pouts.items():
        by_bnym = {pout.bnyms[k].tobytes(): k for k in range(pout.bnyms.shape[0])}
        for bnym, p, _sk in result.entries(i):
            if p is not None:
                groups.setdefault(p, {})[i] = pout.ids[by_bnym[bnym]].tobytes()
    return groups


def assert_matches_oracle(inputs, pouts, result, sec: SecurityParams = SEC128):
    """Matched groups == plaintext intersection, and sk values agree."""
    from sikalink.primitives import hash_id

    oracle = {hash_id(r, sec.kappa) for r in plaintext_intersection(inputs)}
    groups = matched_groups(pouts, result)
    assert result.size == len(oracle), f"size {result.size} != oracle {len(oracle)}"
    seen_ids = set()
    for p, per_provider in groups.items():
        assert len(per_provider) == len(inputs), f"rank {p} missing providers"
        ids = set(per_provider.values())
        assert len(ids) == 1, f"rank {p} spans different ids"
        seen_ids |= ids
    assert seen_ids == oracle, "matched ids differ from plaintext intersection"
    for i, pout in pouts.items():
        by_bnym = {pout.bnyms[k].tobytes(): k for k in range(pout.bnyms.shape[0])}
        for bnym, p, sk in result.entries(i):
            if p is not None:
                k = by_bnym[bnym]
                assert sk == pout.sks[k].tobytes(), \
                    f"provider {i} rank {p}: collector sk != provider sk"


@pytest.fixture()
def rng():
    return SeededRng(b"fixture-rng")
