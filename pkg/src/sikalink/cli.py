"""sika-link: link CSV records across data providers at a collector.

Commands:
    validate   check a shared JSON config
    provider   run one data-provider role over TCP
    collector  run the collector role over TCP
    simulate   run all roles in one process (optionally seeded, reproducible)
    bench      desk-scale runtime/communication benchmark

Exit codes: 0 success, 1 protocol or session failure, 2 usage/config error.
Set SIKA_LOG to error/info/debug.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time

from . import bench as bench_mod
from . import csvio, outputs, session, sika
from .config import Config, load_config
from .outputs import ThresholdPolicy
from .primitives import SecurityParams
from .session import SessionAbort, SessionTimeout, TcpTransport
from .sika import InputError, ProtocolError, SessionConfig

log = logging.getLogger("sikalink.cli")

# config mode -> payload mode handed to the session layer
_MODE_MAP = {
    "sika": "sika",
    "cardinality": "cardinality",
    "psi": outputs.MODE_PSI_ID,
    "payload": outputs.MODE_PAYLOAD,
    "threshold-payload": outputs.MODE_THRESHOLD,
}


def _load_config_or_fail(path: str) -> Config:
    try:
        cfg, errs = load_config(path)
    except (OSError, ValueError) as exc:
        raise InputError(f"cannot load config {path}: {exc}") from exc
    if errs or cfg is None:
        raise InputError(f"invalid config {path}:\n  " + "\n  ".join(errs))
    return cfg


def _addr(spec: str | None, what: str) -> tuple[str, int]:
    if not spec or ":" not in spec:
        raise InputError(f"{what}: need host:port, got {spec!r}")
    host, _, port = spec.rpartition(":")
    try:
        return host, int(port)
    except ValueError:
        raise InputError(f"{what}: bad port in {spec!r}") from None


def _session_config(cfg: Config, my_index: int) -> SessionConfig:
    return SessionConfig(session_id=cfg.session_id, n=cfg.n, m=cfg.m,
                         sec=SecurityParams(cfg.kappa, cfg.lam), my_index=my_index)


def _write_collector_output(cfg: Config, out_path: str | None, result, joined) -> None:
    mode = cfg.mode
    if mode == "cardinality":
        print(f"cardinality: {outputs.cardinality(result)}")
        if out_path:
            with open(out_path, "w", encoding="utf-8", newline="") as fh:
                fh.write("cardinality\n%d\n" % outputs.cardinality(result))
        return
    if not out_path:
        raise InputError(f"mode {mode} requires --output")
    if mode == "sika":
        csvio.write_sika_csv(out_path, result, cfg.n)
    elif mode == "psi":
        csvio.write_psi_csv(out_path, joined)
    else:
        csvio.write_joined_csv(out_path, joined, cfg.n)
    print(f"wrote {out_path} ({result.size} records in the intersection)")


def cmd_validate(args) -> int:
    try:
        cfg, errs = load_config(args.config)
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    if errs:
        for e in errs:
            print(f"violation: {e}")
        return 2
    print("OK")
    return 0


def cmd_provider(args) -> int:
    cfg = _load_config_or_fail(args.config)
    i = args.index
    party = cfg.party(i)
    if party is None or party.role != "provider":
        raise InputError(f"index {i} is not a provider in the config")
    _, records = csvio.read_input_csv(args.input)
    if len(records) > cfg.m:
        raise InputError(f"{len(records)} input records exceed configured m={cfg.m}")

    scfg = _session_config(cfg, i)
    mode = _MODE_MAP[cfg.mode]
    policy = None
    if cfg.mode == "threshold-payload":
        policy = ThresholdPolicy(t=cfg.thresholds[i], m=cfg.m)

    transport = TcpTransport(i, cfg.session_id, timeout=cfg.timeout_s)
    try:
        host, port = _addr(party.listen, f"provider {i} listen")
        transport.listen(host, port)
        deadline = time.monotonic() + cfg.timeout_s
        for j in [p for p in cfg.provider_indices() if p < i] + [0]:
            peer = cfg.party(j)
            host, port = _addr(peer.reach if peer else None, f"party {j} address")
            transport.dial(j, host, port, deadline)
        pout, _ = session.run_provider_session(
            scfg, transport, records, mode=mode, policy=policy,
            pad_bucket=cfg.pad_bucket, timeout=cfg.timeout_s)
    finally:
        transport.close()

    sidecar = args.input + ".nyms.csv"
    csvio.write_nyms_csv(sidecar, records, pout)
    print(f"session complete; wrote {sidecar}")
    return 0


def cmd_collector(args) -> int:
    cfg = _load_config_or_fail(args.config)
    party = cfg.party(0)
    if party is None:
        raise InputError("config has no collector entry")
    scfg = _session_config(cfg, sika.COLLECTOR)
    transport = TcpTransport(sika.COLLECTOR, cfg.session_id, timeout=cfg.timeout_s)
    try:
        host, port = _addr(party.listen, "collector listen")
        transport.listen(host, port)
        result, joined, _ = session.run_collector_session(
            scfg, transport, mode=_MODE_MAP[cfg.mode], timeout=cfg.timeout_s)
    finally:
        transport.close()

    _write_collector_output(cfg, args.output, result, joined)
    report = session.counters_report(transport.counters)
    report_path = (args.output or "collector") + ".report.json"
    csvio.write_report_json(report_path, report)
    print(f"wrote {report_path}")
    return 0


def cmd_simulate(args) -> int:
    cfg = _load_config_or_fail(args.config)
    if len(args.inputs) != cfg.n:
        raise InputError(f"need {cfg.n} input files (one per provider), got {len(args.inputs)}")
    provider_records = {}
    for i, path in enumerate(args.inputs, start=1):
        _, records = csvio.read_input_csv(path)
        if len(records) > cfg.m:
            raise InputError(f"{path}: {len(records)} records exceed configured m={cfg.m}")
        provider_records[i] = records
    seed = bytes.fromhex(args.seed) if args.seed else None

    run = session.run_inproc(
        cfg.session_id, cfg.n, cfg.m, SecurityParams(cfg.kappa, cfg.lam),
        provider_records, mode=_MODE_MAP[cfg.mode],
        thresholds=cfg.thresholds or None, pad_bucket=cfg.pad_bucket,
        seed=seed, timeout=cfg.timeout_s)

    _write_collector_output(cfg, args.output, run.result, run.joined)
    report_path = (args.output or "simulate") + ".report.json"
    csvio.write_report_json(report_path, session.counters_report(run.hub.counters))
    print(f"wrote {report_path}")
    for name in session.PROVIDER_PHASES + session.COLLECTOR_PHASES:
        print(f"phase {name:<16} {run.phase_timings[name]:9.4f} s")
    print(f"total {'':<16} {run.wall_s:9.4f} s")
    return 0


def _int_list(text: str) -> list[int]:
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise InputError(f"expected a comma-separated integer list, got {text!r}") from None


def cmd_bench(args) -> int:
    m_exps = _int_list(args.m)
    ns = _int_list(args.n)
    if not m_exps or not ns:
        raise InputError("need at least one m exponent and one n")
    if args.kappa not in (128, 256):
        raise InputError(f"kappa must be 128 or 256, got {args.kappa}")
    if max(m_exps) > bench_mod.MAX_SAFE_EXP and not args.unsafe:
        raise InputError(f"m exponent {max(m_exps)} beyond 2^{bench_mod.MAX_SAFE_EXP}; "
                         f"pass --unsafe to override")
    if any(n < 2 for n in ns):
        raise InputError("n must be >= 2")
    if args.mode not in _MODE_MAP:
        raise InputError(f"mode must be one of {sorted(_MODE_MAP)}")

    cells = []
    for exp in m_exps:
        for n in ns:
            print(f"running m=2^{exp} n={n} kappa={args.kappa} "
                  f"({args.repeats} repeats)...", flush=True)
            cells.append(bench_mod.run_cell(1 << exp, n, args.kappa,
                                            _MODE_MAP[args.mode], args.repeats))
    print(bench_mod.format_cells(cells))
    doc = {"cells": cells}
    if args.kernel_compare:
        rows = bench_mod.compare_kernels(m_exps, args.kappa)
        print(bench_mod.format_kernel_rows(rows))
        doc["kernel_compare"] = rows
    with open(args.json, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(f"wrote {args.json}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="sika-link", description=__doc__,
                                formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = p.add_subparsers(dest="cmd", required=True)

    v = sub.add_parser("validate", help="check a shared JSON config")
    v.add_argument("config")
    v.set_defaults(fn=cmd_validate)

    pr = sub.add_parser("provider", help="run a data-provider role over TCP")
    pr.add_argument("config")
    pr.add_argument("input", help="CSV: identifier column then attribute columns")
    pr.add_argument("--index", type=int, required=True, help="provider index from the config")
    pr.set_defaults(fn=cmd_provider)

    co = sub.add_parser("collector", help="run the collector role over TCP")
    co.add_argument("config")
    co.add_argument("--output", help="output CSV path")
    co.set_defaults(fn=cmd_collector)

    si = sub.add_parser("simulate", help="run all roles in one process")
    si.add_argument("config")
    si.add_argument("--inputs", nargs="+", required=True,
                    help="one CSV per provider, in index order")
    si.add_argument("--output", help="output CSV path")
    si.add_argument("--seed", help="hex seed for a bit-reproducible run")
    si.set_defaults(fn=cmd_simulate)

    be = sub.add_parser("bench", help="runtime/communication benchmark")
    be.add_argument("--m", required=True, help="comma-separated exponents, e.g. 14,16")
    be.add_argument("--n", default="3", help="comma-separated provider counts")
    be.add_argument("--kappa", type=int, default=128)
    be.add_argument("--mode", default="sika")
    be.add_argument("--repeats", type=int, default=3)
    be.add_argument("--json", default="sika-bench.json", help="JSON output path")
    be.add_argument("--unsafe", action="store_true",
                    help="allow m beyond the desk-scale cap")
    be.add_argument("--kernel-compare", action="store_true",
                    help="also time the numba vs numpy store kernels")
    be.set_defaults(fn=cmd_bench)
    return p


def main(argv=None) -> int:
    level = os.environ.get("SIKA_LOG", "error").upper()
    logging.basicConfig(level=getattr(logging, level, logging.ERROR),
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (SessionAbort, SessionTimeout, ProtocolError) as exc:
        print(f"session failed: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
