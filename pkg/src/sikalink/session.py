"""Message framing, transports, and session orchestration.

All traffic is length-prefixed frames carrying a session id and sender and
receiver indices (0 is the collector). Providers exchange stores pairwise
(mesh) and upload to the collector (star); the collector only ever sends
control frames (DONE, ABORT) back. Any party hitting a protocol failure
broadcasts ABORT to every peer it is connected to, which tears the whole
session down; there are no partial results.

Two interchangeable transports: an in-process hub (queues of serialized
frames, used by tests, `simulate` and `bench`) and TCP. Both count the exact
frame bytes per directed edge, so communication reports are identical across
transports for identical runs. Channel privacy/authenticity is out of scope;
deploy behind a private network or TLS tunnel.
"""

from __future__ import annotations

import logging
import queue
import socket
import struct
import threading
import time
from collections import defaultdict
from dataclasses import dataclass, field

from . import okvs, outputs, sika
from .outputs import PayloadMessage, Record, ThresholdPolicy
from .primitives import Rng
from .sika import BMessage, CollectorState, ProtocolError, SessionConfig

log = logging.getLogger("sikalink.session")

MSG_OKVS = 1
MSG_BMSG = 2
MSG_PAYLOAD = 3
MSG_ABORT = 4
MSG_DONE = 5

FRAME_MAGIC = b"SIKA"
FRAME_VERSION = 1
MAX_BODY = 1 << 32

_FRAME_HEAD = struct.Struct("<4sBB16sHHQ")  # magic, ver, type, session, sender, receiver, body_len

DEFAULT_TIMEOUT = 600.0

PROVIDER_PHASES = ("provider_init", "okvs_encode", "decode_finalize")
COLLECTOR_PHASES = ("unblind", "intersect", "join")


class SessionTimeout(Exception):
    """No progress within the configured deadline."""


class SessionAbort(Exception):
    """Session torn down, locally or by a peer's ABORT frame."""


@dataclass(frozen=True)
class Frame:
    msg_type: int
    session_id: bytes
    sender: int
    receiver: int
    body: bytes
    version: int = FRAME_VERSION


def pack_frame(f: Frame) -> bytes:
    if len(f.body) > MAX_BODY:
        raise ProtocolError(f"frame body {len(f.body)} exceeds {MAX_BODY}")
    head = _FRAME_HEAD.pack(FRAME_MAGIC, f.version, f.msg_type, f.session_id,
                            f.sender, f.receiver, len(f.body))
    return head + f.body


def _parse_head(head: bytes):
    magic, version, msg_type, session_id, sender, receiver, body_len = _FRAME_HEAD.unpack(head)
    if magic != FRAME_MAGIC:
        raise ProtocolError(f"bad frame magic {magic!r}")
    if version != FRAME_VERSION:
        raise ProtocolError(f"unsupported frame version {version}")
    if body_len > MAX_BODY:
        raise ProtocolError(f"frame body {body_len} exceeds {MAX_BODY}")
    return msg_type, session_id, sender, receiver, body_len


def unpack_frame(data: bytes, session_id: bytes | None = None) -> Frame:
    if len(data) < _FRAME_HEAD.size:
        raise ProtocolError("truncated frame")
    msg_type, sid, sender, receiver, body_len = _parse_head(data[:_FRAME_HEAD.size])
    if len(data) != _FRAME_HEAD.size + body_len:
        raise ProtocolError("frame length mismatch")
    if session_id is not None and sid != session_id:
        raise ProtocolError("frame for a different session")
    return Frame(msg_type=msg_type, session_id=sid, sender=sender,
                 receiver=receiver, body=data[_FRAME_HEAD.size:])


def send_frame(sock: socket.socket, frame: Frame) -> None:
    sock.sendall(pack_frame(frame))


def _recv_exact(sock: socket.socket, n: int) -> bytes:
    buf = bytearray()
    while len(buf) < n:
        chunk = sock.recv(n - len(buf))
        if not chunk:
            raise ConnectionError("peer closed the connection")
        buf.extend(chunk)
    return bytes(buf)


def recv_frame(sock: socket.socket, session_id: bytes | None = None) -> Frame:
    head = _recv_exact(sock, _FRAME_HEAD.size)
    msg_type, sid, sender, receiver, body_len = _parse_head(head)
    if session_id is not None and sid != session_id:
        raise ProtocolError("frame for a different session")
    body = _recv_exact(sock, body_len) if body_len else b""
    return Frame(msg_type=msg_type, session_id=sid, sender=sender,
                 receiver=receiver, body=body)


def edge_name(src: int, dst: int) -> str:
    def nm(x: int) -> str:
        return "C" if x == 0 else f"P{x}"
    return f"{nm(src)}->{nm(dst)}"


def counters_report(counters) -> list[dict]:
    """Byte counters as a JSON-ready, deterministically ordered edge list."""
    rows = [{"edge": edge_name(s, d), "bytes": int(n)} for (s, d), n in counters.items()]
    rows.sort(key=lambda r: r["edge"])
    return rows


class InProcHub:
    """Single-process fabric: one inbox of serialized frames per party."""

    def __init__(self, session_id: bytes, parties):
        self.session_id = session_id
        self.inboxes = {p: queue.Queue() for p in parties}
        self.counters: dict[tuple[int, int], int] = defaultdict(int)
        self.frame_log: list[tuple[int, int, int, int]] = []  # sender, receiver, type, bytes
        self._lock = threading.Lock()

    def transport(self, party: int) -> "InProcTransport":
        return InProcTransport(self, party)


class InProcTransport:
    def __init__(self, hub: InProcHub, party: int):
        self.hub = hub
        self.party = party
        self.session_id = hub.session_id

    @property
    def counters(self):
        return self.hub.counters

    def peers(self):
        return [p for p in self.hub.inboxes if p != self.party]

    def send(self, dest: int, msg_type: int, body: bytes) -> None:
        if dest not in self.hub.inboxes:
            raise ProtocolError(f"no route to party {dest}")
        data = pack_frame(Frame(msg_type=msg_type, session_id=self.session_id,
                                sender=self.party, receiver=dest, body=body))
        with self.hub._lock:
            self.hub.counters[(self.party, dest)] += len(data)
            self.hub.frame_log.append((self.party, dest, msg_type, len(data)))
        self.hub.inboxes[dest].put(data)

    def recv(self, timeout: float) -> Frame:
        try:
            data = self.hub.inboxes[self.party].get(timeout=timeout)
        except queue.Empty:
            raise SessionTimeout(f"party {self.party}: no frame within {timeout:.0f}s") from None
        return unpack_frame(data, self.session_id)

    def close(self) -> None:
        pass


class TcpTransport:
    """TCP fabric for one party: a listener plus dialed peer connections.

    The dialing side of each connection is expected to send first; the
    accepting side learns who is on a connection from the first frame it
    reads there, after which it can send on that socket too.
    """

    def __init__(self, party: int, session_id: bytes, timeout: float = DEFAULT_TIMEOUT):
        self.party = party
        self.session_id = session_id
        self.timeout = timeout
        self.inbox: queue.Queue = queue.Queue()
        self.counters: dict[tuple[int, int], int] = defaultdict(int)
        self._socks: dict[int, socket.socket] = {}
        self._send_locks: dict[int, threading.Lock] = {}
        self._cond = threading.Condition()
        self._listener: socket.socket | None = None
        self._threads: list[threading.Thread] = []
        self._closing = False

    def listen(self, host: str, port: int) -> int:
        srv = socket.create_server((host, port))
        srv.settimeout(0.25)
        self._listener = srv
        t = threading.Thread(target=self._accept_loop, args=(srv,), daemon=True)
        t.start()
        self._threads.append(t)
        return srv.getsockname()[1]

    def _accept_loop(self, srv: socket.socket) -> None:
        while not self._closing:
            try:
                conn, _ = srv.accept()
            except socket.timeout:
                continue
            except OSError:
                return
            t = threading.Thread(target=self._read_loop, args=(conn, None), daemon=True)
            t.start()
            self._threads.append(t)

    def dial(self, peer: int, host: str, port: int, deadline: float) -> None:
        last_err: Exception | None = None
        while time.monotonic() < deadline:
            try:
                conn = socket.create_connection((host, port), timeout=2.0)
                conn.settimeout(None)
                self._register(peer, conn)
                t = threading.Thread(target=self._read_loop, args=(conn, peer), daemon=True)
                t.start()
                self._threads.append(t)
                return
            except OSError as exc:
                last_err = exc
                time.sleep(0.2)
        raise SessionTimeout(f"party {self.party}: cannot reach party {peer} "
                             f"at {host}:{port} ({last_err})")

    def _register(self, peer: int, conn: socket.socket) -> None:
        with self._cond:
            if peer in self._socks:
                conn.close()
                return
            self._socks[peer] = conn
            self._send_locks[peer] = threading.Lock()
            self._cond.notify_all()

    def _read_loop(self, conn: socket.socket, peer: int | None) -> None:
        try:
            while not self._closing:
                frame = recv_frame(conn, self.session_id)
                if peer is None:
                    peer = frame.sender
                    self._register(peer, conn)
                self.counters[(frame.sender, self.party)] += _FRAME_HEAD.size + len(frame.body)
                self.inbox.put(frame)
        except ConnectionError:
            pass  # peer done; pending recv deadlines handle premature closes
        except (ProtocolError, OSError) as exc:
            if not self._closing:
                self.inbox.put(exc)

    def _sock_for(self, dest: int, deadline: float) -> socket.socket:
        with self._cond:
            while dest not in self._socks:
                remaining = deadline - time.monotonic()
                if remaining <= 0 or not self._cond.wait(timeout=min(remaining, 0.5)):
                    if time.monotonic() >= deadline:
                        raise SessionTimeout(f"party {self.party}: no connection to {dest}")
            return self._socks[dest]

    def send(self, dest: int, msg_type: int, body: bytes) -> None:
        deadline = time.monotonic() + self.timeout
        sock = self._sock_for(dest, deadline)
        data = pack_frame(Frame(msg_type=msg_type, session_id=self.session_id,
                                sender=self.party, receiver=dest, body=body))
        with self._send_locks[dest]:
            sock.sendall(data)
        self.counters[(self.party, dest)] += len(data)

    def peers(self):
        with self._cond:
            return list(self._socks)

    def recv(self, timeout: float) -> Frame:
        try:
            item = self.inbox.get(timeout=timeout)
        except queue.Empty:
            raise SessionTimeout(f"party {self.party}: no frame within {timeout:.0f}s") from None
        if isinstance(item, Exception):
            raise item
        return item

    def close(self) -> None:
        self._closing = True
        if self._listener is not None:
            self._listener.close()
        with self._cond:
            for sock in self._socks.values():
                try:
                    sock.close()
                except OSError:
                    pass


def _broadcast_abort(transport, reason: str) -> None:
    for peer in transport.peers():
        try:
            transport.send(peer, MSG_ABORT, reason.encode())
        except Exception:
            pass


def _check_abort(frame: Frame) -> None:
    if frame.msg_type == MSG_ABORT:
        raise SessionAbort(f"peer {frame.sender} aborted: {frame.body.decode(errors='replace')}")


def run_provider_session(cfg: SessionConfig, transport, records,
                         mode: str = "sika",
                         policy: ThresholdPolicy | None = None,
                         pad_bucket: int = outputs.DEFAULT_PAD_BUCKET,
                         rng: Rng | None = None,
                         timeout: float = DEFAULT_TIMEOUT):
    """Provider role: exchange stores, upload, wait for the collector's DONE.

    Returns (ProviderOutput, phase timing dict). Raises SessionAbort on any
    local or peer failure after broadcasting ABORT.
    """
    records = [r if isinstance(r, Record) else Record(raw_id=r, atts=()) for r in records]
    i = cfg.my_index
    others = [j for j in range(1, cfg.n + 1) if j != i]
    timings: dict[str, float] = {}
    try:
        t0 = time.perf_counter()
        state = sika.provider_init([r.raw_id for r in records], cfg, rng=rng)
        timings["provider_init"] = time.perf_counter() - t0

        t0 = time.perf_counter()
        tables = {j: sika.build_okvs_for(state, j) for j in others}
        timings["okvs_encode"] = time.perf_counter() - t0
        for j in others:
            transport.send(j, MSG_OKVS, tables[j].to_bytes())

        received: dict[int, okvs.OkvsTable] = {}
        deadline = time.monotonic() + timeout
        while len(received) < len(others):
            frame = transport.recv(max(0.0, deadline - time.monotonic()))
            _check_abort(frame)
            if frame.msg_type != MSG_OKVS:
                raise ProtocolError(f"unexpected frame type {frame.msg_type} from {frame.sender}")
            if frame.sender not in others:
                raise ProtocolError(f"store from unexpected party {frame.sender}")
            received.setdefault(frame.sender, okvs.OkvsTable.from_bytes(frame.body))

        t0 = time.perf_counter()
        pout, bmsg = sika.provider_finalize(state, received)
        timings["decode_finalize"] = time.perf_counter() - t0
        transport.send(sika.COLLECTOR, MSG_BMSG, bmsg.to_bytes())

        if mode in outputs.MODES:
            pmsg = outputs.encrypt_payload(pout, records, mode, policy=policy,
                                           rng=rng, pad_bucket=pad_bucket)
            transport.send(sika.COLLECTOR, MSG_PAYLOAD, pmsg.to_bytes())

        while True:
            frame = transport.recv(max(0.0, deadline - time.monotonic()))
            _check_abort(frame)
            if frame.msg_type == MSG_DONE and frame.sender == sika.COLLECTOR:
                break
            if frame.msg_type == MSG_OKVS:
                continue  # late duplicate, harmless
            raise ProtocolError(f"unexpected frame type {frame.msg_type} while waiting for DONE")
        return pout, timings
    except SessionAbort:
        raise
    except (ProtocolError, okvs.EncodeFailure, sika.InputError) as exc:
        _broadcast_abort(transport, str(exc))
        raise SessionAbort(f"provider {i}: {exc}") from exc


def run_collector_session(cfg: SessionConfig, transport, mode: str = "sika",
                          timeout: float = DEFAULT_TIMEOUT):
    """Collector role: gather uploads, unblind, intersect, optionally join.

    Returns (IntersectionResult, JoinedOutput | None, phase timing dict) and
    broadcasts DONE on success.
    """
    cstate = CollectorState(cfg)
    want_payload = mode in outputs.MODES
    payloads: dict[int, PayloadMessage] = {}
    timings: dict[str, float] = {}
    try:
        deadline = time.monotonic() + timeout
        while not (cstate.ready and (not want_payload or len(payloads) == cfg.n)):
            frame = transport.recv(max(0.0, deadline - time.monotonic()))
            _check_abort(frame)
            if frame.msg_type == MSG_BMSG:
                sika.collector_absorb(cstate, frame.sender, BMessage.from_bytes(frame.body))
            elif frame.msg_type == MSG_PAYLOAD:
                if not want_payload:
                    raise ProtocolError(f"unexpected payload frame from {frame.sender}")
                if frame.sender in payloads:
                    log.info("duplicate payload from provider %d ignored", frame.sender)
                    continue
                payloads[frame.sender] = PayloadMessage.from_bytes(frame.body, cfg.sec.kappa)
            else:
                raise ProtocolError(f"unexpected frame type {frame.msg_type} from {frame.sender}")

        t0 = time.perf_counter()
        nyms = sika.collector_unblind(cstate)
        timings["unblind"] = time.perf_counter() - t0
        t0 = time.perf_counter()
        result = sika.collector_intersect(cstate, nyms)
        timings["intersect"] = time.perf_counter() - t0

        joined = None
        t0 = time.perf_counter()
        if want_payload:
            joined = outputs.collector_join(result, payloads, mode)
        timings["join"] = time.perf_counter() - t0

        for j in range(1, cfg.n + 1):
            transport.send(j, MSG_DONE, b"")
        return result, joined, timings
    except SessionAbort:
        raise
    except ProtocolError as exc:
        _broadcast_abort(transport, str(exc))
        raise SessionAbort(f"collector: {exc}") from exc


def run_session(role: str, cfg: SessionConfig, transport, **kwargs):
    """Dispatch to the provider or collector role loop."""
    if role == "provider":
        return run_provider_session(cfg, transport, **kwargs)
    if role == "collector":
        return run_collector_session(cfg, transport, **kwargs)
    raise ValueError(f"unknown role {role!r}")


@dataclass
class InProcRun:
    """Everything a single-process session produced."""

    result: "sika.IntersectionResult"
    joined: "outputs.JoinedOutput | None"
    provider_outputs: dict[int, "sika.ProviderOutput"]
    phase_timings: dict[str, float]  # max over providers for provider phases
    hub: InProcHub
    wall_s: float


def run_inproc(session_id: bytes, n: int, m: int, sec, provider_records: dict,
               mode: str = "sika", thresholds: dict[int, int] | None = None,
               pad_bucket: int = outputs.DEFAULT_PAD_BUCKET,
               seed: bytes | None = None,
               timeout: float = DEFAULT_TIMEOUT) -> InProcRun:
    """Run all n+1 roles on threads over the in-process hub.

    With a seed, every party draws from an independent deterministic stream,
    so outputs and byte counters are reproducible regardless of scheduling.
    """
    from .primitives import SeededRng

    hub = InProcHub(session_id, list(range(n + 1)))
    prov_results: dict[int, tuple] = {}
    coll_result: list = []
    failures: list[BaseException] = []

    def provider(i: int):
        cfg = SessionConfig(session_id=session_id, n=n, m=m, sec=sec, my_index=i)
        rng = SeededRng.for_party(seed, i) if seed is not None else None
        policy = None
        if thresholds is not None and mode == outputs.MODE_THRESHOLD:
            policy = ThresholdPolicy(t=thresholds[i], m=m)
        try:
            prov_results[i] = run_provider_session(
                cfg, hub.transport(i), provider_records[i], mode=mode,
                policy=policy, pad_bucket=pad_bucket, rng=rng, timeout=timeout)
        except BaseException as exc:  # noqa: BLE001 - reported to the caller
            failures.append(exc)

    def collector():
        cfg = SessionConfig(session_id=session_id, n=n, m=m, sec=sec,
                            my_index=sika.COLLECTOR)
        try:
            coll_result.append(run_collector_session(
                cfg, hub.transport(sika.COLLECTOR), mode=mode, timeout=timeout))
        except BaseException as exc:  # noqa: BLE001
            failures.append(exc)

    threads = [threading.Thread(target=provider, args=(i,), daemon=True)
               for i in range(1, n + 1)]
    threads.append(threading.Thread(target=collector, daemon=True))
    t0 = time.perf_counter()
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    wall = time.perf_counter() - t0
    if failures:
        raise failures[0]

    result, joined, coll_timings = coll_result[0]
    phase: dict[str, float] = {p: 0.0 for p in PROVIDER_PHASES + COLLECTOR_PHASES}
    for _, timings in prov_results.values():
        for name in PROVIDER_PHASES:
            phase[name] = max(phase[name], timings.get(name, 0.0))
    for name in COLLECTOR_PHASES:
        phase[name] = coll_timings.get(name, 0.0)
    return InProcRun(result=result, joined=joined,
                     provider_outputs={i: r[0] for i, r in prov_results.items()},
                     phase_timings=phase, hub=hub, wall_s=wall)

