"""Three-role execution flows over a byte transport with an optional adversary.

Baseline: the user seals for the proxy, which decrypts, verifies, re-encrypts
and MACs for the accelerator. Direct: the user seals multi-chain envelopes
with the user-accelerator key and the proxy forwards bytes it cannot read.

Every item of a batch travels in its own DATA frame whose batch_id is the
sender's message sequence number; the batch closes with a sealed ACK frame
carrying the item count. Receivers require strictly increasing batch_ids,
hold frames that arrive ahead of a gap, and time out if the gap never fills.
"""

from __future__ import annotations

import hashlib
import queue
import socket
import struct
import threading
from collections import deque
from dataclasses import dataclass, field
from typing import Protocol, Sequence, Union

from . import chain, gcm
from .chain import ChainPolicy, ChainedEnvelope
from .frame import HEADER, RECORD_HEAD, TAG_LEN, Frame, FrameError, MsgType, decode_frame, encode_frame, read_frame
from .handshake import ModeError, Role, RolePair, SessionKey, ThreePartySetup, message_nonce
from .pipeline import StageTiming

ROLE_NAMES = {Role.USER: "user", Role.PROXY: "proxy", Role.ACCELERATOR: "accel"}
CRYPTO_STAGES = ("enc", "dec", "auth", "mac")


class TransportError(Exception):
    """Failure of the byte transport itself, as opposed to a security rejection."""


class ReplayDetected(Exception):
    pass


class SessionMismatch(Exception):
    pass


class UnexpectedFrame(Exception):
    pass


# --------------------------------------------------------------------------
# costs and transcripts


@dataclass(frozen=True)
class CostModel:
    """Logical stage durations: microseconds per byte, scaled from a reference batch."""

    us_per_byte: dict[str, float]
    lane_budget: int = 16
    gpu_preprocess: bool = False
    compression_ratio: float = 5.0
    preprocess_us: float = 0.0

    @classmethod
    def from_timing(cls, timing: StageTiming, batch_bytes: int, **kw) -> "CostModel":
        if batch_bytes <= 0:
            raise ValueError("batch_bytes must be positive")
        per = {
            "user.enc": timing.cpu_enc,
            "proxy.dec": timing.cpu_dec,
            "proxy.auth": timing.cpu_auth,
            "proxy.enc": timing.cpu_enc,
            "proxy.mac": timing.cpu_mac,
            "wire": timing.transfer,
            "accel.dec": timing.gpu_dec,
            "accel.auth": timing.gpu_auth,
        }
        return cls({k: v / batch_bytes for k, v in per.items()}, **kw)

    def duration(self, stage: str, nbytes: int, n_chains: int = 1) -> float:
        if stage == "accel.preprocess":
            return self.preprocess_us if self.gpu_preprocess else 0.0
        d = self.us_per_byte.get(stage, 0.0) * nbytes
        if stage == "wire" and self.gpu_preprocess:
            d /= self.compression_ratio
        if stage == "accel.auth":
            d /= min(max(n_chains, 1), self.lane_budget)
        return d


DEFAULT_COSTS = CostModel({k: 1e-3 for k in ("user.enc", "proxy.dec", "proxy.auth", "proxy.enc",
                                              "proxy.mac", "wire", "accel.dec", "accel.auth")})


@dataclass(frozen=True)
class StageEvent:
    role: str
    stage: str
    nbytes: int
    duration_us: float


@dataclass(frozen=True)
class Rejection:
    role: str
    batch_id: int | None
    error: str
    detail: str


@dataclass
class FlowTranscript:
    mode: str
    events: list[StageEvent] = field(default_factory=list)
    exposure: dict[str, list[int]] = field(default_factory=dict)
    rejections: list[Rejection] = field(default_factory=list)
    aborts: list[tuple[str, str]] = field(default_factory=list)
    delivered: list[bytes] = field(default_factory=list)
    adversary_log: list[str] = field(default_factory=list)
    completed: bool = False

    @property
    def stage_names(self) -> list[str]:
        return [e.stage for e in self.events]

    @property
    def outcome(self) -> str:
        if self.completed and not self.rejections and not self.aborts:
            return "ok"
        if self.rejections:
            return "rejected"
        if any("timeout" in why for _, why in self.aborts):
            return "timeout"
        return "aborted"

    def exposed_roles(self) -> set[str]:
        return {r for r, items in self.exposure.items() if items}

    def crypto_stages(self, role: str) -> list[str]:
        return [e.stage for e in self.events if e.role == role and e.stage.split(".")[-1] in CRYPTO_STAGES]

    def accel_result(self) -> bytes:
        """Stand-in for the accelerator's computation over the released plaintext."""
        h = hashlib.sha256()
        for item in self.delivered:
            h.update(struct.pack(">Q", len(item)))
            h.update(item)
        return h.digest()

    def dump(self) -> str:
        lines = [f"mode: {self.mode}"]
        for e in self.events:
            lines.append(f"  {e.role:<6} {e.stage:<18} {e.nbytes:>10} B {e.duration_us:>12.3f} us")
        for who in ("user", "proxy", "accel"):
            held = self.exposure.get(who, [])
            lines.append(f"plaintext at {who}: {'%d items' % len(held) if held else 'none'}")
        for log in self.adversary_log:
            lines.append(f"adversary: {log}")
        for r in self.rejections:
            lines.append(f"REJECT {r.role} batch={r.batch_id} {r.error}: {r.detail}")
        for who, why in self.aborts:
            lines.append(f"ABORT {who}: {why}")
        lines.append(f"outcome: {self.outcome}")
        return "\n".join(lines)


class _StageMeter:
    """Aggregates per-stage bytes and time for one actor's pass over a batch."""

    def __init__(self, role: str, costs: CostModel) -> None:
        self.role, self.costs = role, costs
        self.order: list[str] = []
        self.totals: dict[str, list[float]] = {}

    def add(self, stage: str, nbytes: int, n_chains: int = 1) -> None:
        if stage not in self.totals:
            self.order.append(stage)
            self.totals[stage] = [0, 0.0]
        t = self.totals[stage]
        t[0] += nbytes
        t[1] += self.costs.duration(stage, nbytes, n_chains)

    def flush(self, transcript: FlowTranscript) -> None:
        for s in self.order:
            nbytes, dur = self.totals[s]
            transcript.events.append(StageEvent(self.role, s, int(nbytes), dur))
        self.order, self.totals = [], {}


# --------------------------------------------------------------------------
# transports


class Transport(Protocol):
    def send(self, src: Role, dst: Role, data: bytes) -> None: ...

    def recv(self, dst: Role, timeout: float) -> bytes | None: ...

    def close(self) -> None: ...


class QueueTransport:
    """In-process ordered queues; with sequential actors an empty queue means timeout."""

    def __init__(self) -> None:
        self.queues: dict[Role, deque[bytes]] = {r: deque() for r in Role}

    def send(self, src: Role, dst: Role, data: bytes) -> None:
        self.queues[dst].append(bytes(data))

    def recv(self, dst: Role, timeout: float) -> bytes | None:
        q = self.queues[dst]
        return q.popleft() if q else None

    def close(self) -> None:
        pass


class TcpTransport:
    """One listening socket per role on localhost; senders connect lazily."""

    def __init__(self, addresses: dict[Role, tuple[str, int]] | None = None) -> None:
        addresses = addresses or {r: ("127.0.0.1", 0) for r in Role}
        self.inbox: dict[Role, queue.Queue[bytes]] = {r: queue.Queue() for r in Role}
        self.servers: dict[Role, socket.socket] = {}
        self.addresses: dict[Role, tuple[str, int]] = {}
        self.conns: dict[tuple[Role, Role], socket.socket] = {}
        self.threads: list[threading.Thread] = []
        self._closed = threading.Event()
        self._lock = threading.Lock()
        try:
            for role, addr in addresses.items():
                srv = socket.create_server(addr)
                srv.settimeout(0.2)
                self.servers[role] = srv
                self.addresses[role] = srv.getsockname()[:2]
                self._spawn(self._accept_loop, role, srv)
        except OSError as exc:
            self.close()
            raise TransportError(f"cannot listen: {exc}") from exc

    def _spawn(self, fn, *args) -> None:
        t = threading.Thread(target=fn, args=args, daemon=True)
        t.start()
        self.threads.append(t)

    def _accept_loop(self, role: Role, srv: socket.socket) -> None:
        while not self._closed.is_set():
            try:
                conn, _ = srv.accept()
            except socket.timeout:
                continue
            except OSError:
                return
            self._spawn(self._read_loop, role, conn)

    def _read_loop(self, role: Role, conn: socket.socket) -> None:
        def read_exact(n: int) -> bytes:
            buf = bytearray()
            while len(buf) < n:
                chunk = conn.recv(n - len(buf))
                if not chunk:
                    break
                buf += chunk
            return bytes(buf)

        with conn:
            while not self._closed.is_set():
                try:
                    data = read_frame(read_exact)
                except FrameError:
                    # stream framing is lost; nothing after this point can be trusted
                    return
                except OSError:
                    return
                self.inbox[role].put(data)

    def send(self, src: Role, dst: Role, data: bytes) -> None:
        key = (src, dst)
        try:
            with self._lock:
                sock = self.conns.get(key)
                if sock is None:
                    sock = socket.create_connection(self.addresses[dst], timeout=5)
                    self.conns[key] = sock
            sock.sendall(data)
        except OSError as exc:
            raise TransportError(f"{ROLE_NAMES[src]}->{ROLE_NAMES[dst]}: {exc}") from exc

    def recv(self, dst: Role, timeout: float) -> bytes | None:
        try:
            return self.inbox[dst].get(timeout=timeout)
        except queue.Empty:
            return None

    def close(self) -> None:
        self._closed.set()
        for s in list(self.conns.values()) + list(self.servers.values()):
            try:
                s.close()
            except OSError:
                pass


# --------------------------------------------------------------------------
# adversary


@dataclass(frozen=True)
class FlipBit:
    offset: int  # bit offset into the encoded frame


@dataclass(frozen=True)
class SwapChains:
    i: int
    j: int


@dataclass(frozen=True)
class Replay:
    batch_id: int | None = None


@dataclass(frozen=True)
class Drop:
    pass


ActionKind = Union[FlipBit, SwapChains, Replay, Drop, None]


@dataclass(frozen=True)
class AdversaryAction:
    """What to do and to which DATA frame: the ``index``-th one on ``hop`` ("user->proxy" or "proxy->accel")."""

    kind: ActionKind = None
    hop: str = "proxy->accel"
    index: int = 0


def record_offsets(frame_bytes: bytes) -> list[dict[str, int]]:
    """Byte offsets of each record's serial, ct and tag inside an encoded frame."""
    f = decode_frame(frame_bytes)
    pos, out = HEADER.size, []
    for r in f.records:
        out.append({"serial": pos, "ct": pos + RECORD_HEAD.size, "tag": pos + RECORD_HEAD.size + len(r.ct)})
        pos += RECORD_HEAD.size + len(r.ct) + TAG_LEN
    return out


class AdversarialTransport:
    """Applies actions to bytes in flight. Endpoint state is never touched."""

    def __init__(self, inner: Transport, actions: Sequence[AdversaryAction]) -> None:
        self.inner = inner
        self.actions = [a for a in actions if a.kind is not None]
        self.data_seen: dict[str, int] = {}
        self.log: list[str] = []

    def _matches(self, a: AdversaryAction, hop: str, index: int, data: bytes) -> bool:
        if a.hop != hop:
            return False
        if isinstance(a.kind, Replay) and a.kind.batch_id is not None:
            return decode_frame(data).batch_id == a.kind.batch_id
        return a.index == index

    def send(self, src: Role, dst: Role, data: bytes) -> None:
        hop = f"{ROLE_NAMES[src]}->{ROLE_NAMES[dst]}"
        is_data = len(data) >= HEADER.size and data[5] == MsgType.DATA
        if not is_data:
            self.inner.send(src, dst, data)
            return
        index = self.data_seen.get(hop, 0)
        self.data_seen[hop] = index + 1
        out = [bytes(data)]
        for a in self.actions:
            if not self._matches(a, hop, index, data):
                continue
            k = a.kind
            if isinstance(k, FlipBit):
                buf = bytearray(out[0])
                if not 0 <= k.offset < 8 * len(buf):
                    raise ValueError(f"flip offset {k.offset} outside a {len(buf)}-byte frame")
                buf[k.offset // 8] ^= 0x80 >> (k.offset % 8)
                out[0] = bytes(buf)
                self.log.append(f"flip bit {k.offset} of frame {index} on {hop}")
            elif isinstance(k, SwapChains):
                f = decode_frame(out[0])
                recs = list(f.records)
                recs[k.i], recs[k.j] = recs[k.j], recs[k.i]
                out[0] = encode_frame(Frame(f.msg_type, f.session_id, f.batch_id, tuple(recs), f.total_len))
                self.log.append(f"swap chains {k.i},{k.j} of frame {index} on {hop}")
            elif isinstance(k, Replay):
                out.append(out[0])
                self.log.append(f"replay frame {index} on {hop}")
            elif isinstance(k, Drop):
                out = []
                self.log.append(f"drop frame {index} on {hop}")
                break
        for d in out:
            self.inner.send(src, dst, d)

    def recv(self, dst: Role, timeout: float) -> bytes | None:
        return self.inner.recv(dst, timeout)

    def close(self) -> None:
        self.inner.close()


def check_actions(actions: Sequence[AdversaryAction], mode: str, policy: ChainPolicy) -> None:
    chains = policy.n_chains if mode == "direct" else 1
    for a in actions:
        if a.hop not in ("user->proxy", "proxy->accel"):
            raise ValueError(f"unknown hop {a.hop!r}")
        if isinstance(a.kind, SwapChains):
            if a.kind.i == a.kind.j or not (0 <= a.kind.i < chains and 0 <= a.kind.j < chains):
                raise ValueError(f"swap {a.kind.i},{a.kind.j} needs two distinct chains out of {chains}")


# --------------------------------------------------------------------------
# endpoints


@dataclass
class RoleEndpoint:
    role: Role
    keys: dict[RolePair, SessionKey]
    transport: Transport
    timeout: float = 0.5

    @property
    def name(self) -> str:
        return ROLE_NAMES[self.role]

    def key(self, pair: RolePair) -> SessionKey:
        try:
            return self.keys[pair]
        except KeyError:
            raise ModeError(f"{self.name} holds no {pair.name} key") from None

    def send_frame(self, dst: Role, frame: Frame) -> int:
        data = encode_frame(frame)
        self.transport.send(self.role, dst, data)
        return len(data)

    def send_sealed(self, dst: Role, pair: RolePair, kind: MsgType, pt: bytes, policy: ChainPolicy) -> int:
        sk = self.key(pair)
        seq, env = sk.seal_multichain(pt, policy)
        return self.send_frame(dst, Frame(kind, sk.session_id, seq, env.records, env.total_len))

    def send_abort(self, dst: Role, pair: RolePair | None) -> None:
        sid = self.keys[pair].session_id if pair in self.keys else bytes(8)
        try:
            self.send_frame(dst, Frame(MsgType.ABORT, sid, 0))
        except TransportError:
            pass


def _envelope(sk: SessionKey, f: Frame) -> ChainedEnvelope:
    return ChainedEnvelope(message_nonce(sk.peer_direction_id, f.batch_id), f.records, f.total_len)


@dataclass
class _Incoming:
    """Receiver side of one session: ordering, freshness and authentication."""

    ep: RoleEndpoint
    pair: RolePair
    expected_chains: int
    meter: _StageMeter
    split_stages: bool = True
    pending: dict[int, tuple[Frame, bytes]] = field(default_factory=dict)

    def __post_init__(self) -> None:
        self.sk = self.ep.key(self.pair)
        self.next_id = self.sk.recv_last + 1

    def accept(self, f: Frame) -> None:
        if f.session_id != self.sk.session_id:
            raise SessionMismatch("frame belongs to another session")
        if f.batch_id < self.next_id or f.batch_id in self.pending:
            raise ReplayDetected(f"batch_id {f.batch_id} already seen")
        if f.msg_type not in (MsgType.DATA, MsgType.ACK):
            raise UnexpectedFrame(f"unexpected {f.msg_type.name} frame")
        chains = self.expected_chains if f.msg_type == MsgType.DATA else 1
        env = _envelope(self.sk, f)
        # decrypt into a private buffer, then verify; nothing leaves before the tags check out
        pt = chain.decrypt_chunks(self.sk.key, env) if len(env.records) else b""
        self.meter.add(f"{self.ep.name}.dec", env.total_len)
        chain.verify_multichain(self.sk.key, env, expected_chains=chains)
        self.meter.add(f"{self.ep.name}.auth", env.total_len, env.n_chains)
        self.pending[f.batch_id] = (f, pt)

    def ready(self):
        while self.next_id in self.pending:
            f, pt = self.pending.pop(self.next_id)
            self.sk.recv_last = self.next_id
            self.next_id += 1
            yield f, pt


class FlowAbort(Exception):
    def __init__(self, reason: str, rejection: Rejection | None = None) -> None:
        super().__init__(reason)
        self.reason = reason
        self.rejection = rejection


def _receive_batch(inc: _Incoming, src_name: str, n_items: int, on_item) -> None:
    """Pull frames until the sealed end marker; call on_item(pt) for each DATA item in order."""
    ep = inc.ep
    got = 0
    while True:
        raw = ep.transport.recv(ep.role, ep.timeout)
        if raw is None:
            raise FlowAbort(f"timeout waiting for {src_name}")
        batch_id = None
        try:
            f = decode_frame(raw)
            batch_id = f.batch_id
            if f.msg_type == MsgType.ABORT:
                raise FlowAbort(f"ABORT received from {src_name}")
            inc.accept(f)
            for g, pt in inc.ready():
                if g.msg_type == MsgType.ACK:
                    count = struct.unpack(">Q", pt)[0] if len(pt) == 8 else -1
                    if count != got or count != n_items:
                        raise chain.CountMismatch(f"end marker says {count} items, received {got}")
                    return
                got += 1
                on_item(pt)
        except FlowAbort:
            raise
        except (FrameError, gcm.AuthFailure, ReplayDetected, SessionMismatch, UnexpectedFrame) as exc:
            rej = Rejection(ep.name, batch_id, type(exc).__name__, str(exc))
            raise FlowAbort(f"rejected frame from {src_name}", rej) from exc


def _count_pt(n: int) -> bytes:
    return struct.pack(">Q", n)


# --------------------------------------------------------------------------
# flows


@dataclass
class FlowParties:
    user: RoleEndpoint
    proxy: RoleEndpoint
    accel: RoleEndpoint


def parties_from_setup(setup: ThreePartySetup, transport: Transport, timeout: float = 0.5) -> FlowParties:
    def ep(role: Role) -> RoleEndpoint:
        return RoleEndpoint(role, dict(setup.rings[role].sessions), transport, timeout)

    return FlowParties(ep(Role.USER), ep(Role.PROXY), ep(Role.ACCELERATOR))


def _record_abort(t: FlowTranscript, who: str, exc: FlowAbort) -> None:
    if exc.rejection is not None:
        t.rejections.append(exc.rejection)
    t.aborts.append((who, exc.reason))


def _user_send(p: FlowParties, t: FlowTranscript, items: Sequence[bytes], pair: RolePair,
               policy: ChainPolicy, costs: CostModel) -> None:
    meter = _StageMeter("user", costs)
    wire = 0
    t.exposure.setdefault("user", []).extend(range(len(items)))
    for item in items:
        meter.add("user.enc", len(item))
        wire += p.user.send_sealed(Role.PROXY, pair, MsgType.DATA, item, policy)
    wire += p.user.send_sealed(Role.PROXY, pair, MsgType.ACK, _count_pt(len(items)), ChainPolicy(1))
    meter.add("wire", wire)
    meter.flush(t)


def _accel_receive(p: FlowParties, t: FlowTranscript, pair: RolePair, n_items: int, chains: int,
                   costs: CostModel) -> None:
    meter = _StageMeter("accel", costs)
    inc = _Incoming(p.accel, pair, chains, meter)
    held: list[bytes] = []
    try:
        _receive_batch(inc, "proxy", n_items, held.append)
    except FlowAbort as exc:
        meter.flush(t)
        _record_abort(t, "accel", exc)
        return
    if costs.gpu_preprocess:
        meter.add("accel.preprocess", sum(map(len, held)))
    meter.flush(t)
    # release the batch only once every item and the end marker verified
    t.delivered.extend(held)
    t.exposure.setdefault("accel", []).extend(range(len(held)))
    t.completed = True


def _baseline_proxy(p: FlowParties, t: FlowTranscript, n_items: int, costs: CostModel) -> None:
    meter = _StageMeter("proxy", costs)
    inc = _Incoming(p.proxy, RolePair.USER_PROXY, 1, meter)
    out_pair = RolePair.PROXY_ACCEL
    sent = {"n": 0, "wire": 0}

    def forward(pt: bytes) -> None:
        t.exposure.setdefault("proxy", []).append(sent["n"])
        meter.add("proxy.enc", len(pt))
        meter.add("proxy.mac", len(pt))
        sent["wire"] += p.proxy.send_sealed(Role.ACCELERATOR, out_pair, MsgType.DATA, pt, ChainPolicy(1))
        sent["n"] += 1

    try:
        _receive_batch(inc, "user", n_items, forward)
    except FlowAbort as exc:
        meter.flush(t)
        _record_abort(t, "proxy", exc)
        p.proxy.send_abort(Role.ACCELERATOR, out_pair)
        return
    sent["wire"] += p.proxy.send_sealed(Role.ACCELERATOR, out_pair, MsgType.ACK, _count_pt(n_items), ChainPolicy(1))
    meter.add("wire", sent["wire"])
    meter.flush(t)


def _direct_proxy(p: FlowParties, t: FlowTranscript) -> None:
    """Untrusted forwarder: moves bytes it cannot decrypt and does no crypto."""
    meter = _StageMeter("proxy", DEFAULT_COSTS)
    forwarded = 0
    while True:
        raw = p.proxy.transport.recv(Role.PROXY, p.proxy.timeout)
        if raw is None:
            break
        p.proxy.transport.send(Role.PROXY, Role.ACCELERATOR, raw)
        forwarded += len(raw)
        if len(raw) >= HEADER.size and raw[5] in (MsgType.ACK, MsgType.ABORT):
            break
    meter.add("proxy.forward", forwarded)
    meter.add("wire", forwarded)
    meter.flush(t)


def _run(mode: str, p: FlowParties, items: Sequence[bytes], policy: ChainPolicy, costs: CostModel,
         concurrent: bool) -> FlowTranscript:
    t = FlowTranscript(mode)
    items = [bytes(x) for x in items]
    if mode == "baseline":
        p.user.key(RolePair.USER_PROXY), p.proxy.key(RolePair.PROXY_ACCEL)
        steps = [
            lambda: _user_send(p, t, items, RolePair.USER_PROXY, ChainPolicy(1), costs),
            lambda: _baseline_proxy(p, t, len(items), costs),
            lambda: _accel_receive(p, t, RolePair.PROXY_ACCEL, len(items), 1, costs),
        ]
    elif mode == "direct":
        if RolePair.USER_ACCEL not in p.user.keys or RolePair.USER_ACCEL not in p.accel.keys:
            raise ModeError("direct flow needs a user-accelerator session")
        if RolePair.USER_ACCEL in p.proxy.keys:
            raise ModeError("the proxy must not hold the user-accelerator key")
        steps = [
            lambda: _user_send(p, t, items, RolePair.USER_ACCEL, policy, costs),
            lambda: _direct_proxy(p, t),
            lambda: _accel_receive(p, t, RolePair.USER_ACCEL, len(items), policy.n_chains, costs),
        ]
    else:
        raise ValueError(f"unknown flow mode {mode!r}")

    if not concurrent:
        for step in steps:
            step()
    else:
        errors: list[BaseException] = []

        def guard(fn):
            def body():
                try:
                    fn()
                except BaseException as exc:  # surfaced after join
                    errors.append(exc)
            return body

        threads = [threading.Thread(target=guard(s), daemon=True) for s in reversed(steps)]
        for th in threads:
            th.start()
        for th in threads:
            th.join()
        if errors:
            raise errors[0]
    # transcript ordering stays user, proxy, accel regardless of thread timing
    order = {"user": 0, "proxy": 1, "accel": 2}
    t.events.sort(key=lambda e: order[e.role])
    return t


def run_baseline_flow(p: FlowParties, batch: Sequence[bytes], costs: CostModel = DEFAULT_COSTS,
                      concurrent: bool = False) -> FlowTranscript:
    return _run("baseline", p, batch, ChainPolicy(1), costs, concurrent)


def run_direct_flow(p: FlowParties, batch: Sequence[bytes], policy: ChainPolicy = ChainPolicy(16),
                    costs: CostModel = DEFAULT_COSTS, concurrent: bool = False) -> FlowTranscript:
    return _run("direct", p, batch, policy, costs, concurrent)


def inject_adversary(mode: str, setup: ThreePartySetup, batch: Sequence[bytes],
                     actions: Sequence[AdversaryAction], policy: ChainPolicy = ChainPolicy(16),
                     transport: Transport | None = None, costs: CostModel = DEFAULT_COSTS,
                     timeout: float = 0.5) -> FlowTranscript:
    """Run one flow with the given actions applied to frames in flight."""
    check_actions(actions, mode, policy)
    inner = transport or QueueTransport()
    adv = AdversarialTransport(inner, actions)
    parties = parties_from_setup(setup, adv, timeout)
    concurrent = not isinstance(inner, QueueTransport)
    try:
        if mode == "baseline":
            t = run_baseline_flow(parties, batch, costs, concurrent)
        else:
            t = run_direct_flow(parties, batch, policy, costs, concurrent)
    finally:
        if transport is None:
            adv.close()
    t.adversary_log = list(adv.log)
    return t
