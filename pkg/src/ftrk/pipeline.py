"""Staged pipeline model of the secure input path.

Each batch passes through host crypto (proxy), the wire, keystream and xor
decryption, tag verification and finally the model's compute step. Stages
run on exclusive lanes; a discrete-event simulation dispatches each lane in
batch order and yields the epoch makespan. A brute-force search over every
lane ordering serves as an oracle for small instances.
"""

from __future__ import annotations

import heapq
import json
import math
from collections import deque
from dataclasses import asdict, dataclass, field, fields, replace
from enum import Enum
from typing import Callable, Iterable, Mapping

from . import chain, gcm


class Flow(str, Enum):
    INFERENCE = "inference"
    TRAINING = "training"


@dataclass(frozen=True)
class StageTiming:
    """Per-batch stage durations in microseconds."""

    cpu_enc: float = 0.0
    cpu_mac: float = 0.0
    cpu_dec: float = 0.0
    cpu_auth: float = 0.0
    transfer: float = 0.0
    keystream: float = 0.0
    xor_dec: float = 0.0
    gpu_auth: float = 0.0
    compute: float = 0.0

    def __post_init__(self) -> None:
        for f in fields(self):
            v = getattr(self, f.name)
            if not (v >= 0 and math.isfinite(v)):
                raise ValueError(f"{f.name} must be a finite non-negative duration, got {v!r}")

    @property
    def gpu_dec(self) -> float:
        return self.keystream + self.xor_dec

    def host_total(self, flow: Flow) -> float:
        total = self.cpu_enc + self.cpu_mac
        if flow == Flow.INFERENCE:
            total += self.cpu_dec + self.cpu_auth
        return total

    def secure_transfer(self, flow: Flow) -> float:
        """Serialized cost of moving one batch securely, compute excluded."""
        return self.host_total(flow) + self.transfer + self.gpu_dec + self.gpu_auth

    def to_dict(self) -> dict[str, float]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Mapping[str, float]) -> "StageTiming":
        known = {f.name for f in fields(cls)}
        extra = set(data) - known - {"gpu_dec"}
        if extra:
            raise ValueError(f"unknown timing fields: {sorted(extra)}")
        kw = {k: float(v) for k, v in data.items() if k in known}
        if "gpu_dec" in data and "keystream" not in data and "xor_dec" not in data:
            kw["keystream"], kw["xor_dec"] = split_gpu_dec(float(data["gpu_dec"]))
        return cls(**kw)

    @classmethod
    def from_json(cls, text: str) -> "StageTiming":
        return cls.from_dict(json.loads(text))


KEYSTREAM_SHARE = 0.9


def split_gpu_dec(gpu_dec: float, share: float = KEYSTREAM_SHARE) -> tuple[float, float]:
    """Split a monolithic decrypt time into keystream and xor parts."""
    ks = gpu_dec * share
    return ks, gpu_dec - ks


@dataclass(frozen=True)
class Optimizations:
    direct: bool = False
    multichain: bool = False
    parallel_aes: bool = False
    eager: bool = False


class Mode(str, Enum):
    BASELINE = "baseline"
    DC = "dc"
    MULTICHAIN = "multichain"
    PARALLEL_AES = "parallel-aes"
    EAGER = "eager"
    PIPELINE = "pipeline"
    MC_PIPELINE = "mc-pipeline"
    ALL = "all"

    @property
    def optimizations(self) -> Optimizations:
        return _MODE_OPTS[self]


_MODE_OPTS = {
    Mode.BASELINE: Optimizations(),
    Mode.DC: Optimizations(direct=True),
    Mode.MULTICHAIN: Optimizations(multichain=True),
    Mode.PARALLEL_AES: Optimizations(parallel_aes=True),
    Mode.EAGER: Optimizations(eager=True),
    Mode.PIPELINE: Optimizations(parallel_aes=True, eager=True),
    Mode.MC_PIPELINE: Optimizations(multichain=True, parallel_aes=True, eager=True),
    Mode.ALL: Optimizations(direct=True, multichain=True, parallel_aes=True, eager=True),
}


@dataclass(frozen=True)
class PipelineConfig:
    n_batches: int = 64
    mode: Mode = Mode.BASELINE
    flow: Flow = Flow.TRAINING
    n_chains: int = 16
    lane_budget: int = 16
    crypto_lane_fraction: float = 0.05
    # let compute(i) overlap the next batch's input path (double buffering)
    overlap_compute: bool = False

    def __post_init__(self) -> None:
        if self.n_batches < 1:
            raise ValueError("n_batches must be at least 1")
        if not 1 <= self.n_chains <= chain.MAX_CHAINS:
            raise ValueError("n_chains out of range")
        if self.lane_budget < 1:
            raise ValueError("lane_budget must be positive")
        if not 0 < self.crypto_lane_fraction <= 1:
            raise ValueError("crypto_lane_fraction must be in (0, 1]")
        object.__setattr__(self, "mode", Mode(self.mode))
        object.__setattr__(self, "flow", Flow(self.flow))

    @property
    def opts(self) -> Optimizations:
        return self.mode.optimizations

    def auth_speedup(self) -> int:
        return min(self.n_chains, self.lane_budget) if self.opts.multichain else 1


# --------------------------------------------------------------------------
# precedence graph

STAGE_LANES = {
    "cpu_dec": "host",
    "cpu_auth": "host",
    "cpu_enc": "host",
    "cpu_mac": "host",
    "transfer": "wire",
    "keystream": "cipher",
    "xor_dec": "cipher",
    "gpu_auth": "auth",
    "compute": "compute",
}
STAGE_ORDER = tuple(STAGE_LANES)
LANES = ("host", "wire", "cipher", "auth", "compute")


@dataclass(frozen=True)
class Stage:
    batch: int
    name: str
    lane: str
    duration: float

    @property
    def rank(self) -> tuple[int, int]:
        return self.batch, STAGE_ORDER.index(self.name)


@dataclass
class StageGraph:
    stages: list[Stage]
    preds: list[tuple[int, ...]]

    def index(self, batch: int, name: str) -> int:
        return self._index[(batch, name)]

    def __post_init__(self) -> None:
        self._index = {(s.batch, s.name): i for i, s in enumerate(self.stages)}

    @property
    def lanes(self) -> dict[str, list[int]]:
        out: dict[str, list[int]] = {}
        for i in sorted(range(len(self.stages)), key=lambda i: self.stages[i].rank):
            out.setdefault(self.stages[i].lane, []).append(i)
        return out


def host_stages(config: PipelineConfig) -> tuple[str, ...]:
    if config.opts.direct:
        return ()
    if config.flow == Flow.INFERENCE:
        return ("cpu_dec", "cpu_auth", "cpu_enc", "cpu_mac")
    return ("cpu_enc", "cpu_mac")


def build_graph(config: PipelineConfig, timing: StageTiming) -> StageGraph:
    opts = config.opts
    auth = timing.gpu_auth / config.auth_speedup()
    merged = config.crypto_lane_fraction > 0.5
    host = host_stages(config)
    stages: list[Stage] = []
    preds: list[tuple[int, ...]] = []
    idx: dict[tuple[int, str], int] = {}

    def add(b: int, name: str, dur: float, deps: Iterable[int]) -> int:
        lane = STAGE_LANES[name]
        if merged and lane == "auth":
            lane = "cipher"
        idx[(b, name)] = len(stages)
        stages.append(Stage(b, name, lane, dur))
        preds.append(tuple(sorted(set(deps))))
        return idx[(b, name)]

    lag = 2 if config.overlap_compute else 1
    for b in range(config.n_batches):
        entry = [idx[(b - lag, "compute")]] if b - lag >= 0 else []
        prev = entry
        for name in host:
            prev = [add(b, name, getattr(timing, name), prev)]
        head = prev
        t = add(b, "transfer", timing.transfer, head)
        # one pad buffer: keystream(b) overwrites what xor(b-1) reads
        pad_free = [idx[(b - 1, "xor_dec")]] if b else []
        k = add(b, "keystream", timing.keystream, (head if opts.parallel_aes else [t]) + pad_free)
        # tags are checked in batch order, so xor(b) waits for auth(b-1)
        x_deps = [t, k] + ([idx[(b - 1, "gpu_auth")]] if b else [])
        x = add(b, "xor_dec", timing.xor_dec, x_deps)
        a = add(b, "gpu_auth", auth, [x])
        add(b, "compute", timing.compute, [x] if opts.eager else [x, a])
    return StageGraph(stages, preds)


# --------------------------------------------------------------------------
# engines


def simulate(graph: StageGraph) -> list[float]:
    """Event-driven run: each lane serves its stages in batch order. Returns finish times."""
    n = len(graph.stages)
    succs: list[list[int]] = [[] for _ in range(n)]
    waiting = [len(p) for p in graph.preds]
    for i, ps in enumerate(graph.preds):
        for p in ps:
            succs[p].append(i)
    queues = {lane: deque(order) for lane, order in graph.lanes.items()}
    busy = {lane: False for lane in queues}
    finish = [math.nan] * n
    events: list[tuple[float, int]] = []

    def dispatch(lane: str, now: float) -> None:
        q = queues[lane]
        if not busy[lane] and q and waiting[q[0]] == 0:
            i = q.popleft()
            busy[lane] = True
            heapq.heappush(events, (now + graph.stages[i].duration, i))

    for lane in queues:
        dispatch(lane, 0.0)
    while events:
        now, i = heapq.heappop(events)
        finish[i] = now
        lane = graph.stages[i].lane
        busy[lane] = False
        touched = {lane}
        for s in succs[i]:
            waiting[s] -= 1
            touched.add(graph.stages[s].lane)
        for ln in touched:
            dispatch(ln, now)
    if any(math.isnan(f) for f in finish):
        raise RuntimeError("pipeline graph deadlocked")
    return finish


def makespan(graph: StageGraph) -> float:
    return max(simulate(graph), default=0.0)


def brute_force_makespan(graph: StageGraph) -> float:
    """Minimum makespan over every lane ordering that respects precedence.

    Explores all dispatch sequences, each stage starting as early as its
    lane and predecessors allow, and prunes states dominated by another
    state with the same scheduled set.
    """
    n = len(graph.stages)
    lanes = sorted({s.lane for s in graph.stages})
    lane_pos = {ln: i for i, ln in enumerate(lanes)}
    succs: list[list[int]] = [[] for _ in range(n)]
    for i, ps in enumerate(graph.preds):
        for p in ps:
            succs[p].append(i)
    best = math.inf
    fronts: dict[frozenset[int], list[tuple[float, ...]]] = {}

    def dominated(key: frozenset[int], vec: tuple[float, ...]) -> bool:
        front = fronts.setdefault(key, [])
        for other in front:
            if all(a <= b for a, b in zip(other, vec)):
                return True
        front[:] = [o for o in front if not all(b <= a for a, b in zip(o, vec))]
        front.append(vec)
        return False

    def relevant(done: frozenset[int], finish: dict[int, float], free: tuple[float, ...]) -> tuple[float, ...]:
        # only finish times that can still constrain someone matter
        live = tuple(finish[i] for i in sorted(done) if any(s not in done for s in succs[i]))
        return free + live

    stack = [(frozenset(), {}, tuple(0.0 for _ in lanes))]
    while stack:
        done, finish, free = stack.pop()
        if len(done) == n:
            best = min(best, max(finish.values(), default=0.0))
            continue
        if max(finish.values(), default=0.0) >= best:
            continue
        for i in range(n):
            if i in done or any(p not in done for p in graph.preds[i]):
                continue
            st = graph.stages[i]
            li = lane_pos[st.lane]
            start = max([free[li]] + [finish[p] for p in graph.preds[i]])
            end = start + st.duration
            nd = done | {i}
            nf = dict(finish)
            nf[i] = end
            nfree = free[:li] + (end,) + free[li + 1 :]
            if not dominated(nd, relevant(nd, nf, nfree)):
                stack.append((nd, nf, nfree))
    return 0.0 if n == 0 else best


def steady_state_period(config: PipelineConfig, timing: StageTiming) -> float:
    """Closed-form per-batch period for the all-optimizations regime.

    Batch i+1 cannot start its transfer until compute(i) ends, and its xor
    waits for auth(i); with compute = 0 this is max(transfer, keystream,
    auth') + xor. A merged cipher/auth lane also has to fit all three
    crypto stages of a batch.
    """
    if config.mode != Mode.ALL:
        raise ValueError("closed form only covers the all-optimizations mode")
    if config.overlap_compute:
        raise ValueError("closed form assumes strict-serial compute")
    auth = timing.gpu_auth / config.auth_speedup()
    head = max(timing.transfer, timing.keystream)
    period = max(timing.compute + head, auth) + timing.xor_dec
    if config.crypto_lane_fraction > 0.5:
        period = max(period, timing.keystream + timing.xor_dec + auth)
    return period


# --------------------------------------------------------------------------
# reports


@dataclass(frozen=True)
class ScheduleReport:
    mode: str
    flow: str
    n_batches: int
    makespan_us: float
    baseline_makespan_us: float
    per_batch_us: float
    secure_transfer_us: float
    busy_us: dict[str, float]
    utilization: dict[str, float]
    source: str = "modeled"

    @property
    def reduction_pct(self) -> float:
        return 100.0 * (1.0 - self.makespan_us / self.baseline_makespan_us) if self.baseline_makespan_us else 0.0

    def to_dict(self) -> dict:
        d = asdict(self)
        d["reduction_pct"] = self.reduction_pct
        return d


def _report(config: PipelineConfig, timing: StageTiming, graph: StageGraph, span: float,
            base_span: float) -> ScheduleReport:
    busy: dict[str, float] = {}
    lane_busy: dict[str, float] = {ln: 0.0 for ln in LANES}
    for s in graph.stages:
        busy[s.name] = busy.get(s.name, 0.0) + s.duration
        lane_busy[s.lane] = lane_busy.get(s.lane, 0.0) + s.duration
    n = config.n_batches
    util = {ln: (b / span if span else 0.0) for ln, b in lane_busy.items()}
    return ScheduleReport(config.mode.value, config.flow.value, n, span, base_span, span / n,
                          span / n - timing.compute, busy, util)


def schedule(config: PipelineConfig, timing: StageTiming) -> ScheduleReport:
    graph = build_graph(config, timing)
    span = makespan(graph)
    if config.mode == Mode.BASELINE:
        base = span
    else:
        base = makespan(build_graph(replace(config, mode=Mode.BASELINE), timing))
    return _report(config, timing, graph, span, base)


def schedule_vs_bruteforce(config: PipelineConfig, timing: StageTiming, rel_tol: float = 1e-9) -> bool:
    if config.n_batches > 6:
        raise ValueError("brute force is limited to 6 batches")
    graph = build_graph(config, timing)
    a, b = makespan(graph), brute_force_makespan(graph)
    return math.isclose(a, b, rel_tol=rel_tol, abs_tol=1e-9)


# --------------------------------------------------------------------------
# eager evaluation


class BatchState(str, Enum):
    TENTATIVE = "tentative"
    COMMITTED = "committed"
    ABANDONED = "abandoned"


class DoubleResolve(RuntimeError):
    pass


@dataclass
class EagerLedger:
    """Outputs computed before authentication, held until each batch resolves."""

    epoch_abort: bool = False
    states: dict[int, BatchState] = field(default_factory=dict)
    buffered: dict[int, bytes] = field(default_factory=dict)
    committed: dict[int, bytes] = field(default_factory=dict)
    # first failed batch once an epoch abort has fired
    aborted_from: int | None = None

    def stage(self, batch_id: int, output: bytes) -> None:
        if batch_id in self.states:
            raise ValueError(f"batch {batch_id} already staged")
        if self.aborted_from is not None and batch_id >= self.aborted_from:
            self.states[batch_id] = BatchState.ABANDONED
            return
        self.states[batch_id] = BatchState.TENTATIVE
        self.buffered[batch_id] = bytes(output)

    def buffered_bytes(self) -> int:
        return sum(len(v) for v in self.buffered.values())

    def output_stream(self) -> bytes:
        return b"".join(self.committed[b] for b in sorted(self.committed))


def eager_resolve(ledger: EagerLedger, batch_id: int, auth_ok: bool) -> EagerLedger:
    state = ledger.states.get(batch_id)
    if state is None:
        raise KeyError(f"batch {batch_id} was never staged")
    if state != BatchState.TENTATIVE:
        raise DoubleResolve(f"batch {batch_id} already {state.value}")
    if auth_ok:
        ledger.states[batch_id] = BatchState.COMMITTED
        ledger.committed[batch_id] = ledger.buffered.pop(batch_id)
        return ledger
    doomed = [batch_id]
    if ledger.epoch_abort:
        ledger.aborted_from = min(batch_id, ledger.aborted_from if ledger.aborted_from is not None else batch_id)
        doomed = [b for b, s in ledger.states.items() if b >= batch_id and s == BatchState.TENTATIVE]
    for b in doomed:
        ledger.states[b] = BatchState.ABANDONED
        ledger.buffered.pop(b, None)
    return ledger


def run_eager_epoch(key: gcm.Key256 | bytes, envelopes: list[chain.ChainedEnvelope],
                    compute: Callable[[bytes], bytes], eager: bool = True,
                    epoch_abort: bool = False, expected_chains: int | None = None) -> EagerLedger:
    """Decrypt and compute every batch, committing each only once its tags verify.

    With ``eager`` the compute step runs on the unverified plaintext and the
    result is buffered; otherwise compute waits for verification.
    """
    ledger = EagerLedger(epoch_abort=epoch_abort)
    for b, env in enumerate(envelopes):
        if eager:
            ledger.stage(b, compute(chain.decrypt_chunks(key, env)))
        try:
            chain.verify_multichain(key, env, expected_chains)
            ok = True
        except chain.ChainError:
            ok = False
        if not eager:
            ledger.stage(b, compute(chain.decrypt_chunks(key, env)) if ok else b"")
        if ledger.states[b] == BatchState.TENTATIVE:
            eager_resolve(ledger, b, ok)
    return ledger
