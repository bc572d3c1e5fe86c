"""Crypto micro-benchmarks and the report format shared with the simulator.

Every row carries a ``source`` label: ``measured`` rows are wall-clock
numbers from this host, ``modeled`` rows come from the pipeline scheduler.
"""

from __future__ import annotations

import csv
import io
import json
import os
import random
import time
from dataclasses import asdict, dataclass, field, fields
from typing import Callable, Iterable, Sequence

from . import chain, gcm
from .pipeline import STAGE_ORDER, Mode, PipelineConfig, StageTiming, schedule
from .workloads import WorkloadProfile

STAGE_COLUMNS = tuple(f"{s}_us" for s in STAGE_ORDER)
CSV_COLUMNS = (
    "source", "preset", "flow", "mode", "op", "size_bytes", "n_chains", "lanes", "n_batches",
    "seconds", "throughput_Bps", "makespan_us", "per_batch_us", "reduction_pct",
) + STAGE_COLUMNS


@dataclass
class BenchRow:
    source: str
    op: str
    preset: str = ""
    flow: str = ""
    mode: str = ""
    size_bytes: int = 0
    n_chains: int = 0
    lanes: int = 0
    n_batches: int = 0
    seconds: float = 0.0
    throughput_Bps: float = 0.0
    makespan_us: float = 0.0
    per_batch_us: float = 0.0
    reduction_pct: float = 0.0
    # per-batch busy time of each stage
    stages_us: dict[str, float] = field(default_factory=dict)

    def flat(self) -> dict[str, object]:
        d = {k: v for k, v in asdict(self).items() if k != "stages_us"}
        for s in STAGE_ORDER:
            d[f"{s}_us"] = self.stages_us.get(s, 0.0)
        return d

    @classmethod
    def from_flat(cls, d: dict[str, object]) -> "BenchRow":
        casts = {"str": str, "int": lambda v: int(float(v)), "float": float}
        kw = {f.name: casts[f.type](d[f.name]) for f in fields(cls) if f.type in casts and f.name in d}
        stages = {s: float(d.get(f"{s}_us", 0.0)) for s in STAGE_ORDER}
        return cls(stages_us={k: v for k, v in stages.items() if v}, **kw)


@dataclass
class BenchReport:
    rows: list[BenchRow] = field(default_factory=list)
    notes: list[str] = field(default_factory=list)

    def to_json(self) -> str:
        return json.dumps({"columns": list(CSV_COLUMNS), "rows": [r.flat() for r in self.rows],
                           "notes": self.notes}, indent=2)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=CSV_COLUMNS, lineterminator="\n")
        w.writeheader()
        for r in self.rows:
            w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in r.flat().items()})
        return buf.getvalue()

    def to_text(self) -> str:
        cols = [c for c in CSV_COLUMNS if any(_cell(r.flat()[c]) not in ("", "0") for r in self.rows)] or ["source"]
        table = [cols] + [[_cell(r.flat()[c]) for c in cols] for r in self.rows]
        widths = [max(len(row[i]) for row in table) for i in range(len(cols))]
        lines = ["  ".join(v.rjust(w) for v, w in zip(row, widths)) for row in table]
        return "\n".join(lines + [f"# {n}" for n in self.notes])


def _cell(v: object) -> str:
    if isinstance(v, float):
        return f"{v:.6g}" if v else "0"
    return str(v)


def parse_report(text: str) -> BenchReport:
    data = json.loads(text)
    if list(data.get("columns", [])) != list(CSV_COLUMNS):
        raise ValueError("report columns do not match this version")
    return BenchReport([BenchRow.from_flat(r) for r in data["rows"]], list(data.get("notes", [])))


def parse_csv(text: str) -> BenchReport:
    reader = csv.DictReader(io.StringIO(text))
    if tuple(reader.fieldnames or ()) != CSV_COLUMNS:
        raise ValueError("CSV columns do not match this version")
    return BenchReport([BenchRow.from_flat(r) for r in reader])


# --------------------------------------------------------------------------
# modeled rows


def schedule_row(profile: WorkloadProfile, timing: StageTiming, mode: Mode | str, n_batches: int,
                 source: str = "modeled", **config_kw) -> BenchRow:
    cfg = PipelineConfig(n_batches=n_batches, mode=Mode(mode), flow=profile.flow, n_chains=profile.n_chains,
                         **config_kw)
    rep = schedule(cfg, timing)
    per_batch = {k: v / n_batches for k, v in rep.busy_us.items()}
    return BenchRow(source, "schedule", profile.name, profile.flow.value, cfg.mode.value,
                    n_chains=profile.n_chains, n_batches=n_batches, makespan_us=rep.makespan_us,
                    per_batch_us=rep.per_batch_us, reduction_pct=rep.reduction_pct, stages_us=per_batch)


# --------------------------------------------------------------------------
# measured rows


def best_time(fn: Callable[[], object], repeats: int = 5) -> float:
    fn()  # warm caches and compiled kernels
    best = float("inf")
    for _ in range(max(1, repeats)):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def _throughput(size: int, seconds: float) -> float:
    return size / seconds if size and seconds > 0 else 0.0


@dataclass(frozen=True)
class _Material:
    key: bytes
    nonce: gcm.Nonce96
    pt: bytes


def _material(size: int, seed: int = 0) -> _Material:
    rnd = random.Random(seed)
    return _Material(rnd.randbytes(32), gcm.Nonce96(b"\x00\x01\x02\x00", 0), rnd.randbytes(size))


def measure_verify(size: int, n_chains: int, lanes: int | None, repeats: int = 5) -> BenchRow:
    """Multi-chain tag verification only: the part that parallelizes across chains."""
    m = _material(size)
    env = chain.seal_multichain(m.key, m.nonce, m.pt, chain.ChainPolicy(n_chains))
    secs = best_time(lambda: chain.verify_multichain(m.key, env, lanes=lanes), repeats)
    return BenchRow("measured", "verify", size_bytes=size, n_chains=n_chains, lanes=lanes or n_chains,
                    seconds=secs, throughput_Bps=_throughput(size, secs))


def measure_open_multichain(size: int, n_chains: int, lanes: int | None, repeats: int = 5) -> BenchRow:
    m = _material(size)
    env = chain.seal_multichain(m.key, m.nonce, m.pt, chain.ChainPolicy(n_chains))
    secs = best_time(lambda: chain.open_multichain(m.key, env, lanes=lanes), repeats)
    return BenchRow("measured", "open_multichain", size_bytes=size, n_chains=n_chains, lanes=lanes or n_chains,
                    seconds=secs, throughput_Bps=_throughput(size, secs))


def measure_open(size: int, repeats: int = 5) -> BenchRow:
    m = _material(size)
    ct, tag = gcm.seal(m.key, m.nonce, b"", m.pt)
    secs = best_time(lambda: gcm.open(m.key, m.nonce, b"", ct, tag), repeats)
    return BenchRow("measured", "open", size_bytes=size, n_chains=1, lanes=1, seconds=secs,
                    throughput_Bps=_throughput(size, secs))


def measure_seal(size: int, repeats: int = 5) -> BenchRow:
    m = _material(size)
    secs = best_time(lambda: gcm.seal(m.key, m.nonce, b"", m.pt), repeats)
    return BenchRow("measured", "seal", size_bytes=size, n_chains=1, lanes=1, seconds=secs,
                    throughput_Bps=_throughput(size, secs))


def measure_keystream(size: int, repeats: int = 5) -> BenchRow:
    m = _material(size)
    rk = gcm.context(m.key).rk
    blocks = -(-size // gcm.BLOCK)
    secs = best_time(lambda: gcm.keystream(rk, m.nonce, blocks), repeats)
    return BenchRow("measured", "keystream", size_bytes=size, n_chains=1, lanes=1, seconds=secs,
                    throughput_Bps=_throughput(size, secs))


def bench_crypto(sizes: Sequence[int], chain_counts: Sequence[int], lanes: int | None,
                 repeats: int = 5) -> BenchReport:
    report = BenchReport(notes=[f"host measurements, {os.cpu_count()} cpu(s); not comparable to accelerator numbers"])
    for size in sizes:
        report.rows += [measure_seal(size, repeats), measure_open(size, repeats)]
        for n in chain_counts:
            report.rows.append(measure_verify(size, n, lanes, repeats))
            report.rows.append(measure_open_multichain(size, n, lanes, repeats))
    return report


def measured_timing(profile: WorkloadProfile, base: StageTiming, repeats: int = 3) -> StageTiming:
    """Swap the accelerator crypto stages of ``base`` for host measurements at the profile's batch size.

    Authentication is timed as one chain; the scheduler applies its own
    multi-chain model on top.
    """
    nbytes = profile.batch_bytes
    if nbytes is None:
        raise ValueError(f"{profile.name}: item size unknown, cannot measure per-batch crypto")
    ks = measure_keystream(nbytes, repeats).seconds * 1e6
    m = _material(nbytes)
    pad = gcm.keystream(gcm.context(m.key).rk, m.nonce, -(-nbytes // gcm.BLOCK))
    xor = best_time(lambda: gcm.xor_finalize(pad, m.pt), repeats) * 1e6
    auth = measure_verify(nbytes, 1, 1, repeats).seconds * 1e6
    return StageTiming(**{**base.to_dict(), "keystream": ks, "xor_dec": xor, "gpu_auth": auth})


def simulate_rows(profile: WorkloadProfile, timing: StageTiming, modes: Iterable[Mode | str], n_batches: int,
                  source: str = "modeled") -> BenchReport:
    rows = [schedule_row(profile, timing, m, n_batches, source) for m in modes]
    return BenchReport(rows, [f"timings: {source}"])

