"""Workload presets and their conversion to per-batch stage timings.

Each preset stores the published per-batch decomposition (microseconds) plus
the share of end-to-end time spent on secure transfer. Quantities that were
not published directly are derived:

* ``cpu_mac`` is whatever the quoted secure-transfer total leaves after the
  listed components (never negative).
* GPU decryption is split into keystream and xor parts by ``KEYSTREAM_SHARE``.
* Compute time is the end-to-end batch time minus secure transfer.
* Inference adds host decryption and verification; when no inference total
  is published it is assumed to cost as much as host encryption plus MAC.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .pipeline import KEYSTREAM_SHARE, Flow, StageTiming, split_gpu_dec


class UnknownPreset(KeyError):
    pass


@dataclass(frozen=True)
class PublishedBreakdown:
    name: str
    batch_size: int
    item_bytes: int | None
    transfer: float
    gpu_dec: float
    gpu_auth: float
    cpu_enc: float
    secure_total: float
    train_share: float
    infer_share: float
    train_total: float | None = None
    infer_total: float | None = None
    # inference and training batches take equally long end to end
    equal_totals: bool = False

    @property
    def listed_sum(self) -> float:
        return self.transfer + self.gpu_dec + self.gpu_auth + self.cpu_enc

    @property
    def cpu_mac(self) -> float:
        return max(0.0, self.secure_total - self.listed_sum)


RESNET50 = PublishedBreakdown(
    name="resnet50", batch_size=64, item_bytes=112 * 1024,
    transfer=312.5, gpu_dec=70.3, gpu_auth=1130.0, cpu_enc=2440.0, secure_total=3960.0,
    train_share=0.10, infer_share=0.368, train_total=39400.0, infer_total=17360.0,
)
GRAPHSAGE = PublishedBreakdown(
    name="graphsage", batch_size=1024, item_bytes=None,
    transfer=2100.0, gpu_dec=4200.0, gpu_auth=13400.0, cpu_enc=12980.0, secure_total=32600.0,
    train_share=0.8324, infer_share=0.9304,
)
TTNN = PublishedBreakdown(
    name="ttnn", batch_size=1024, item_bytes=None,
    transfer=2190.0, gpu_dec=4190.0, gpu_auth=21890.0, cpu_enc=22070.0, secure_total=51430.0,
    train_share=0.605, infer_share=0.866, equal_totals=True,
)
PRESETS = {p.name: p for p in (RESNET50, GRAPHSAGE, TTNN)}


@dataclass(frozen=True)
class ByteRates:
    """Linear cost model: duration = fixed_us + us_per_byte * batch bytes, per stage."""

    us_per_byte: dict[str, float] = field(default_factory=dict)
    fixed_us: dict[str, float] = field(default_factory=dict)

    def duration(self, stage: str, nbytes: int) -> float:
        return self.fixed_us.get(stage, 0.0) + self.us_per_byte.get(stage, 0.0) * nbytes


@dataclass(frozen=True)
class WorkloadProfile:
    name: str
    batch_size: int
    item_bytes: int | None
    flow: Flow = Flow.TRAINING
    n_chains: int = 16
    timing: StageTiming | None = None
    rates: ByteRates | None = None

    @property
    def batch_bytes(self) -> int | None:
        return None if self.item_bytes is None else self.item_bytes * self.batch_size


def _split_like(total: float, a: float, b: float) -> tuple[float, float]:
    if a + b == 0:
        return total, 0.0
    first = total * a / (a + b)
    return first, total - first


def preset_timing(p: PublishedBreakdown, flow: Flow | str, keystream_share: float = KEYSTREAM_SHARE) -> StageTiming:
    flow = Flow(flow)
    ks, xor = split_gpu_dec(p.gpu_dec, keystream_share)
    base = p.listed_sum + p.cpu_mac
    train_total = p.train_total if p.train_total is not None else base / p.train_share
    common = dict(cpu_enc=p.cpu_enc, cpu_mac=p.cpu_mac, transfer=p.transfer, keystream=ks,
                  xor_dec=xor, gpu_auth=p.gpu_auth)
    if flow == Flow.TRAINING:
        return StageTiming(compute=train_total - base, **common)

    total = p.infer_total
    if total is None and p.equal_totals:
        total = train_total
    if total is not None:
        secure = p.infer_share * total
        host_in = secure - base
    else:
        host_in = p.cpu_enc + p.cpu_mac
        secure = base + host_in
        total = secure / p.infer_share
    if host_in < 0:
        raise ValueError(f"{p.name}: inference share implies negative host decryption time")
    cpu_dec, cpu_auth = _split_like(host_in, p.cpu_enc, p.cpu_mac)
    return StageTiming(cpu_dec=cpu_dec, cpu_auth=cpu_auth, compute=total - secure, **common)


def preset(name: str, flow: Flow | str = Flow.TRAINING, n_chains: int = 16) -> WorkloadProfile:
    try:
        p = PRESETS[name]
    except KeyError:
        raise UnknownPreset(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None
    flow = Flow(flow)
    return WorkloadProfile(p.name, p.batch_size, p.item_bytes, flow, n_chains, preset_timing(p, flow))


def derive_timings(profile: WorkloadProfile) -> StageTiming:
    """Preset timings verbatim, otherwise rates applied to the batch size in bytes."""
    if profile.timing is not None:
        return profile.timing
    if profile.rates is None or profile.batch_bytes is None:
        raise ValueError(f"{profile.name}: needs either a timing preset or byte rates with item_bytes")
    nbytes = profile.batch_bytes
    names = ("cpu_enc", "cpu_mac", "cpu_dec", "cpu_auth", "transfer", "keystream", "xor_dec", "gpu_auth", "compute")
    kw = {n: profile.rates.duration(n, nbytes) for n in names}
    if profile.flow == Flow.TRAINING:
        kw["cpu_dec"] = kw["cpu_auth"] = 0.0
    return StageTiming(**kw)
