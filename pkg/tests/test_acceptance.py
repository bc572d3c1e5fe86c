"""Acceptance criteria, one test each. Every test records a PASS/FAIL line.

Run ``pytest tests/test_acceptance.py -v`` (lines are repeated in the
terminal summary) or ``python3 tests/test_acceptance.py``.
"""

import itertools
import random
import time
from dataclasses import fields, replace
from pathlib import Path

import pytest
from cryptography.hazmat.primitives.ciphers.aead import AESGCM

from ftrk import bench, cavp, channel, gcm
from ftrk.chain import ChainError, ChainPolicy, ChainRecord, overhead, open_multichain, seal_multichain
from ftrk.gcm import Nonce96
from ftrk.handshake import HandshakeParty, Role, establish_three_party, make_rng
from ftrk.pipeline import Flow, Mode, PipelineConfig, StageTiming, build_graph, makespan, schedule_vs_bruteforce
from ftrk.workloads import preset

VECTORS = Path(__file__).parent / "vectors"
RESULTS: list[str] = []


def record(name, ok, detail):
    line = f"{'PASS' if ok else 'FAIL'}  {name}: {detail}"
    RESULTS.append(line)
    print(line)
    return ok


# ---- AEAD ground truth ---------------------------------------------------------


def test_aead_ground_truth():
    t0 = time.perf_counter()
    reports = [cavp.replay_file(VECTORS / n) for n in ("gcmEncryptExtIV256.rsp", "gcmDecrypt256.rsp")]
    secs = time.perf_counter() - t0
    total = sum(r.total for r in reports)
    passed = sum(r.passed for r in reports)
    rejected = sum(r.rejected_as_expected for r in reports)
    ok = all(r.ok for r in reports) and passed == total > 0 and secs < 10
    assert record("aead-ground-truth", ok,
                  f"{passed}/{total} vectors, {rejected} FAIL records rejected, {secs:.2f} s (limit 10 s)")


# ---- split-phase equivalence ---------------------------------------------------


def test_split_phase_equivalence():
    r = random.Random(10_000)
    mismatches = 0
    for _ in range(10_000):
        key, nonce = r.randbytes(32), r.randbytes(12)
        aad, pt = r.randbytes(r.randrange(0, 33)), r.randbytes(r.randrange(0, 4097))
        sealed = AESGCM(key).encrypt(nonce, pt, aad)
        ct, tag = sealed[:-16], sealed[-16:]
        ks = gcm.keystream(gcm.expand_key(key), nonce, -(-len(ct) // 16))
        split = gcm.xor_finalize(ks, ct)
        opened = gcm.open(key, nonce, aad, ct, tag)
        mismatches += split != opened or opened != pt
    assert record("split-phase-equivalence", mismatches == 0, f"10000 cases, {mismatches} mismatches")


# ---- multichain soundness ------------------------------------------------------


def test_multichain_soundness():
    key = bytes(range(32))
    base = Nonce96(b"\x03\x01\x03\x00", 0)
    false_rejects = false_accepts = checked = 0

    def expect_reject(env):
        nonlocal false_accepts, checked
        checked += 1
        try:
            open_multichain(key, env)
            false_accepts += 1
        except ChainError:
            pass

    r = random.Random(518)
    for n in (1, 2, 3, 8, 16, 255):
        for size in (0, 64, 4096):
            pt = r.randbytes(size)
            checked += 1
            try:
                false_rejects += open_multichain(key, seal_multichain(key, base, pt, ChainPolicy(n))) != pt
            except ChainError:
                false_rejects += 1

    pt = r.randbytes(64)
    for n in (1, 2, 4, 16):
        env = seal_multichain(key, base, pt, ChainPolicy(n))
        for idx, rec in enumerate(env.records):
            blob = bytes([rec.serial]) + rec.ct + rec.tag
            for bit in range(8 * len(blob)):
                b = bytearray(blob)
                b[bit // 8] ^= 1 << (bit % 8)
                bad = ChainRecord(b[0], bytes(b[1 : 1 + len(rec.ct)]), bytes(b[1 + len(rec.ct) :]))
                expect_reject(replace(env, records=env.records[:idx] + (bad,) + env.records[idx + 1 :]))

    for n in (2, 3, 4):
        env = seal_multichain(key, base, pt, ChainPolicy(n))
        for order in itertools.permutations(range(n)):
            if list(order) != list(range(n)):
                expect_reject(replace(env, records=tuple(env.records[i] for i in order)))

    env = seal_multichain(key, base, r.randbytes(1024), ChainPolicy(16))
    for _ in range(1000):
        order = list(range(16))
        while order == sorted(order):
            r.shuffle(order)
        expect_reject(replace(env, records=tuple(env.records[i] for i in order)))

    ok = false_accepts == 0 and false_rejects == 0
    assert record("multichain-soundness", ok,
                  f"{checked} cases, {false_accepts} false accepts, {false_rejects} false rejects")


# ---- overhead arithmetic -------------------------------------------------------


def test_overhead_arithmetic():
    acct = overhead(ChainPolicy(16), 112 * 1024)
    ok = acct.extra_bytes == 256 and acct.extra_tag_bytes == 240 and acct.extra_aad_bytes == 16
    ok = ok and acct.fraction < 0.005
    assert record("overhead-arithmetic", ok,
                  f"n=16 adds {acct.extra_bytes} B ({acct.extra_tag_bytes} tag + {acct.extra_aad_bytes} aad), "
                  f"{100 * acct.fraction:.3f}% of 112 KiB (limit 0.5%)")


# ---- baseline reconstruction ---------------------------------------------------


def test_baseline_reconstruction():
    checks = []
    for name, target, rel in (("resnet50", 3960.0, 0.01), ("graphsage", 32600.0, 0.02), ("ttnn", 51430.0, 0.02)):
        prof = preset(name, "training")
        row = bench.schedule_row(prof, prof.timing, Mode.BASELINE, 64)
        secure = row.per_batch_us - row.stages_us["compute"]
        checks.append((f"{name} {secure / 1000:.3f} ms vs {target / 1000:.2f}", abs(secure / target - 1) <= rel))
        if name == "resnet50":
            ratio = secure / prof.timing.transfer
            checks.append((f"resnet50 penalty {ratio:.2f}x vs 12.7x", abs(ratio / 12.7 - 1) <= 0.02))
    ok = all(c for _, c in checks)
    assert record("baseline-reconstruction", ok, "; ".join(d for d, _ in checks))


# ---- optimization reproduction -------------------------------------------------

TARGETS = [
    ("graphsage", "inference", 84.6),
    ("graphsage", "training", 72.5),
    ("ttnn", "inference", 81.7),
    ("ttnn", "training", 55.7),
    ("resnet50", "inference", 31.4),
    ("resnet50", "training", 8.8),
]


@pytest.mark.parametrize("name,flow,target", TARGETS)
def test_optimization_reproduction(name, flow, target):
    prof = preset(name, flow)
    row = bench.schedule_row(prof, prof.timing, Mode.ALL, 256)
    got = row.reduction_pct
    ok = abs(got - target) <= 3.0
    assert record(f"optimization-reproduction {name}/{flow}", ok,
                  f"all-mode reduction {got:.2f}% vs {target}% +/- 3 pp")


# ---- scheduler oracle ----------------------------------------------------------

TIMING_FIELDS = [f.name for f in fields(StageTiming)]


def _timing(r):
    return StageTiming(**{f: 0.0 if r.random() < 0.15 else round(r.uniform(0, 100), 3) for f in TIMING_FIELDS})


def _config(r, n):
    return PipelineConfig(n, r.choice(list(Mode)), r.choice(list(Flow)), r.choice([1, 2, 4, 16]),
                          crypto_lane_fraction=r.choice([0.05, 0.8]), overlap_compute=r.random() < 0.5)


def _fewer(lo, hi):
    a, b = lo.optimizations, hi.optimizations
    return lo != hi and all(getattr(b, f.name) or not getattr(a, f.name) for f in fields(a))


def test_scheduler_oracle():
    r = random.Random(522)
    mismatches = 0
    for _ in range(500):
        mismatches += not schedule_vs_bruteforce(_config(r, r.randint(1, 6)), _timing(r))

    pairs = [(lo, hi) for lo in Mode for hi in Mode if _fewer(lo, hi)]
    dominance = 0
    for _ in range(1000):
        t, cfg = _timing(r), _config(r, 8)
        spans = {m: makespan(build_graph(replace(cfg, mode=m), t)) for m in Mode}
        dominance += any(spans[hi] > spans[lo] + 1e-9 for lo, hi in pairs)

    monotone = 0
    for _ in range(1000):
        t, cfg = _timing(r), _config(r, r.randint(1, 8))
        before = makespan(build_graph(cfg, t))
        f = r.choice(TIMING_FIELDS)
        after = makespan(build_graph(cfg, replace(t, **{f: getattr(t, f) + r.uniform(0.1, 50)})))
        monotone += after < before - 1e-9

    ok = mismatches == dominance == monotone == 0
    assert record("scheduler-oracle", ok,
                  f"500 brute-force instances ({mismatches} mismatches), 1000 dominance vectors "
                  f"({dominance} violations), 1000 monotonicity vectors ({monotone} violations)")


# ---- flow security witnesses ---------------------------------------------------


def _setup(mode, seed):
    return establish_three_party(HandshakeParty(Role.USER), HandshakeParty(Role.PROXY),
                                 HandshakeParty(Role.ACCELERATOR), mode, make_rng(f"acceptance-{mode}-{seed}"))


def test_flow_security_witnesses():
    r = random.Random(523)
    setup = _setup("direct", "ledger")
    exposed = failed = 0
    for _ in range(100):
        items = [r.randbytes(r.randrange(0, 4096)) for _ in range(r.randrange(1, 6))]
        t = channel.inject_adversary("direct", setup, items, [], ChainPolicy(16))
        exposed += bool(t.exposure.get("proxy"))
        failed += t.delivered != items

    attacks = [("baseline", k) for k in (channel.FlipBit(323), channel.Replay(), channel.Drop())]
    attacks += [("direct", k) for k in (channel.FlipBit(323), channel.SwapChains(4, 7), channel.Replay(),
                                        channel.Drop())]
    silent = unflagged = runs = 0
    for i, ((mode, kind), hop, target) in enumerate(itertools.product(attacks, ("user->proxy", "proxy->accel"),
                                                                      (0, 2))):
        items = [r.randbytes(1024) for _ in range(4)]
        t = channel.inject_adversary(mode, _setup(mode, i), items, [channel.AdversaryAction(kind, hop, target)],
                                     ChainPolicy(16), timeout=0.2)
        runs += 1
        silent += bool(t.delivered) or t.completed
        unflagged += t.outcome not in ("rejected", "timeout") or not t.aborts

    ok = exposed == failed == silent == unflagged == 0
    assert record("flow-security-witnesses", ok,
                  f"100 direct batches ({exposed} with proxy plaintext, {failed} wrong deliveries); "
                  f"{runs} attacks ({silent} silent corruptions, {unflagged} without reject/timeout and ABORT)")


# ---- measured multichain speedup -----------------------------------------------


def test_measured_multichain_speedup():
    lanes, size = 8, 1 << 20
    tput = {n: bench.measure_verify(size, n, lanes, repeats=5).throughput_Bps for n in (1, 2, 4, 8, 16)}
    upto = [n for n in sorted(tput) if n <= lanes]
    monotone = all(tput[b] >= 0.9 * tput[a] for a, b in zip(upto, upto[1:]))
    speedup = tput[16] / tput[1]
    ok = speedup >= 2.0 and monotone
    shape = ", ".join(f"n={n} {tput[n] / 1e6:.1f} MB/s" for n in sorted(tput))
    assert record("measured-multichain-speedup", ok,
                  f"{lanes} lanes, 1 MiB: {shape}; n=16 is {speedup:.2f}x n=1 (need >= 2x), "
                  f"non-decreasing to n={lanes}: {monotone}")


if __name__ == "__main__":
    import sys

    sys.exit(pytest.main([__file__, "-q", "-p", "no:cacheprovider"]))
