import itertools
import os
import random
from dataclasses import replace

import pytest

from ftrk import chain, gcm
from ftrk.chain import (
    ChainAuthFailure,
    ChainError,
    ChainPolicy,
    ChainRecord,
    CountMismatch,
    ReorderDetected,
    open_multichain,
    seal_multichain,
)
from ftrk.gcm import Nonce96

KEY = bytes(range(32))
BASE = Nonce96(b"\x02\x01\x03\x00", 5 * chain.CHUNK_STRIDE)


def _permuted(env, order):
    return replace(env, records=tuple(env.records[i] for i in order))


@pytest.mark.parametrize("size,n,expected", [
    (48, 3, [16, 16, 16]),
    (50, 3, [17, 17, 16]),
    (5, 8, [1, 1, 1, 1, 1, 0, 0, 0]),
    (0, 4, [0, 0, 0, 0]),
    (33, 1, [33]),
])
def test_split_chunks(size, n, expected):
    pt = os.urandom(size)
    parts = chain.split_chunks(pt, ChainPolicy(n))
    assert [len(p) for p in parts] == expected
    assert b"".join(parts) == pt


@pytest.mark.parametrize("n", [0, 256, -1])
def test_policy_bounds(n):
    with pytest.raises(ValueError):
        ChainPolicy(n)


@pytest.mark.parametrize("n", [1, 2, 3, 8, 16, 255])
@pytest.mark.parametrize("size", [0, 1, 100, 4096])
def test_round_trip(n, size):
    pt = os.urandom(size)
    env = seal_multichain(KEY, BASE, pt, ChainPolicy(n))
    assert env.n_chains == n
    assert [r.serial for r in env.records] == list(range(n))
    assert sum(len(r.ct) for r in env.records) == env.total_len == size
    assert open_multichain(KEY, env) == pt


def test_plaintext_independent_of_chain_count():
    pt = os.urandom(1000)
    outs = {open_multichain(KEY, seal_multichain(KEY, BASE, pt, ChainPolicy(n))) for n in (1, 2, 7, 16)}
    assert outs == {pt}


def test_single_chain_equals_plain_seal():
    pt = os.urandom(77)
    env = seal_multichain(KEY, BASE, pt, ChainPolicy(1))
    ct, tag = gcm.seal(KEY, BASE, b"\x00", pt)
    assert env.records[0] == ChainRecord(0, ct, tag)


def test_sixteen_tags_per_item():
    env = seal_multichain(KEY, BASE, os.urandom(112 * 1024), ChainPolicy(16))
    assert len({r.tag for r in env.records}) == 16


def test_chunk_nonces_do_not_overlap_between_messages():
    # chunk i of message s covers counters nonce(s*stride + i) || 2.. ; distinct nonces per chunk and message
    seen = set()
    for seq in range(4):
        base = Nonce96(b"\x00" * 4, seq * chain.CHUNK_STRIDE)
        for i in range(255):
            seen.add(chain.chunk_nonce(base, i).to_bytes())
    assert len(seen) == 4 * 255


def test_swap_four_and_seven_names_first_position():
    env = seal_multichain(KEY, BASE, os.urandom(1024), ChainPolicy(16))
    order = list(range(16))
    order[4], order[7] = 7, 4
    with pytest.raises(ReorderDetected) as err:
        open_multichain(KEY, _permuted(env, order))
    assert (err.value.expected, err.value.got) == (4, 7)


def test_ciphertext_flip_names_the_chain():
    env = seal_multichain(KEY, BASE, os.urandom(300), ChainPolicy(4))
    rec = env.records[2]
    bad = ChainRecord(2, bytes([rec.ct[0] ^ 1]) + rec.ct[1:], rec.tag)
    records = env.records[:2] + (bad,) + env.records[3:]
    with pytest.raises(ChainAuthFailure) as err:
        open_multichain(KEY, replace(env, records=records))
    assert err.value.serial == 2


def test_relabelled_serial_is_rejected():
    env = seal_multichain(KEY, BASE, os.urandom(64), ChainPolicy(4))
    recs = list(env.records)
    recs[1] = replace(recs[1], serial=3)
    with pytest.raises(ChainAuthFailure):
        open_multichain(KEY, replace(env, records=tuple(recs)))


def test_every_bit_flip_in_every_record_is_rejected():
    pt = os.urandom(64)
    for n in (1, 2, 4):
        env = seal_multichain(KEY, BASE, pt, ChainPolicy(n))
        for idx, rec in enumerate(env.records):
            blob = bytes([rec.serial]) + rec.ct + rec.tag
            for bit in range(8 * len(blob)):
                b = bytearray(blob)
                b[bit // 8] ^= 1 << (bit % 8)
                tampered = ChainRecord(b[0], bytes(b[1 : 1 + len(rec.ct)]), bytes(b[1 + len(rec.ct) :]))
                records = env.records[:idx] + (tampered,) + env.records[idx + 1 :]
                with pytest.raises(ChainError):
                    open_multichain(KEY, replace(env, records=records))


@pytest.mark.parametrize("n", [2, 3, 4])
def test_every_permutation_is_rejected(n):
    pt = os.urandom(64)
    env = seal_multichain(KEY, BASE, pt, ChainPolicy(n))
    for order in itertools.permutations(range(n)):
        if list(order) == list(range(n)):
            assert open_multichain(KEY, _permuted(env, order)) == pt
            continue
        with pytest.raises(ChainError):
            open_multichain(KEY, _permuted(env, order))


def test_random_permutations_of_sixteen_are_rejected():
    r = random.Random(16)
    env = seal_multichain(KEY, BASE, os.urandom(64 * 16), ChainPolicy(16))
    for _ in range(1000):
        order = list(range(16))
        while order == sorted(order):
            r.shuffle(order)
        with pytest.raises(ChainError):
            open_multichain(KEY, _permuted(env, order))


def test_count_mismatches():
    env = seal_multichain(KEY, BASE, os.urandom(100), ChainPolicy(4))
    with pytest.raises(CountMismatch):
        open_multichain(KEY, env, expected_chains=8)
    with pytest.raises(CountMismatch):
        open_multichain(KEY, replace(env, records=env.records[:3]), expected_chains=4)
    with pytest.raises(CountMismatch):
        open_multichain(KEY, replace(env, total_len=99))
    with pytest.raises(CountMismatch):
        open_multichain(KEY, replace(env, records=()))


def test_wrong_key_rejected():
    env = seal_multichain(KEY, BASE, os.urandom(100), ChainPolicy(4))
    with pytest.raises(ChainError):
        open_multichain(bytes(32), env)


def test_lane_grouping_does_not_change_verdict():
    env = seal_multichain(KEY, BASE, os.urandom(5000), ChainPolicy(16))
    for lanes in (1, 3, 8, 16, None):
        chain.verify_multichain(KEY, env, lanes=lanes)


@pytest.mark.parametrize("n,extra_tags,extra_aad", [(1, 0, 1), (2, 16, 2), (16, 240, 16), (255, 254 * 16, 255)])
def test_overhead_arithmetic(n, extra_tags, extra_aad):
    acct = chain.overhead(ChainPolicy(n), 112 * 1024)
    assert (acct.extra_tag_bytes, acct.extra_aad_bytes) == (extra_tags, extra_aad)
    assert acct.extra_bytes == 16 * (n - 1) + n


def test_overhead_sixteen_chains_on_preset_item():
    acct = chain.overhead(ChainPolicy(16), 112 * 1024)
    assert acct.extra_bytes == 256
    assert acct.fraction == pytest.approx(256 / 114688)
    assert acct.fraction < 0.005


def test_overhead_needs_positive_baseline():
    with pytest.raises(ValueError):
        chain.overhead(ChainPolicy(4), 0)
