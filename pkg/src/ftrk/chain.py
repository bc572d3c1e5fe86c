"""Multi-chain authentication.

A payload is cut into ``n`` chunks; chunk ``i`` is sealed on its own with the
single byte ``i`` as AAD and a nonce derived from the envelope's base nonce.
Tags for all chunks are independent, so verification runs one chain per
lane. A chunk moved to another position no longer verifies under the
position's serial and nonce, which is what defeats reordering.
"""

from __future__ import annotations

import hmac
from dataclasses import dataclass
from typing import Sequence

from . import gcm
from .gcm import TAG_BYTES, Key256, Nonce96

MAX_CHAINS = 255
# chunk i of a message uses base counter + i; callers advance base counters by
# CHUNK_STRIDE so chunk nonces of different messages never collide
CHUNK_STRIDE = 1 << 16


class ChainError(gcm.AuthFailure):
    """Envelope rejected. No plaintext is released."""


class ChainAuthFailure(ChainError):
    def __init__(self, serial: int) -> None:
        super().__init__(f"chain {serial}: tag mismatch")
        self.serial = serial


class ReorderDetected(ChainError):
    def __init__(self, expected: int, got: int) -> None:
        super().__init__(f"position {expected} carries chain {got}")
        self.expected = expected
        self.got = got


class CountMismatch(ChainError):
    pass


@dataclass(frozen=True)
class ChainPolicy:
    n_chains: int = 16

    def __post_init__(self) -> None:
        if not 1 <= self.n_chains <= MAX_CHAINS:
            raise ValueError(f"n_chains must be in 1..{MAX_CHAINS}, got {self.n_chains}")


@dataclass(frozen=True)
class ChainRecord:
    serial: int
    ct: bytes
    tag: bytes


@dataclass(frozen=True)
class ChainedEnvelope:
    base_nonce: Nonce96
    records: tuple[ChainRecord, ...]
    total_len: int

    @property
    def n_chains(self) -> int:
        return len(self.records)


@dataclass(frozen=True)
class OverheadAccount:
    extra_tag_bytes: int
    extra_aad_bytes: int
    baseline_bytes: int

    @property
    def extra_bytes(self) -> int:
        return self.extra_tag_bytes + self.extra_aad_bytes

    @property
    def fraction(self) -> float:
        return self.extra_bytes / self.baseline_bytes


def chunk_lengths(total: int, n: int) -> list[int]:
    size = -(-total // n)
    return [max(0, min(size, total - i * size)) for i in range(n)]


def split_chunks(pt: bytes, policy: ChainPolicy) -> list[bytes]:
    """Ceil-sized chunks; trailing chunks may be short or empty. Always n of them."""
    out, pos = [], 0
    for length in chunk_lengths(len(pt), policy.n_chains):
        out.append(bytes(pt[pos : pos + length]))
        pos += length
    return out


def chunk_nonce(base: Nonce96, serial: int) -> Nonce96:
    return base.offset(serial)


def serial_aad(serial: int) -> bytes:
    return bytes([serial])


def seal_multichain(key: Key256 | bytes, base_nonce: Nonce96, pt: bytes, policy: ChainPolicy) -> ChainedEnvelope:
    records = []
    for i, chunk in enumerate(split_chunks(pt, policy)):
        ct, tag = gcm.seal(key, chunk_nonce(base_nonce, i), serial_aad(i), chunk)
        records.append(ChainRecord(i, ct, tag))
    return ChainedEnvelope(base_nonce, tuple(records), len(pt))


def _expected_tags(key: Key256 | bytes, base: Nonce96, cts: Sequence[bytes], lanes: int | None) -> list[bytes]:
    ctx = gcm.context(key)
    n = len(cts)
    masks_in = b"".join(chunk_nonce(base, i).to_bytes() + b"\x00\x00\x00\x01" for i in range(n))
    masks = gcm.encrypt_blocks(ctx.rk, masks_in)
    digests = gcm.ghash_lanes(ctx.h, [(serial_aad(i), cts[i]) for i in range(n)], lanes)
    return [gcm.xor_bytes(d, masks[16 * i : 16 * i + 16]) for i, d in enumerate(digests)]


def verify_multichain(key: Key256 | bytes, env: ChainedEnvelope, expected_chains: int | None = None,
                      lanes: int | None = None) -> None:
    """Authenticate every chain; raise the first offending position's error."""
    n = env.n_chains
    if n == 0 or n > MAX_CHAINS:
        raise CountMismatch(f"envelope carries {n} chains")
    if expected_chains is not None and n != expected_chains:
        raise CountMismatch(f"expected {expected_chains} chains, got {n}")
    if sum(len(r.ct) for r in env.records) != env.total_len:
        raise CountMismatch("chunk lengths do not add up to total_len")

    cts = [r.ct for r in env.records]
    expected = _expected_tags(key, env.base_nonce, cts, lanes)
    bad = [i for i, r in enumerate(env.records)
           if len(r.tag) != TAG_BYTES or not hmac.compare_digest(expected[i], r.tag)]
    # a tag can be fine while the carried serial was altered; that is still a rejection
    bad_serial = [i for i, r in enumerate(env.records) if r.serial != i]
    first = min(bad + bad_serial, default=None)
    if first is None:
        return
    rec = env.records[first]
    if rec.serial != first and 0 <= rec.serial < 256 and len(rec.tag) == TAG_BYTES:
        if gcm.verify_tag(key, chunk_nonce(env.base_nonce, rec.serial), serial_aad(rec.serial), rec.ct, rec.tag):
            raise ReorderDetected(first, rec.serial)
    raise ChainAuthFailure(first)


def decrypt_chunks(key: Key256 | bytes, env: ChainedEnvelope) -> bytes:
    """Keystream-xor every chunk. Does not authenticate; callers must verify before release."""
    ctx = gcm.context(key)
    parts = []
    for i, r in enumerate(env.records):
        ks = gcm.keystream(ctx.rk, chunk_nonce(env.base_nonce, i), -(-len(r.ct) // 16))
        parts.append(gcm.xor_finalize(ks, r.ct))
    return b"".join(parts)


def open_multichain(key: Key256 | bytes, env: ChainedEnvelope, expected_chains: int | None = None,
                    lanes: int | None = None) -> bytes:
    verify_multichain(key, env, expected_chains, lanes)
    return decrypt_chunks(key, env)


def overhead(policy: ChainPolicy, baseline_bytes: int) -> OverheadAccount:
    """Extra wire bytes of n chains over one: n-1 tags plus n serial bytes."""
    if baseline_bytes <= 0:
        raise ValueError("baseline_bytes must be positive")
    n = policy.n_chains
    return OverheadAccount(TAG_BYTES * (n - 1), n, baseline_bytes)
