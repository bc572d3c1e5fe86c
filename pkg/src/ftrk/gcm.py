"""AES-256-GCM with a split-phase decryption path.

The block cipher and GHASH run in small numba kernels. GHASH is evaluated
with the reference shift-and-add multiply, vectorised across independent
chains: one chain occupies one SIMD lane, so a single long chain is
latency-bound while many short chains fill the vector unit. That is the
property the multi-chain codec relies on.

Conventions follow SP 800-38D: the pre-counter block is ``nonce || 1``,
payload counters start at 2, GF(2^128) elements use the reflected bit order.
"""

from __future__ import annotations

import functools
import hmac
import os
from dataclasses import dataclass

import numpy as np
from numba import njit

BLOCK = 16
KEY_BYTES = 32
NONCE_BYTES = 12
TAG_BYTES = 16
ROUNDS = 14

__all__ = [
    "AuthFailure",
    "Key256",
    "Nonce96",
    "RoundKeys",
    "Keystream",
    "expand_key",
    "encrypt_block",
    "encrypt_blocks",
    "hash_subkey",
    "keystream",
    "ghash",
    "ghash_lanes",
    "seal",
    "open",
    "xor_bytes",
    "xor_finalize",
    "verify_tag",
]


class AuthFailure(Exception):
    """Tag mismatch. No plaintext is released."""


# --------------------------------------------------------------------------
# key and nonce types


@dataclass(frozen=True, repr=False)
class Key256:
    raw: bytes

    def __post_init__(self) -> None:
        if not isinstance(self.raw, (bytes, bytearray)) or len(self.raw) != KEY_BYTES:
            raise ValueError("AES-256 key must be exactly 32 bytes")
        object.__setattr__(self, "raw", bytes(self.raw))

    @classmethod
    def random(cls) -> "Key256":
        return cls(os.urandom(KEY_BYTES))

    def __repr__(self) -> str:
        return "Key256(<redacted>)"

    def __bytes__(self) -> bytes:
        return self.raw


@dataclass(frozen=True)
class Nonce96:
    """4-byte direction tag followed by an 8-byte big-endian counter."""

    direction_id: bytes
    counter: int

    def __post_init__(self) -> None:
        if len(self.direction_id) != 4:
            raise ValueError("direction_id must be 4 bytes")
        if not 0 <= self.counter < 1 << 64:
            raise ValueError("nonce counter out of 64-bit range")

    def to_bytes(self) -> bytes:
        return bytes(self.direction_id) + self.counter.to_bytes(8, "big")

    @classmethod
    def from_bytes(cls, raw: bytes) -> "Nonce96":
        if len(raw) != NONCE_BYTES:
            raise ValueError("nonce must be 12 bytes")
        return cls(bytes(raw[:4]), int.from_bytes(raw[4:], "big"))

    def offset(self, delta: int) -> "Nonce96":
        return Nonce96(self.direction_id, self.counter + delta)


def _key_bytes(key: Key256 | bytes) -> bytes:
    raw = key.raw if isinstance(key, Key256) else bytes(key)
    if len(raw) != KEY_BYTES:
        raise ValueError("AES-256 key must be exactly 32 bytes")
    return raw


def _nonce_bytes(nonce: Nonce96 | bytes) -> bytes:
    raw = nonce.to_bytes() if isinstance(nonce, Nonce96) else bytes(nonce)
    if len(raw) != NONCE_BYTES:
        raise ValueError("only 96-bit nonces are supported")
    return raw


# --------------------------------------------------------------------------
# AES tables


def _xtime(a: int) -> int:
    a <<= 1
    return (a ^ 0x11B) & 0xFF if a & 0x100 else a


def _build_sbox() -> list[int]:
    sbox = [0] * 256
    p = q = 1
    while True:
        # p walks the multiplicative group by 3, q tracks its inverse by 3^-1
        p = p ^ _xtime(p)
        q ^= q << 1
        q ^= q << 2
        q ^= q << 4
        q &= 0xFF
        if q & 0x80:
            q ^= 0x09
        rot = lambda v, s: ((v << s) | (v >> (8 - s))) & 0xFF  # noqa: E731
        sbox[p] = q ^ rot(q, 1) ^ rot(q, 2) ^ rot(q, 3) ^ rot(q, 4) ^ 0x63
        if p == 1:
            break
    sbox[0] = 0x63
    return sbox


SBOX = _build_sbox()


def _te_tables() -> np.ndarray:
    te = np.zeros((4, 256), dtype=np.uint32)
    for x in range(256):
        s = SBOX[x]
        s2 = _xtime(s)
        s3 = s2 ^ s
        word = (s2 << 24) | (s << 16) | (s << 8) | s3
        for r in range(4):
            te[r, x] = ((word >> (8 * r)) | (word << (32 - 8 * r))) & 0xFFFFFFFF
    return te


_TE = _te_tables()
_TE0, _TE1, _TE2, _TE3 = (_TE[i].copy() for i in range(4))
_SB = np.array(SBOX, dtype=np.uint32)


@njit(cache=True, inline="always")
def _aes_words(rk, s0, s1, s2, s3):
    s0 ^= rk[0]
    s1 ^= rk[1]
    s2 ^= rk[2]
    s3 ^= rk[3]
    for r in range(1, 14):
        k = 4 * r
        t0 = _TE0[s0 >> 24] ^ _TE1[(s1 >> 16) & 0xFF] ^ _TE2[(s2 >> 8) & 0xFF] ^ _TE3[s3 & 0xFF] ^ rk[k]
        t1 = _TE0[s1 >> 24] ^ _TE1[(s2 >> 16) & 0xFF] ^ _TE2[(s3 >> 8) & 0xFF] ^ _TE3[s0 & 0xFF] ^ rk[k + 1]
        t2 = _TE0[s2 >> 24] ^ _TE1[(s3 >> 16) & 0xFF] ^ _TE2[(s0 >> 8) & 0xFF] ^ _TE3[s1 & 0xFF] ^ rk[k + 2]
        t3 = _TE0[s3 >> 24] ^ _TE1[(s0 >> 16) & 0xFF] ^ _TE2[(s1 >> 8) & 0xFF] ^ _TE3[s2 & 0xFF] ^ rk[k + 3]
        s0, s1, s2, s3 = t0, t1, t2, t3
    o0 = (_SB[s0 >> 24] << 24) | (_SB[(s1 >> 16) & 0xFF] << 16) | (_SB[(s2 >> 8) & 0xFF] << 8) | _SB[s3 & 0xFF]
    o1 = (_SB[s1 >> 24] << 24) | (_SB[(s2 >> 16) & 0xFF] << 16) | (_SB[(s3 >> 8) & 0xFF] << 8) | _SB[s0 & 0xFF]
    o2 = (_SB[s2 >> 24] << 24) | (_SB[(s3 >> 16) & 0xFF] << 16) | (_SB[(s0 >> 8) & 0xFF] << 8) | _SB[s1 & 0xFF]
    o3 = (_SB[s3 >> 24] << 24) | (_SB[(s0 >> 16) & 0xFF] << 16) | (_SB[(s1 >> 8) & 0xFF] << 8) | _SB[s2 & 0xFF]
    return o0 ^ rk[56], o1 ^ rk[57], o2 ^ rk[58], o3 ^ rk[59]


@njit(cache=True)
def _encrypt_kernel(rk, blocks, out):
    for i in range(blocks.shape[0]):
        o0, o1, o2, o3 = _aes_words(rk, blocks[i, 0], blocks[i, 1], blocks[i, 2], blocks[i, 3])
        out[i, 0] = o0
        out[i, 1] = o1
        out[i, 2] = o2
        out[i, 3] = o3


@njit(cache=True)
def _ctr_kernel(rk, n0, n1, n2, first, out):
    for i in range(out.shape[0]):
        ctr = np.uint32((first + i) & 0xFFFFFFFF)
        o0, o1, o2, o3 = _aes_words(rk, n0, n1, n2, ctr)
        out[i, 0] = o0
        out[i, 1] = o1
        out[i, 2] = o2
        out[i, 3] = o3


# --------------------------------------------------------------------------
# key schedule and block cipher

_RCON = (0x01, 0x02, 0x04, 0x08, 0x10, 0x20, 0x40)


@dataclass(frozen=True, repr=False)
class RoundKeys:
    """Expanded AES-256 schedule: 15 round keys as 60 big-endian words."""

    words: np.ndarray

    def round_key(self, r: int) -> bytes:
        return self.words[4 * r : 4 * r + 4].astype(">u4").tobytes()

    @property
    def expanded(self) -> list[bytes]:
        return [self.round_key(r) for r in range(ROUNDS + 1)]

    def __eq__(self, other: object) -> bool:
        return isinstance(other, RoundKeys) and np.array_equal(self.words, other.words)

    def __hash__(self) -> int:
        return hash(self.words.tobytes())

    def __repr__(self) -> str:
        return "RoundKeys(<redacted>)"


def _sub_word(w: int) -> int:
    return (SBOX[w >> 24] << 24) | (SBOX[(w >> 16) & 0xFF] << 16) | (SBOX[(w >> 8) & 0xFF] << 8) | SBOX[w & 0xFF]


def expand_key(key: Key256 | bytes) -> RoundKeys:
    raw = _key_bytes(key)
    w = [int.from_bytes(raw[4 * i : 4 * i + 4], "big") for i in range(8)]
    for i in range(8, 4 * (ROUNDS + 1)):
        t = w[i - 1]
        if i % 8 == 0:
            t = _sub_word(((t << 8) | (t >> 24)) & 0xFFFFFFFF) ^ (_RCON[i // 8 - 1] << 24)
        elif i % 8 == 4:
            t = _sub_word(t)
        w.append(w[i - 8] ^ t)
    words = np.array(w, dtype=np.uint32)
    words.flags.writeable = False
    return RoundKeys(words)


def _to_words(data: bytes) -> np.ndarray:
    return np.frombuffer(data, dtype=">u4").astype(np.uint32).reshape(-1, 4)


def encrypt_blocks(rk: RoundKeys, data: bytes) -> bytes:
    """ECB-encrypt a whole number of blocks (used for H and tag masks)."""
    if len(data) % BLOCK:
        raise ValueError("input must be a whole number of 16-byte blocks")
    blocks = _to_words(data)
    out = np.empty_like(blocks)
    _encrypt_kernel(rk.words, blocks, out)
    return out.astype(">u4").tobytes()


def encrypt_block(rk: RoundKeys, block: bytes) -> bytes:
    if len(block) != BLOCK:
        raise ValueError("block must be 16 bytes")
    return encrypt_blocks(rk, bytes(block))


def hash_subkey(rk: RoundKeys) -> bytes:
    return encrypt_block(rk, bytes(BLOCK))


# --------------------------------------------------------------------------
# CTR keystream


@dataclass(frozen=True)
class Keystream:
    """Precomputed pad blocks ``AES(k, nonce || first_counter + i)``."""

    blocks: bytes
    first_counter: int
    nonce: bytes

    @property
    def m(self) -> int:
        return len(self.blocks) // BLOCK

    def block(self, i: int) -> bytes:
        return self.blocks[BLOCK * i : BLOCK * (i + 1)]


def _ctr_pad(rk: RoundKeys, nonce: bytes, first: int, m: int) -> bytes:
    out = np.empty((m, 4), dtype=np.uint32)
    if m:
        n0, n1, n2 = (np.uint32(int.from_bytes(nonce[i : i + 4], "big")) for i in (0, 4, 8))
        _ctr_kernel(rk.words, n0, n1, n2, first, out)
    return out.astype(">u4").tobytes()


def keystream(rk: RoundKeys, nonce: Nonce96 | bytes, m: int, first_counter: int = 2) -> Keystream:
    """Generate ``m`` payload pad blocks. Touches no ciphertext."""
    if m < 0:
        raise ValueError("block count must be non-negative")
    raw = _nonce_bytes(nonce)
    return Keystream(_ctr_pad(rk, raw, first_counter, m), first_counter, raw)


def xor_bytes(a: bytes, b: bytes) -> bytes:
    n = len(a)
    if n == 0:
        return b""
    return np.bitwise_xor(np.frombuffer(a, np.uint8), np.frombuffer(b, np.uint8, count=n)).tobytes()


def xor_finalize(ks: Keystream, ct: bytes) -> bytes:
    """Second decryption phase: XOR ciphertext against a precomputed pad."""
    if len(ct) > len(ks.blocks):
        raise ValueError(f"ciphertext ({len(ct)} B) exceeds keystream coverage ({len(ks.blocks)} B)")
    return xor_bytes(bytes(ct), ks.blocks)


# --------------------------------------------------------------------------
# GHASH

_MASK64 = (1 << 64) - 1


@njit(cache=True)
def _ghash_kernel(h_hi, h_lo, words, y_hi, y_lo):
    # words: (lanes, m, 2) uint64; lanes are independent chains
    n = words.shape[0]
    m = words.shape[1]
    xh = np.empty(n, np.uint64)
    xl = np.empty(n, np.uint64)
    zh = np.empty(n, np.uint64)
    zl = np.empty(n, np.uint64)
    one = np.uint64(1)
    zero = np.uint64(0)
    poly = np.uint64(0xE100000000000000)
    for k in range(m):
        for c in range(n):
            xh[c] = y_hi[c] ^ words[c, k, 0]
            xl[c] = y_lo[c] ^ words[c, k, 1]
            zh[c] = zero
            zl[c] = zero
        vh = h_hi
        vl = h_lo
        for i in range(64):
            s = np.uint64(63 - i)
            for c in range(n):
                mask = zero - ((xh[c] >> s) & one)
                zh[c] ^= vh & mask
                zl[c] ^= vl & mask
            carry = zero - (vl & one)
            vl = (vl >> one) | (vh << np.uint64(63))
            vh = (vh >> one) ^ (poly & carry)
        for i in range(64):
            s = np.uint64(63 - i)
            for c in range(n):
                mask = zero - ((xl[c] >> s) & one)
                zh[c] ^= vh & mask
                zl[c] ^= vl & mask
            carry = zero - (vl & one)
            vl = (vl >> one) | (vh << np.uint64(63))
            vh = (vh >> one) ^ (poly & carry)
        for c in range(n):
            y_hi[c] = zh[c]
            y_lo[c] = zl[c]


def _pad16(data: bytes) -> bytes:
    r = len(data) % BLOCK
    return data + bytes(BLOCK - r) if r else data


def _ghash_input(aad: bytes, ct: bytes) -> bytes:
    lengths = (8 * len(aad)).to_bytes(8, "big") + (8 * len(ct)).to_bytes(8, "big")
    return _pad16(aad) + _pad16(ct) + lengths


def _run_lanes(h: bytes, streams: list[bytes]) -> list[bytes]:
    # leading zero blocks leave a zero accumulator unchanged, so ragged
    # chains are left-padded to a common length
    m = max(len(s) for s in streams) // BLOCK
    buf = bytearray(len(streams) * m * BLOCK)
    for i, s in enumerate(streams):
        end = (i + 1) * m * BLOCK
        buf[end - len(s) : end] = s
    words = np.frombuffer(bytes(buf), dtype=">u8").astype(np.uint64).reshape(len(streams), m, 2)
    y_hi = np.zeros(len(streams), np.uint64)
    y_lo = np.zeros(len(streams), np.uint64)
    hv = int.from_bytes(h, "big")
    _ghash_kernel(np.uint64(hv >> 64), np.uint64(hv & _MASK64), words, y_hi, y_lo)
    return [int(a).to_bytes(8, "big") + int(b).to_bytes(8, "big") for a, b in zip(y_hi, y_lo)]


def ghash(h: bytes, aad: bytes, ct: bytes) -> bytes:
    """GHASH over zero-padded AAD, zero-padded ciphertext and the length block."""
    if len(h) != BLOCK:
        raise ValueError("hash subkey must be 16 bytes")
    return _run_lanes(bytes(h), [_ghash_input(bytes(aad), bytes(ct))])[0]


def ghash_lanes(h: bytes, items: list[tuple[bytes, bytes]], lanes: int | None = None) -> list[bytes]:
    """GHASH many independent (aad, ct) chains, ``lanes`` at a time.

    Results come back in input order regardless of grouping.
    """
    if not items:
        return []
    width = len(items) if lanes is None else max(1, int(lanes))
    streams = [_ghash_input(bytes(a), bytes(c)) for a, c in items]
    out: list[bytes] = []
    for start in range(0, len(streams), width):
        out.extend(_run_lanes(bytes(h), streams[start : start + width]))
    return out


# --------------------------------------------------------------------------
# AEAD


class _Context:
    __slots__ = ("rk", "h")

    def __init__(self, raw: bytes) -> None:
        self.rk = expand_key(raw)
        self.h = hash_subkey(self.rk)


@functools.lru_cache(maxsize=128)
def _context(raw: bytes) -> _Context:
    return _Context(raw)


def context(key: Key256 | bytes) -> _Context:
    return _context(_key_bytes(key))


def tag_mask(rk: RoundKeys, nonce: Nonce96 | bytes) -> bytes:
    return encrypt_block(rk, _nonce_bytes(nonce) + b"\x00\x00\x00\x01")


def _blocks_for(n: int) -> int:
    return -(-n // BLOCK)


def seal(key: Key256 | bytes, nonce: Nonce96 | bytes, aad: bytes, pt: bytes) -> tuple[bytes, bytes]:
    ctx = context(key)
    raw = _nonce_bytes(nonce)
    ks = keystream(ctx.rk, raw, _blocks_for(len(pt)))
    ct = xor_bytes(bytes(pt), ks.blocks)
    tag = xor_bytes(ghash(ctx.h, aad, ct), tag_mask(ctx.rk, raw))
    return ct, tag


def verify_tag(key: Key256 | bytes, nonce: Nonce96 | bytes, aad: bytes, ct: bytes, tag: bytes) -> bool:
    """Authenticate only; constant-time comparison."""
    ctx = context(key)
    expected = xor_bytes(ghash(ctx.h, aad, ct), tag_mask(ctx.rk, nonce))
    return hmac.compare_digest(expected, bytes(tag))


def open(key: Key256 | bytes, nonce: Nonce96 | bytes, aad: bytes, ct: bytes, tag: bytes) -> bytes:  # noqa: A001
    if len(tag) != TAG_BYTES:
        raise AuthFailure("tag must be 16 bytes")
    if not verify_tag(key, nonce, aad, ct, tag):
        raise AuthFailure("tag mismatch")
    ctx = context(key)
    return xor_finalize(keystream(ctx.rk, nonce, _blocks_for(len(ct))), ct)
