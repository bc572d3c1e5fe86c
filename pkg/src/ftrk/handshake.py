"""Diffie-Hellman session setup between user, host proxy and accelerator.

Every handshake message travels in a HELLO/REPLY frame. Keys are derived with
HKDF-SHA256, salted by a hash of the whole transcript and labelled with the
role pair, so one pair of keypairs yields unrelated keys for different pairs
and for different sessions.
"""

from __future__ import annotations

import hashlib
import os
import random
import secrets
import struct
from dataclasses import dataclass, field
from enum import Enum, IntEnum
from typing import Protocol

from cryptography.hazmat.primitives import hashes
from cryptography.hazmat.primitives.kdf.hkdf import HKDF

from . import gcm
from .chain import CHUNK_STRIDE, ChainPolicy, ChainRecord, ChainedEnvelope, seal_multichain
from .frame import Frame, MsgType, decode_frame, encode_frame
from .gcm import Key256, Nonce96


class HandshakeError(Exception):
    pass


class InvalidElement(HandshakeError):
    pass


class InvalidScalar(HandshakeError):
    pass


class HandshakeTimeout(HandshakeError):
    pass


class NonceReuse(RuntimeError):
    """A send counter went backwards. Always a programming error."""


class ModeError(RuntimeError):
    pass


# --------------------------------------------------------------------------
# groups


@dataclass(frozen=True)
class DhGroup:
    name: str
    gid: int
    p: int
    g: int
    q: int  # order of g

    @property
    def element_bytes(self) -> int:
        return (self.p.bit_length() + 7) // 8

    def encode(self, y: int) -> bytes:
        return y.to_bytes(self.element_bytes, "big")

    def decode(self, raw: bytes) -> int:
        if len(raw) != self.element_bytes:
            raise InvalidElement(f"{self.name}: element must be {self.element_bytes} bytes")
        return int.from_bytes(raw, "big")

    def validate(self, y: int) -> int:
        if not 2 <= y <= self.p - 2:
            raise InvalidElement(f"{self.name}: element outside [2, p-2]")
        if pow(y, self.q, self.p) != 1:
            raise InvalidElement(f"{self.name}: element not in the generator's subgroup")
        return y


# RFC 3526 group 14; p is a safe prime and g = 2 generates the subgroup of order (p-1)/2
_MODP_2048_P = int(
    "FFFFFFFFFFFFFFFFC90FDAA22168C234C4C6628B80DC1CD129024E088A67CC74020BBEA63B139B22514A08798E3404DD"
    "EF9519B3CD3A431B302B0A6DF25F14374FE1356D6D51C245E485B576625E7EC6F44C42E9A637ED6B0BFF5CB6F406B7ED"
    "EE386BFB5A899FA5AE9F24117C4B1FE649286651ECE45B3DC2007CB8A163BF0598DA48361C55D39A69163FA8FD24CF5F"
    "83655D23DCA3AD961C62F356208552BB9ED529077096966D670C354E4ABC9804F1746C08CA18217C32905E462E36CE3B"
    "E39E772C180E86039B2783A2EC07A28FB5C55DF06F4C52C9DE2BCBF6955817183995497CEA956AE515D2261898FA0510"
    "15728E5A8AACAA68FFFFFFFFFFFFFFFF",
    16,
)
MODP_2048 = DhGroup("modp2048", 14, _MODP_2048_P, 2, (_MODP_2048_P - 1) // 2)
TOY_GROUP = DhGroup("toy23", 0xF0, 23, 5, 22)
GROUPS = {g.gid: g for g in (MODP_2048, TOY_GROUP)}


class Rng(Protocol):
    def randrange(self, start: int, stop: int) -> int: ...

    def randbytes(self, n: int) -> bytes: ...


class _SystemRng(secrets.SystemRandom):
    def randbytes(self, n: int) -> bytes:
        return os.urandom(n)


def make_rng(seed: int | str | None = None) -> Rng:
    """Deterministic when seeded (argument or FTRK_SEED), otherwise OS entropy."""
    if seed is None:
        seed = os.environ.get("FTRK_SEED")
    if seed is None or seed == "":
        return _SystemRng()
    return random.Random(str(seed))


# --------------------------------------------------------------------------
# roles


class Role(IntEnum):
    USER = 1
    PROXY = 2
    ACCELERATOR = 3


class RolePair(Enum):
    USER_PROXY = (1, Role.USER, Role.PROXY)
    USER_ACCEL = (2, Role.USER, Role.ACCELERATOR)
    PROXY_ACCEL = (3, Role.PROXY, Role.ACCELERATOR)

    @property
    def code(self) -> int:
        return self.value[0]

    @property
    def roles(self) -> tuple[Role, Role]:
        return self.value[1], self.value[2]

    @property
    def label(self) -> bytes:
        return self.name.lower().encode()

    def peer_of(self, role: Role) -> Role:
        a, b = self.roles
        if role not in (a, b):
            raise ValueError(f"{role.name} is not part of {self.name}")
        return b if role == a else a

    @classmethod
    def between(cls, a: Role, b: Role) -> "RolePair":
        for pair in cls:
            if set(pair.roles) == {a, b}:
                return pair
        raise ValueError(f"no session defined between {a.name} and {b.name}")


def direction_id(pair: RolePair, sender: Role) -> bytes:
    return bytes([pair.code, int(sender), int(pair.peer_of(sender)), 0])


# --------------------------------------------------------------------------
# keypairs and sessions


@dataclass(frozen=True, repr=False)
class KeyPair:
    private_scalar: int
    public_element: int
    group: DhGroup

    def __repr__(self) -> str:
        return f"KeyPair(group={self.group.name}, public={self.public_element:#x})"


def keypair_from_scalar(x: int, group: DhGroup = MODP_2048) -> KeyPair:
    if x % group.q in (0, 1):
        raise InvalidScalar("degenerate private scalar")
    return KeyPair(x, pow(group.g, x, group.p), group)


def generate_keypair(rng: Rng | None = None, group: DhGroup = MODP_2048) -> KeyPair:
    rng = rng or make_rng()
    while True:
        x = rng.randrange(2, group.q)
        try:
            return keypair_from_scalar(x, group)
        except InvalidScalar:
            continue


@dataclass(frozen=True)
class HandshakeTranscript:
    role_a: Role
    role_b: Role
    public_a: bytes
    public_b: bytes
    attestation_stub: bytes = b""
    session_nonce: bytes = b""

    def digest(self) -> bytes:
        h = hashlib.sha256(b"ftrk-handshake-v1")
        for part in (bytes([self.role_a, self.role_b]), self.public_a, self.public_b,
                     self.attestation_stub, self.session_nonce):
            h.update(struct.pack(">I", len(part)))
            h.update(part)
        return h.digest()


@dataclass(repr=False)
class SessionKey:
    """One endpoint's view of a pairwise session: a shared key plus its send counter."""

    key: Key256
    role_pair: RolePair
    owner: Role
    session_id: bytes
    send_counter: int = 0
    # highest batch_id accepted from the peer so far
    recv_last: int = -1
    _high_water: int = field(default=-1, compare=False)

    @property
    def direction_id(self) -> bytes:
        return direction_id(self.role_pair, self.owner)

    @property
    def peer_direction_id(self) -> bytes:
        return direction_id(self.role_pair, self.role_pair.peer_of(self.owner))

    def next_sequence(self) -> int:
        seq = self.send_counter
        if seq <= self._high_water:
            raise NonceReuse(f"{self.role_pair.name}: counter {seq} already used")
        self._high_water = seq
        self.send_counter = seq + 1
        return seq

    def seal(self, aad: bytes, pt: bytes) -> tuple[Nonce96, bytes, bytes]:
        nonce = message_nonce(self.direction_id, self.next_sequence())
        ct, tag = gcm.seal(self.key, nonce, aad, pt)
        return nonce, ct, tag

    def seal_multichain(self, pt: bytes, policy: ChainPolicy) -> tuple[int, ChainedEnvelope]:
        seq = self.next_sequence()
        return seq, seal_multichain(self.key, message_nonce(self.direction_id, seq), pt, policy)

    def __repr__(self) -> str:
        return f"SessionKey({self.role_pair.name}, owner={self.owner.name}, counter={self.send_counter})"


def message_nonce(direction: bytes, seq: int) -> Nonce96:
    return Nonce96(direction, seq * CHUNK_STRIDE)


def _shared_secret(my: KeyPair, peer_public: int) -> bytes:
    group = my.group
    group.validate(peer_public)
    z = pow(peer_public, my.private_scalar, group.p)
    if z in (0, 1, group.p - 1):
        raise InvalidElement("degenerate shared secret")
    return group.encode(z)


def derive_key(my: KeyPair, peer_public: int, role_pair: RolePair, transcript: HandshakeTranscript) -> Key256:
    okm = HKDF(
        algorithm=hashes.SHA256(),
        length=32,
        salt=transcript.digest(),
        info=b"ftrk/v1 session " + role_pair.label,
    ).derive(_shared_secret(my, peer_public))
    return Key256(okm)


def derive_session_key(my: KeyPair, peer_public: int, role_pair: RolePair, owner: Role,
                       transcript: HandshakeTranscript) -> SessionKey:
    if owner not in role_pair.roles:
        raise ValueError(f"{owner.name} is not part of {role_pair.name}")
    key = derive_key(my, peer_public, role_pair, transcript)
    return SessionKey(key, role_pair, owner, transcript.digest()[:8])


# --------------------------------------------------------------------------
# message exchange


@dataclass
class HandshakeParty:
    role: Role
    attestation: bytes = b""
    reachable: bool = True


def _pack(group: DhGroup, public: int, attestation: bytes, session_nonce: bytes = b"") -> bytes:
    elem = group.encode(public)
    return (bytes([group.gid]) + struct.pack(">H", len(elem)) + elem
            + struct.pack(">H", len(attestation)) + attestation + session_nonce)


def _unpack(payload: bytes) -> tuple[DhGroup, bytes, bytes, bytes]:
    try:
        group = GROUPS[payload[0]]
        (elen,) = struct.unpack_from(">H", payload, 1)
        elem = payload[3 : 3 + elen]
        (alen,) = struct.unpack_from(">H", payload, 3 + elen)
        att = payload[5 + elen : 5 + elen + alen]
        rest = payload[5 + elen + alen :]
    except (IndexError, KeyError, struct.error):
        raise InvalidElement("malformed handshake payload") from None
    if len(elem) != elen or len(att) != alen:
        raise InvalidElement("malformed handshake payload")
    return group, elem, att, rest


def _hs_frame(kind: MsgType, payload: bytes) -> bytes:
    # handshake payloads are public; the tag slot carries zeros
    rec = ChainRecord(0, payload, bytes(16))
    return encode_frame(Frame(kind, bytes(8), 0, (rec,), len(payload)))


def _hs_payload(raw: bytes, kind: MsgType) -> bytes:
    f = decode_frame(raw)
    if f.msg_type != kind or f.n_chains != 1:
        raise InvalidElement(f"expected {kind.name} frame")
    return f.records[0].ct


@dataclass
class PairResult:
    initiator: SessionKey
    responder: SessionKey
    transcript: HandshakeTranscript
    wire: list[bytes]


def establish_pair(a: HandshakeParty, b: HandshakeParty, rng: Rng | None = None, group: DhGroup = MODP_2048,
                   relay: list[bytes] | None = None, initiator_keys: KeyPair | None = None,
                   responder_keys: KeyPair | None = None) -> PairResult:
    """Run HELLO/REPLY between two parties. ``relay`` collects every byte a forwarder saw."""
    rng = rng or make_rng()
    pair = RolePair.between(a.role, b.role)
    for party in (a, b):
        if not party.reachable:
            raise HandshakeTimeout(f"{party.role.name} did not answer")
    kp_a = initiator_keys or generate_keypair(rng, group)
    kp_b = responder_keys or generate_keypair(rng, group)

    hello = _hs_frame(MsgType.HELLO, _pack(group, kp_a.public_element, a.attestation))
    # responder side
    g_b, elem_a, att_a, _ = _unpack(_hs_payload(hello, MsgType.HELLO))
    if g_b != kp_b.group:
        raise InvalidElement("group mismatch")
    pub_a = group.validate(g_b.decode(elem_a))
    session_nonce = rng.randbytes(16)
    reply = _hs_frame(MsgType.REPLY, _pack(group, kp_b.public_element, b.attestation, session_nonce))
    transcript = HandshakeTranscript(a.role, b.role, elem_a, group.encode(kp_b.public_element),
                                     att_a + b.attestation, session_nonce)
    key_b = derive_session_key(kp_b, pub_a, pair, b.role, transcript)
    # initiator side
    _, elem_b, att_b, nonce_b = _unpack(_hs_payload(reply, MsgType.REPLY))
    pub_b = group.validate(group.decode(elem_b))
    seen = HandshakeTranscript(a.role, b.role, group.encode(kp_a.public_element), elem_b,
                               a.attestation + att_b, nonce_b)
    key_a = derive_session_key(kp_a, pub_b, pair, a.role, seen)
    if relay is not None:
        relay += [hello, reply]
    return PairResult(key_a, key_b, transcript, [hello, reply])


@dataclass
class KeyRing:
    role: Role
    sessions: dict[RolePair, SessionKey] = field(default_factory=dict)

    def get(self, pair: RolePair) -> SessionKey:
        try:
            return self.sessions[pair]
        except KeyError:
            raise ModeError(f"{self.role.name} holds no {pair.name} session") from None

    def __contains__(self, pair: RolePair) -> bool:
        return pair in self.sessions


@dataclass
class ThreePartySetup:
    mode: str
    rings: dict[Role, KeyRing]
    transcripts: dict[RolePair, HandshakeTranscript]
    proxy_relayed: list[bytes]


def establish_three_party(user: HandshakeParty, proxy: HandshakeParty, accel: HandshakeParty,
                          mode: str = "direct", rng: Rng | None = None,
                          group: DhGroup = MODP_2048) -> ThreePartySetup:
    """Baseline mode builds user-proxy and proxy-accel; direct mode adds user-accel via the proxy."""
    if mode not in ("baseline", "direct"):
        raise ValueError(f"unknown mode {mode!r}")
    rng = rng or make_rng()
    rings = {r: KeyRing(r) for r in Role}
    transcripts = {}
    relayed: list[bytes] = []
    links = [(user, proxy, None), (proxy, accel, None)]
    if mode == "direct":
        links.append((user, accel, relayed))
    for a, b, relay in links:
        res = establish_pair(a, b, rng, group, relay=relay)
        pair = RolePair.between(a.role, b.role)
        rings[a.role].sessions[pair] = res.initiator
        rings[b.role].sessions[pair] = res.responder
        transcripts[pair] = res.transcript
    return ThreePartySetup(mode, rings, transcripts, relayed)
