"""Reader and replayer for NIST CAVP GCM ``.rsp`` files.

Records look like::

    [Keylen = 256]
    [IVlen = 96]
    ...
    Count = 0
    Key = ...
    IV = ...
    PT = ...
    AAD = ...
    CT = ...
    Tag = ...
    FAIL            (decrypt files only: the tag must be rejected)

Comments (``#``) and blank lines are ignored. Only AES-256 with 96-bit IVs and
128-bit tags is in scope; other sections are parsed and reported as skipped.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator

from . import gcm

_SECTION = re.compile(r"^\[\s*(\w+)\s*=\s*(\d+)\s*\]$")
_FIELD = re.compile(r"^(\w+)\s*=\s*([0-9a-fA-F]*)\s*$")
_FIELDS = {"key": "key", "iv": "iv", "pt": "pt", "aad": "aad", "ct": "ct", "tag": "tag"}


class VectorParseError(ValueError):
    def __init__(self, line: int, message: str) -> None:
        super().__init__(f"line {line}: {message}")
        self.line = line


@dataclass
class GcmVector:
    line: int
    count: int
    params: dict[str, int]
    key: bytes = b""
    iv: bytes = b""
    pt: bytes | None = None
    aad: bytes = b""
    ct: bytes = b""
    tag: bytes = b""
    fail: bool = False
    field_lines: dict[str, int] = field(default_factory=dict)

    @property
    def in_scope(self) -> bool:
        p = self.params
        return (
            p.get("Keylen", 8 * len(self.key)) == 256
            and p.get("IVlen", 8 * len(self.iv)) == 96
            and p.get("Taglen", 8 * len(self.tag)) == 128
            and len(self.key) == 32
            and len(self.iv) == 12
            and len(self.tag) == 16
        )


def parse_vectors(lines: Iterable[str]) -> Iterator[GcmVector]:
    params: dict[str, int] = {}
    current: GcmVector | None = None
    for lineno, raw in enumerate(lines, start=1):
        text = raw.strip()
        if not text or text.startswith("#"):
            continue
        m = _SECTION.match(text)
        if m:
            if current is not None:
                yield current
                current = None
            name, value = m.group(1), int(m.group(2))
            if name == "Keylen":
                params = {}
            params = {**params, name: value}
            continue
        if text.upper() == "FAIL":
            if current is None:
                raise VectorParseError(lineno, "FAIL outside a record")
            current.fail = True
            continue
        m = _FIELD.match(text)
        if not m:
            raise VectorParseError(lineno, f"unrecognised line {text!r}")
        name, value = m.group(1).lower(), m.group(2)
        if name == "count":
            if current is not None:
                yield current
            current = GcmVector(line=lineno, count=int(value or 0), params=dict(params))
            continue
        if current is None:
            raise VectorParseError(lineno, f"field {name!r} before Count")
        if name not in _FIELDS:
            raise VectorParseError(lineno, f"unknown field {name!r}")
        if len(value) % 2:
            raise VectorParseError(lineno, "odd-length hex")
        setattr(current, _FIELDS[name], bytes.fromhex(value))
        current.field_lines[name] = lineno
    if current is not None:
        yield current


def load_vectors(path: str | Path) -> list[GcmVector]:
    with Path(path).open() as fh:
        return list(parse_vectors(fh))


@dataclass
class VectorFailure:
    line: int
    count: int
    reason: str


@dataclass
class VectorReport:
    source: str
    total: int = 0
    passed: int = 0
    skipped: int = 0
    rejected_as_expected: int = 0
    failures: list[VectorFailure] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.failures


def check_vector(v: GcmVector) -> str | None:
    """Replay one in-scope vector; return a failure reason or None."""
    if v.fail:
        try:
            gcm.open(v.key, v.iv, v.aad, v.ct, v.tag)
        except gcm.AuthFailure:
            return None
        return "FAIL record was accepted"
    if v.pt is None:
        return "record has neither PT nor FAIL"
    ct, tag = gcm.seal(v.key, v.iv, v.aad, v.pt)
    if ct != v.ct:
        return "ciphertext mismatch"
    if tag != v.tag:
        return "tag mismatch"
    try:
        pt = gcm.open(v.key, v.iv, v.aad, v.ct, v.tag)
    except gcm.AuthFailure:
        return "valid record rejected"
    if pt != v.pt:
        return "plaintext mismatch"
    return None


def replay(vectors: Iterable[GcmVector], source: str = "<memory>") -> VectorReport:
    report = VectorReport(source)
    for v in vectors:
        if not v.in_scope:
            report.skipped += 1
            continue
        report.total += 1
        reason = check_vector(v)
        if reason is None:
            report.passed += 1
            report.rejected_as_expected += v.fail
        else:
            # name the line most likely at fault
            line = v.field_lines.get("tag" if "tag" in reason or v.fail else "ct", v.line)
            report.failures.append(VectorFailure(line, v.count, reason))
    if report.total == 0:
        report.warnings.append("no in-scope vectors found")
    return report


def replay_file(path: str | Path) -> VectorReport:
    return replay(load_vectors(path), str(path))
