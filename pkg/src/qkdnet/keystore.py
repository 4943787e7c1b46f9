"""Pairwise key reservoirs with strict one-time-use accounting.

A reservoir holds the ordered key segments a pair of nodes shares. The
simulation materializes each pair's mutually held key once (both sides are
bit-identical by construction), so a consume draw models both peers taking
the same bits for the same purpose. Consumption is strictly FIFO by
segment then offset, which is what lets the two real endpoints stay in
lockstep without negotiation. Every deposit, draw, and write-off lands in
an audit log keyed by global bit offsets, so post-run tooling can prove no
bit was ever used twice.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Dict, List, Optional, Tuple

import numpy as np

from .errors import AuthenticationStarvation, DuplicateSegmentError, InvariantViolation, KeyStarvation


class KeyOrigin(Enum):
    DIRECT_QKD = "direct_qkd"
    RELAY = "relay"
    PREPOSITIONED = "prepositioned"


class ConsumePurpose(Enum):
    ONE_TIME_PAD = "one_time_pad"
    AUTHENTICATION = "authentication"
    DELIVERY = "delivery"


def pair_key(a: str, b: str) -> Tuple[str, str]:
    if a == b:
        raise ValueError("a key pair joins two distinct nodes")
    return (a, b) if a < b else (b, a)


@dataclass
class AuditRecord:
    time_s: float
    pair: Tuple[str, str]
    kind: str                      # deposit | consume | write_off
    offset_start: int
    offset_end: int                # exclusive
    purpose: Optional[str] = None
    origin: Optional[str] = None
    segment_id: Optional[str] = None
    consumer: str = ""

    def to_dict(self) -> dict:
        return {
            "time_s": self.time_s, "pair": list(self.pair), "kind": self.kind,
            "offset_start": self.offset_start, "offset_end": self.offset_end,
            "purpose": self.purpose, "origin": self.origin,
            "segment_id": self.segment_id, "consumer": self.consumer,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "AuditRecord":
        return cls(time_s=d["time_s"], pair=tuple(d["pair"]), kind=d["kind"],
                   offset_start=d["offset_start"], offset_end=d["offset_end"],
                   purpose=d.get("purpose"), origin=d.get("origin"),
                   segment_id=d.get("segment_id"), consumer=d.get("consumer", ""))


@dataclass
class _Segment:
    segment_id: str
    bits: np.ndarray
    origin: KeyOrigin
    consumed_prefix: int = 0
    global_start: int = 0


class KeyReservoir:
    """Key material shared by one pair, consumed FIFO and exactly once."""

    def __init__(self, a: str, b: str, audit: Optional[List[AuditRecord]] = None):
        self.pair = pair_key(a, b)
        self.segments: List[_Segment] = []
        self.audit: List[AuditRecord] = audit if audit is not None else []
        self._deposited = 0
        self._consumed = 0
        self._head = 0  # index of the first segment with unconsumed bits

    @property
    def available(self) -> int:
        return self._deposited - self._consumed

    @property
    def deposited(self) -> int:
        return self._deposited

    @property
    def consumed(self) -> int:
        return self._consumed

    def deposit(self, segment_id: str, bits: np.ndarray, origin: KeyOrigin,
                time_s: float = 0.0) -> None:
        """Append a fresh segment; duplicate segment ids are replayed deposits."""
        if any(s.segment_id == segment_id for s in self.segments):
            raise DuplicateSegmentError(
                f"segment {segment_id!r} already deposited for pair {self.pair}")
        bits = np.asarray(bits, dtype=np.uint8)
        seg = _Segment(segment_id, bits, origin, global_start=self._deposited)
        self.segments.append(seg)
        self._deposited += bits.size
        self.audit.append(AuditRecord(
            time_s=time_s, pair=self.pair, kind="deposit",
            offset_start=seg.global_start, offset_end=seg.global_start + bits.size,
            origin=origin.value, segment_id=segment_id))
        self._check_conservation()

    def consume(self, n_bits: int, purpose: ConsumePurpose, time_s: float = 0.0,
                consumer: str = "") -> np.ndarray:
        """Return the next ``n_bits`` in FIFO order and mark them used.

        Both peers issuing the same request sequence receive identical
        streams. Raises a starvation error (flow control, not fatal) when
        the reservoir cannot cover the request.
        """
        if n_bits < 0:
            raise ValueError("n_bits must be non-negative")
        if n_bits == 0:
            return np.zeros(0, dtype=np.uint8)
        if n_bits > self.available:
            exc = AuthenticationStarvation if purpose is ConsumePurpose.AUTHENTICATION \
                else KeyStarvation
            raise exc(
                f"pair {self.pair}: need {n_bits} bits for {purpose.value}, "
                f"have {self.available}")
        offset_start = self._consumed
        parts = []
        remaining = n_bits
        while remaining > 0:
            seg = self.segments[self._head]
            take = min(remaining, seg.bits.size - seg.consumed_prefix)
            parts.append(seg.bits[seg.consumed_prefix:seg.consumed_prefix + take])
            seg.consumed_prefix += take
            remaining -= take
            if seg.consumed_prefix == seg.bits.size:
                self._head += 1
        self._consumed += n_bits
        self.audit.append(AuditRecord(
            time_s=time_s, pair=self.pair, kind="consume",
            offset_start=offset_start, offset_end=offset_start + n_bits,
            purpose=purpose.value, consumer=consumer))
        self._check_conservation()
        return np.concatenate(parts)

    def write_off(self, offset_start: int, offset_end: int, time_s: float = 0.0,
                  reason: str = "") -> None:
        """Log that already-consumed bits were abandoned, never to be reused."""
        if offset_end > self._consumed:
            raise InvariantViolation("cannot write off bits that were never consumed")
        self.audit.append(AuditRecord(
            time_s=time_s, pair=self.pair, kind="write_off",
            offset_start=offset_start, offset_end=offset_end, consumer=reason))

    def peek(self, offset_start: int, n_bits: int) -> np.ndarray:
        """Read bits by global offset without consuming (verification only).

        Simulation-side tooling uses this to check one-time-pad algebra
        against the audit log; real endpoints have no such facility.
        """
        if offset_start + n_bits > self._deposited:
            raise ValueError("peek range beyond deposited key")
        out = np.empty(n_bits, dtype=np.uint8)
        filled = 0
        for seg in self.segments:
            lo = max(offset_start, seg.global_start)
            hi = min(offset_start + n_bits, seg.global_start + seg.bits.size)
            if lo < hi:
                out[lo - offset_start:hi - offset_start] = \
                    seg.bits[lo - seg.global_start:hi - seg.global_start]
                filled += hi - lo
        if filled != n_bits:
            raise ValueError("peek range not fully covered")
        return out

    def _check_conservation(self):
        if self._deposited != self._consumed + self.available:
            raise InvariantViolation(
                f"pair {self.pair}: deposited != consumed + available")


class KeyStore:
    """All reservoirs of one simulation, sharing a single audit log."""

    def __init__(self):
        self.reservoirs: Dict[Tuple[str, str], KeyReservoir] = {}
        self.audit: List[AuditRecord] = []

    def reservoir(self, a: str, b: str) -> KeyReservoir:
        key = pair_key(a, b)
        if key not in self.reservoirs:
            self.reservoirs[key] = KeyReservoir(*key, audit=self.audit)
        return self.reservoirs[key]

    def available(self, a: str, b: str) -> int:
        key = pair_key(a, b)
        if key not in self.reservoirs:
            return 0
        return self.reservoirs[key].available

    def pairs(self) -> List[Tuple[str, str]]:
        return sorted(self.reservoirs)


def scan_one_time_use(audit: List[AuditRecord]) -> List[str]:
    """Audit-scan for double-spend: consume ranges must be disjoint per pair.

    Returns a list of human-readable violations (empty when clean). Also
    checks that authentication and one-time-pad draws never share offsets,
    which FIFO consumption guarantees structurally.
    """
    problems = []
    by_pair: Dict[Tuple[str, str], List[AuditRecord]] = {}
    for rec in audit:
        if rec.kind == "consume":
            by_pair.setdefault(rec.pair, []).append(rec)
    for pair, records in sorted(by_pair.items()):
        records = sorted(records, key=lambda r: (r.offset_start, r.offset_end))
        prev_end = -1
        for rec in records:
            if rec.offset_start < prev_end:
                problems.append(
                    f"pair {pair}: consume ranges overlap at offset {rec.offset_start}")
            prev_end = max(prev_end, rec.offset_end)
    return problems
