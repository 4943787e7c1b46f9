"""Run metrics: stable CSV series plus a structured-record form that
carries the full audit log and round-trips losslessly.

CSV columns (documented, stable):
    time_s, link_id, sifted_bps, qber, secret_bps, reservoir_bits
``qber`` is empty for intervals without a completed block.

The structured-record form is JSON Lines; each line has a ``type`` field
(meta, series, block, relay, health, switch, audit, reservoir). Re-ingesting
the records reconstructs an equal report, and the ``verify`` entry point
re-checks the cross-module invariants from the records alone.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Tuple, Union

from .errors import InvariantViolation, ValidationError
from .keystore import AuditRecord, scan_one_time_use

CSV_COLUMNS = ("time_s", "link_id", "sifted_bps", "qber", "secret_bps", "reservoir_bits")


@dataclass(frozen=True)
class SeriesRow:
    time_s: float
    link_id: str
    sifted_bps: float
    qber: Optional[float]
    secret_bps: float
    reservoir_bits: int


@dataclass(frozen=True)
class BlockRecord:
    block_id: str
    channel_id: str
    t_start: float
    t_end: float
    sifted_bits: int
    qber: float
    bits_leaked: int
    secret_bits: int
    discarded: bool = False
    via_switch: Optional[str] = None


@dataclass(frozen=True)
class RelayOutcome:
    session_id: str
    src: str
    dst: str
    bits: int
    status: str
    path: Tuple[str, ...]
    requested_at: float
    delivered_at: Optional[float]
    regenerations: int
    failure_cause: str


@dataclass(frozen=True)
class SwitchEvent:
    time_s: float
    switch_id: str
    position: str


@dataclass
class MetricsReport:
    scenario_name: str
    seed: int
    duration_s: float
    series: List[SeriesRow] = field(default_factory=list)
    blocks: List[BlockRecord] = field(default_factory=list)
    relay_sessions: List[RelayOutcome] = field(default_factory=list)
    health_log: List[dict] = field(default_factory=list)
    switch_events: List[SwitchEvent] = field(default_factory=list)
    audit: List[AuditRecord] = field(default_factory=list)
    final_reservoirs: Dict[str, dict] = field(default_factory=dict)

    def validate(self) -> "MetricsReport":
        """Assert the report's structural invariants; raises on violation."""
        for row in self.series:
            if row.secret_bps < 0 or row.sifted_bps < 0:
                raise InvariantViolation(f"negative rate at t={row.time_s}")
            if row.qber is not None and not 0.0 <= row.qber <= 0.5:
                raise InvariantViolation(f"QBER {row.qber} outside [0, 0.5]")
            if not 0.0 <= row.time_s <= self.duration_s:
                raise InvariantViolation(f"series timestamp {row.time_s} "
                                         f"outside [0, {self.duration_s}]")
        return self

    # -- aggregation helpers -------------------------------------------------

    def channel_series(self, channel_id: str) -> List[SeriesRow]:
        return [r for r in self.series if r.link_id == channel_id]

    def mean_qber(self, channel_id: str) -> Optional[float]:
        qbers = [b.qber for b in self.blocks if b.channel_id == channel_id]
        return sum(qbers) / len(qbers) if qbers else None

    def secret_bits(self, channel_id: str) -> int:
        return sum(b.secret_bits for b in self.blocks if b.channel_id == channel_id)

    def sifted_bits(self, channel_id: str) -> int:
        return sum(b.sifted_bits for b in self.blocks if b.channel_id == channel_id)

    def secret_rate(self, channel_id: str) -> float:
        return self.secret_bits(channel_id) / self.duration_s

    # -- structured records ----------------------------------------------------

    def to_records(self) -> List[dict]:
        records: List[dict] = [{
            "type": "meta", "scenario_name": self.scenario_name,
            "seed": self.seed, "duration_s": self.duration_s,
        }]
        records += [{"type": "series", **asdict(r)} for r in self.series]
        records += [{"type": "block", **asdict(b)} for b in self.blocks]
        for r in self.relay_sessions:
            d = asdict(r)
            d["path"] = list(r.path)
            records.append({"type": "relay", **d})
        records += [{"type": "health", **h} for h in self.health_log]
        records += [{"type": "switch", **asdict(s)} for s in self.switch_events]
        records += [{"type": "audit", **a.to_dict()} for a in self.audit]
        for pair, snap in sorted(self.final_reservoirs.items()):
            records.append({"type": "reservoir", "pair": pair, **snap})
        return records

    @classmethod
    def from_records(cls, records: List[dict]) -> "MetricsReport":
        meta = next((r for r in records if r["type"] == "meta"), None)
        if meta is None:
            raise ValidationError("records stream has no meta record")
        report = cls(scenario_name=meta["scenario_name"], seed=meta["seed"],
                     duration_s=meta["duration_s"])
        for r in records:
            kind = r["type"]
            body = {k: v for k, v in r.items() if k != "type"}
            if kind == "series":
                report.series.append(SeriesRow(**body))
            elif kind == "block":
                report.blocks.append(BlockRecord(**body))
            elif kind == "relay":
                body["path"] = tuple(body["path"])
                report.relay_sessions.append(RelayOutcome(**body))
            elif kind == "health":
                report.health_log.append(body)
            elif kind == "switch":
                report.switch_events.append(SwitchEvent(**body))
            elif kind == "audit":
                report.audit.append(AuditRecord.from_dict(body))
            elif kind == "reservoir":
                pair = body.pop("pair")
                report.final_reservoirs[pair] = body
            elif kind != "meta":
                raise ValidationError(f"unknown record type {kind!r}")
        return report

    def __eq__(self, other) -> bool:
        return isinstance(other, MetricsReport) and self.to_records() == other.to_records()

    # -- file emission -----------------------------------------------------------

    def emit_csv(self) -> str:
        lines = [",".join(CSV_COLUMNS)]
        for r in self.series:
            qber = "" if r.qber is None else repr(r.qber)
            lines.append(f"{r.time_s!r},{r.link_id},{r.sifted_bps!r},{qber},"
                         f"{r.secret_bps!r},{r.reservoir_bits}")
        return "\n".join(lines) + "\n"

    def emit_records(self) -> str:
        return "\n".join(json.dumps(r, sort_keys=True) for r in self.to_records()) + "\n"

    def write(self, out_dir: Union[str, Path], fmt: str = "csv") -> List[Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        written = []
        if fmt == "csv":
            path = out / "metrics.csv"
            path.write_text(self.emit_csv())
            written.append(path)
        elif fmt == "records":
            path = out / "metrics.records.jsonl"
            path.write_text(self.emit_records())
            written.append(path)
        else:
            raise ValidationError(f"unknown output format {fmt!r}")
        return written


def read_records(path: Union[str, Path]) -> MetricsReport:
    lines = Path(path).read_text().splitlines()
    return MetricsReport.from_records([json.loads(line) for line in lines if line])


def verify_report(report: MetricsReport) -> List[str]:
    """Re-check audited invariants from the emitted records.

    Covers one-time-pad uniqueness, purpose separation, per-pair reservoir
    conservation, and key-block isolation across switch events.
    """
    problems = list(scan_one_time_use(report.audit))

    # Conservation per pair: deposits observed in the audit must equal
    # consumed + available in the final snapshot.
    deposited: Dict[str, int] = {}
    consumed: Dict[str, int] = {}
    for rec in report.audit:
        pair = "|".join(rec.pair)
        size = rec.offset_end - rec.offset_start
        if rec.kind == "deposit":
            deposited[pair] = deposited.get(pair, 0) + size
        elif rec.kind == "consume":
            consumed[pair] = consumed.get(pair, 0) + size
    for pair, snap in report.final_reservoirs.items():
        dep = deposited.get(pair, 0)
        con = consumed.get(pair, 0)
        if dep != snap["deposited"] or con != snap["consumed"] or \
                dep != con + snap["available"]:
            problems.append(f"pair {pair}: conservation mismatch "
                            f"(deposited {dep}, consumed {con}, "
                            f"available {snap['available']})")
    for pair in set(deposited) | set(consumed):
        if pair not in report.final_reservoirs:
            problems.append(f"pair {pair}: audit records but no final snapshot")

    # Purpose separation: authentication and one-time-pad draws disjoint.
    draws: Dict[str, List[Tuple[int, int, str]]] = {}
    for rec in report.audit:
        if rec.kind == "consume" and rec.purpose:
            draws.setdefault("|".join(rec.pair), []).append(
                (rec.offset_start, rec.offset_end, rec.purpose))
    for pair, ranges in draws.items():
        ranges.sort()
        for (s1, e1, p1), (s2, e2, p2) in zip(ranges, ranges[1:]):
            if s2 < e1 and p1 != p2:
                problems.append(f"pair {pair}: {p1} and {p2} draws overlap at {s2}")

    # Key isolation: no block spans a reconfiguration of its own switch.
    toggles = [(s.time_s, s.switch_id) for s in report.switch_events]
    for block in report.blocks:
        if block.via_switch is None:
            continue
        for t, sid in toggles:
            if sid == block.via_switch and block.t_start < t < block.t_end:
                problems.append(
                    f"block {block.block_id}: spans switch event at t={t}")
    return problems
