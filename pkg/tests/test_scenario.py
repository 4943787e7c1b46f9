"""Scenario schema, engine behavior, reports, and the CLI surface."""

import json

import numpy as np
import pytest

from qkdnet.cli import main
from qkdnet.engine import run_scenario
from qkdnet.errors import ValidationError
from qkdnet.physlink import sifted_error_floor
from qkdnet.report import CSV_COLUMNS, MetricsReport, read_records, verify_report
from qkdnet.scenario import EngineKnobs, default_preset_scenario, load_scenario


def _minimal(duration=1.0, events=(), **engine):
    doc = {"version": 1, "name": "t", "topology": {"preset": "cambridge"},
           "duration_s": duration, "seed": 1, "events": list(events)}
    if engine:
        doc["engine"] = engine
    return doc


def test_scenario_requires_core_keys():
    with pytest.raises(ValidationError, match="duration_s"):
        load_scenario({"version": 1, "topology": {"preset": "cambridge"}, "seed": 1})


def test_scenario_rejects_unknown_keys_and_events():
    doc = _minimal()
    doc["extra"] = True
    with pytest.raises(ValidationError, match="extra"):
        load_scenario(doc)
    with pytest.raises(ValidationError, match="kind"):
        load_scenario(_minimal(events=[{"t": 0.0, "kind": "explode"}]))
    with pytest.raises(ValidationError, match="exactly"):
        load_scenario(_minimal(events=[{"t": 0.0, "kind": "cut_link"}]))


def test_scenario_event_ordering_enforced():
    events = [{"t": 5.0, "kind": "cut_link", "link": "anna-sw"},
              {"t": 1.0, "kind": "restore_link", "link": "anna-sw"}]
    with pytest.raises(ValidationError, match="time-ordered"):
        load_scenario(_minimal(duration=10.0, events=events))


def test_scenario_validates_references():
    with pytest.raises(ValidationError, match="no QKD channel"):
        load_scenario(_minimal(events=[
            {"t": 0.0, "kind": "start_qkd", "tx": "Anna", "rx": "Boris2"}]))
    with pytest.raises(ValidationError, match="unknown link"):
        load_scenario(_minimal(events=[{"t": 0.0, "kind": "cut_link", "link": "zap"}]))


def test_engine_knob_validation():
    with pytest.raises(ValidationError):
        EngineKnobs(sample_fraction=1.5)
    with pytest.raises(ValidationError, match="unknown keys"):
        load_scenario(_minimal(warp_speed=9))


def test_empty_scenario_produces_empty_report():
    report = run_scenario(load_scenario(_minimal(duration=1.0)))
    assert report.series == []
    assert report.blocks == []
    assert report.relay_sessions == []
    csv = report.emit_csv()
    assert csv == ",".join(CSV_COLUMNS) + "\n"


def test_short_run_emits_series_and_csv_rows():
    sc = load_scenario(_minimal(duration=60.0, events=[
        {"t": 0.0, "kind": "start_qkd", "tx": "Anna", "rx": "Bob"}]))
    report = run_scenario(sc)
    rows = report.channel_series("Anna-Bob")
    assert rows, "expected per-interval series rows"
    assert any(r.secret_bps > 0 for r in rows)
    # Mean block error rate sits near the link's error floor.
    topo = sc.topology
    floor = sifted_error_floor(topo.channel_params(topo.channel_by_id("Anna-Bob")))
    assert abs(report.mean_qber("Anna-Bob") - floor) < 0.015
    lines = report.emit_csv().splitlines()
    assert len(lines) == 1 + len(report.series)
    assert all(len(line.split(",")) == len(CSV_COLUMNS) for line in lines)


def test_records_round_trip_and_verify():
    sc = load_scenario(_minimal(duration=30.0, events=[
        {"t": 0.0, "kind": "start_qkd", "tx": "Anna", "rx": "Bob"},
        {"t": 10.0, "kind": "relay_request", "src": "Anna", "dst": "Bob", "bits": 512}]))
    report = run_scenario(sc)
    records = [json.loads(line) for line in report.emit_records().splitlines()]
    rebuilt = MetricsReport.from_records(records)
    assert rebuilt == report
    assert rebuilt.emit_records() == report.emit_records()
    assert verify_report(rebuilt) == []


def test_set_sifting_switches_protocol():
    sc = load_scenario(_minimal(duration=120.0, events=[
        {"t": 0.0, "kind": "start_qkd", "tx": "Anna", "rx": "Bob"},
        {"t": 60.0, "kind": "set_sifting", "channel": "Anna-Bob", "protocol": "sarg"}]))
    report = run_scenario(sc)
    early = [r.sifted_bps for r in report.channel_series("Anna-Bob")
             if 20 <= r.time_s <= 55 and r.sifted_bps > 0]
    late = [r.sifted_bps for r in report.channel_series("Anna-Bob")
            if 70 <= r.time_s <= 115 and r.sifted_bps > 0]
    # SARG keeps ~1/4 of detections vs ~1/2 for traditional sifting.
    assert np.mean(late) < 0.65 * np.mean(early)
    assert report.secret_bits("Anna-Bob") > 0


def test_cut_and_restore_recovers_health():
    sc = load_scenario(_minimal(duration=120.0, events=[
        {"t": 0.0, "kind": "start_qkd", "tx": "Anna", "rx": "Bob"},
        {"t": 30.0, "kind": "cut_link", "link": "anna-sw"},
        {"t": 60.0, "kind": "restore_link", "link": "anna-sw"}]))
    report = run_scenario(sc)
    states = [(h["time_s"], h["new"]) for h in report.health_log
              if h["channel_id"] == "Anna-Bob"]
    assert any(new == "cut" for _, new in states)
    assert states[-1][1] == "up"
    late_secret = [r.secret_bps for r in report.channel_series("Anna-Bob")
                   if r.time_s > 80]
    assert sum(late_secret) > 0  # generation resumed after restore


def test_eve_none_disables_attacker():
    sc = load_scenario(_minimal(duration=90.0, events=[
        {"t": 0.0, "kind": "start_qkd", "tx": "Anna", "rx": "Bob"},
        {"t": 30.0, "kind": "enable_eve", "channel": "Anna-Bob",
         "eve": {"kind": "intercept_resend", "fraction": 1.0}},
        {"t": 60.0, "kind": "enable_eve", "channel": "Anna-Bob",
         "eve": {"kind": "none"}}]))
    report = run_scenario(sc)
    eve_era = [b.qber for b in report.blocks if 33 < b.t_start < 58]
    calm = [b.qber for b in report.blocks if b.t_start > 64]
    assert eve_era and min(eve_era) > 0.2
    assert calm and max(calm) < 0.1


def test_default_preset_scenario_shape():
    sc = default_preset_scenario("cambridge", duration_s=10.0, seed=3)
    assert sc.duration_s == 10.0
    kinds = {e.kind.value for e in sc.events}
    assert kinds == {"start_qkd"}


# ---------------------------------------------------------------------------
# CLI
# ---------------------------------------------------------------------------

def test_cli_run_verify_presets_budget(tmp_path, capsys):
    scenario_path = tmp_path / "s.json"
    scenario_path.write_text(json.dumps(_minimal(duration=15.0, events=[
        {"t": 0.0, "kind": "start_qkd", "tx": "Anna", "rx": "Bob"}])))
    out_dir = tmp_path / "out"
    assert main(["run", "--scenario", str(scenario_path), "--out", str(out_dir),
                 "--format", "records"]) == 0
    records_path = out_dir / "metrics.records.jsonl"
    assert records_path.exists()
    assert main(["verify", "--records", str(records_path)]) == 0
    assert main(["presets"]) == 0
    assert "cambridge" in capsys.readouterr().out
    assert main(["budget", "--preset", "cambridge", "--path", "anna-sw"]) == 0
    assert "2.000" in capsys.readouterr().out


def test_cli_run_csv_format(tmp_path):
    scenario_path = tmp_path / "s.json"
    scenario_path.write_text(json.dumps(_minimal(duration=5.0)))
    assert main(["run", "--scenario", str(scenario_path),
                 "--out", str(tmp_path / "o")]) == 0
    csv = (tmp_path / "o" / "metrics.csv").read_text()
    assert csv.splitlines()[0] == ",".join(CSV_COLUMNS)


def test_cli_validation_failure_exit_code(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"version": 1, "topology": {"preset": "nope"},
                               "duration_s": 1, "seed": 1}))
    assert main(["run", "--scenario", str(bad), "--out", str(tmp_path / "o")]) == 1


def test_cli_seed_and_duration_overrides(tmp_path):
    scenario_path = tmp_path / "s.json"
    scenario_path.write_text(json.dumps(_minimal(duration=300.0)))
    assert main(["run", "--scenario", str(scenario_path), "--seed", "9",
                 "--duration", "2.0", "--out", str(tmp_path / "o"),
                 "--format", "records"]) == 0
    report = read_records(tmp_path / "o" / "metrics.records.jsonl")
    assert report.seed == 9 and report.duration_s == 2.0
