"""Scenario documents: what to run, on which topology, with which faults.

A scenario is JSON with a versioned header (strictly validated like the
topology schema): a topology reference (preset name or inline document), a
duration, a master seed, optional engine knobs, and a time-ordered list of
events. Identical (scenario, seed) always reproduces a bit-identical run.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, List, Union

from .errors import ValidationError
from .netgraph import Topology, load_preset, load_topology
from .physlink import EveKind, EveModel
from .qkdproto.sifting import SiftingProtocol

SCENARIO_VERSION = 1


class EventKind(Enum):
    START_QKD = "start_qkd"
    RELAY_REQUEST = "relay_request"
    CUT_LINK = "cut_link"
    RESTORE_LINK = "restore_link"
    ENABLE_EVE = "enable_eve"
    SWITCH_TOGGLE = "switch_toggle"
    SET_SIFTING = "set_sifting"


@dataclass(frozen=True)
class ScenarioEvent:
    time_s: float
    kind: EventKind
    args: Dict[str, object] = field(default_factory=dict)


@dataclass(frozen=True)
class EngineKnobs:
    """Tunable cadences and budgets of the deterministic event loop."""

    round_duration_s: float = 0.25
    block_target_bits: int = 4096
    sample_fraction: float = 0.10
    min_sample_bits: int = 200
    security_margin_bits: int = 128
    training_interval_s: float = 4.0
    training_target_bits: int = 256
    training_max_slots: int = 1 << 21
    feedback_deadband: float = 0.012
    metrics_interval_s: float = 1.0
    relay_hop_latency_s: float = 0.05
    relay_retry_interval_s: float = 0.5
    relay_reserve_bits: int = 1024
    prepositioned_auth_bits: int = 1 << 20

    def __post_init__(self):
        if self.round_duration_s <= 0 or self.metrics_interval_s <= 0:
            raise ValidationError("engine cadences must be positive")
        if not 0.0 < self.sample_fraction < 1.0:
            raise ValidationError("sample_fraction must be in (0, 1)")


@dataclass
class Scenario:
    topology: Topology
    duration_s: float
    seed: int
    events: List[ScenarioEvent] = field(default_factory=list)
    knobs: EngineKnobs = field(default_factory=EngineKnobs)
    name: str = ""

    def __post_init__(self):
        if self.duration_s <= 0:
            raise ValidationError("duration_s must be positive")
        times = [e.time_s for e in self.events]
        if any(t < 0 or t > self.duration_s for t in times):
            raise ValidationError("event times must lie within [0, duration]")
        if times != sorted(times):
            raise ValidationError("events must be time-ordered")


_EVENT_FIELDS = {
    EventKind.START_QKD: ({"tx", "rx"}, set()),
    EventKind.RELAY_REQUEST: ({"src", "dst", "bits"}, set()),
    EventKind.CUT_LINK: ({"link"}, set()),
    EventKind.RESTORE_LINK: ({"link"}, set()),
    EventKind.ENABLE_EVE: ({"channel", "eve"}, set()),
    EventKind.SWITCH_TOGGLE: ({"switch"}, set()),
    EventKind.SET_SIFTING: ({"channel", "protocol"}, set()),
}


def _parse_eve(raw: dict, where: str) -> EveModel:
    if not isinstance(raw, dict) or "kind" not in raw:
        raise ValidationError(f"{where}: eve needs a 'kind'")
    extra = set(raw) - {"kind", "fraction"}
    if extra:
        raise ValidationError(f"{where}: unknown eve keys {sorted(extra)}")
    try:
        kind = EveKind(raw["kind"])
    except ValueError as exc:
        raise ValidationError(f"{where}: unknown eve kind {raw['kind']!r}") from exc
    return EveModel(kind=kind, intercept_fraction=float(raw.get("fraction", 1.0)))


def load_scenario(config: Union[str, dict]) -> Scenario:
    """Parse and validate a scenario document (strict mode)."""
    if isinstance(config, str):
        try:
            config = json.loads(config)
        except json.JSONDecodeError as exc:
            raise ValidationError(f"scenario is not valid JSON: {exc}") from exc
    if not isinstance(config, dict):
        raise ValidationError("scenario: expected an object")
    allowed = {"version", "name", "topology", "duration_s", "seed", "engine", "events"}
    for key in ("version", "topology", "duration_s", "seed"):
        if key not in config:
            raise ValidationError(f"scenario: missing required key {key!r}")
    unknown = set(config) - allowed
    if unknown:
        raise ValidationError(f"scenario: unknown keys {sorted(unknown)}")
    if config["version"] != SCENARIO_VERSION:
        raise ValidationError(f"unsupported scenario version {config['version']!r}")

    topo_ref = config["topology"]
    if isinstance(topo_ref, dict) and set(topo_ref) == {"preset"}:
        topology = load_preset(topo_ref["preset"])
    elif isinstance(topo_ref, dict):
        topology = load_topology(topo_ref)
    else:
        raise ValidationError("topology: expected {'preset': name} or an inline document")

    knobs_raw = config.get("engine", {})
    valid_knobs = set(EngineKnobs.__dataclass_fields__)
    unknown = set(knobs_raw) - valid_knobs
    if unknown:
        raise ValidationError(f"engine: unknown keys {sorted(unknown)}")
    knobs = EngineKnobs(**knobs_raw)

    events = []
    for i, raw in enumerate(config.get("events", [])):
        where = f"events[{i}]"
        if not isinstance(raw, dict) or "t" not in raw or "kind" not in raw:
            raise ValidationError(f"{where}: events need 't' and 'kind'")
        try:
            kind = EventKind(raw["kind"])
        except ValueError as exc:
            raise ValidationError(f"{where}: unknown event kind {raw['kind']!r}") from exc
        required, _ = _EVENT_FIELDS[kind]
        present = set(raw) - {"t", "kind"}
        if present != required:
            raise ValidationError(
                f"{where}: {kind.value} needs exactly {sorted(required)}, got {sorted(present)}")
        args = {k: raw[k] for k in required}
        if kind is EventKind.ENABLE_EVE:
            args["eve"] = _parse_eve(args["eve"], where)
        if kind is EventKind.SET_SIFTING:
            try:
                args["protocol"] = SiftingProtocol(args["protocol"])
            except ValueError as exc:
                raise ValidationError(f"{where}: unknown protocol {args['protocol']!r}") from exc
        if kind is EventKind.RELAY_REQUEST:
            args["bits"] = int(args["bits"])
        events.append(ScenarioEvent(float(raw["t"]), kind, args))

    scenario = Scenario(
        topology=topology,
        duration_s=float(config["duration_s"]),
        seed=int(config["seed"]),
        events=events,
        knobs=knobs,
        name=config.get("name", ""),
    )
    _validate_references(scenario)
    return scenario


def _validate_references(scenario: Scenario) -> None:
    topo = scenario.topology
    channel_ids = {c.channel_id for c in topo.qkd_channels()}
    for i, ev in enumerate(scenario.events):
        where = f"events[{i}]"
        a = ev.args
        if ev.kind is EventKind.START_QKD:
            cid = f"{a['tx']}-{a['rx']}"
            if cid not in channel_ids:
                raise ValidationError(f"{where}: no QKD channel {cid!r} in the topology")
        elif ev.kind in (EventKind.CUT_LINK, EventKind.RESTORE_LINK):
            if a["link"] not in topo.links:
                raise ValidationError(f"{where}: unknown link {a['link']!r}")
        elif ev.kind in (EventKind.ENABLE_EVE, EventKind.SET_SIFTING):
            if a["channel"] not in channel_ids:
                raise ValidationError(f"{where}: unknown channel {a['channel']!r}")
        elif ev.kind is EventKind.SWITCH_TOGGLE:
            if a["switch"] not in topo.switches:
                raise ValidationError(f"{where}: unknown switch {a['switch']!r}")
        elif ev.kind is EventKind.RELAY_REQUEST:
            for node in (a["src"], a["dst"]):
                if node not in topo.nodes:
                    raise ValidationError(f"{where}: unknown node {node!r}")


def default_preset_scenario(preset: str = "cambridge", duration_s: float = 600.0,
                            seed: int = 1) -> Scenario:
    """Convenience run: key generation on the preset's headline channels."""
    if preset != "cambridge":
        raise ValidationError(f"no default scenario for preset {preset!r}")
    return load_scenario({
        "version": 1,
        "name": f"{preset}-default",
        "topology": {"preset": preset},
        "duration_s": duration_s,
        "seed": seed,
        "events": [
            {"t": 0.0, "kind": "start_qkd", "tx": "Anna", "rx": "Bob"},
            {"t": 0.0, "kind": "start_qkd", "tx": "Alice", "rx": "Boris"},
        ],
    })
