"""Topology model, strict config ingestion, and built-in presets.

The config document is JSON with a versioned header. Parsing is strict:
unknown keys are rejected so scenarios stay reproducible. The schema is
documented in docs/formats.md; :func:`load_topology` accepts a dict or a
JSON string, and :func:`serialize_topology` emits the canonical form that
round-trips to an identical topology.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Dict, List, Optional, Sequence, Tuple, Union

from .errors import ValidationError
from .physlink import LinkParams
from .qkdproto.secrecy import EstimatorKind
from .qkdproto.sifting import SiftingProtocol
from .switchfab import SwitchPosition, SwitchState

CONFIG_VERSION = 1
DEFAULT_FIBER_LOSS_DB_PER_KM = 0.2
DEFAULT_DRIFT_RATE_RAD_PER_S = 0.02
DEFAULT_FEEDBACK_GAIN = 0.5
DEFAULT_PREPOSITIONED_BITS = 1 << 20

_LINK_PARAM_FIELDS = (
    "pulse_rate_hz", "mean_photon_number", "channel_loss_db", "insertion_loss_db",
    "detector_efficiency", "dark_count_prob", "dead_time_s", "intrinsic_error",
    "data_wavelength_nm", "sync_wavelength_nm", "sync_offset_ns",
)


class NodeRole(Enum):
    TX = "tx"
    RX = "rx"
    RELAY = "relay"

    @property
    def can_transmit(self) -> bool:
        return self in (NodeRole.TX, NodeRole.RELAY)

    @property
    def can_receive(self) -> bool:
        return self in (NodeRole.RX, NodeRole.RELAY)


class LinkHealth(Enum):
    UP = "up"
    DEGRADED = "degraded"
    CUT = "cut"


class TopologyKind(Enum):
    FULL_MESH = "full_mesh"
    STAR = "star"


@dataclass(frozen=True)
class Node:
    node_id: str
    role: NodeRole
    trusted: bool = True


@dataclass(frozen=True)
class Link:
    """One physical strand. Loss comes from length unless overridden."""

    link_id: str
    a: str
    b: str
    length_km: float = 0.0
    loss_db_override: Optional[float] = None
    params: Dict[str, float] = field(default_factory=dict)
    health: LinkHealth = LinkHealth.UP


@dataclass(frozen=True)
class ChannelOverride:
    """Per-logical-channel parameter overrides (tx -> rx pair)."""

    tx: str
    rx: str
    params: Dict[str, float] = field(default_factory=dict)
    estimator: Optional[EstimatorKind] = None
    sifting: Optional[SiftingProtocol] = None
    drift_rate_rad_per_s: Optional[float] = None
    feedback_gain: Optional[float] = None


@dataclass(frozen=True)
class Preposition:
    """Out-of-band initial key segment shared by a pair (e.g. for relay
    adjacency without a quantum channel, and authentication bootstrap)."""

    a: str
    b: str
    bits: int = DEFAULT_PREPOSITIONED_BITS


@dataclass(frozen=True)
class QkdChannel:
    """A logical quantum channel: direct strand or a switched leg pair."""

    channel_id: str
    tx: str
    rx: str
    link_ids: Tuple[str, ...]
    via_switch: Optional[str]

    @property
    def pair(self) -> Tuple[str, str]:
        return tuple(sorted((self.tx, self.rx)))


@dataclass
class Topology:
    name: str
    nodes: Dict[str, Node]
    links: Dict[str, Link]
    switches: Dict[str, SwitchState]
    channels: List[ChannelOverride] = field(default_factory=list)
    prepositioned: List[Preposition] = field(default_factory=list)
    fiber_loss_db_per_km: float = DEFAULT_FIBER_LOSS_DB_PER_KM
    default_params: Dict[str, float] = field(default_factory=dict)
    drift_rate_rad_per_s: float = DEFAULT_DRIFT_RATE_RAD_PER_S
    feedback_gain: float = DEFAULT_FEEDBACK_GAIN
    description: str = ""

    # -- loss accounting ---------------------------------------------------

    def link_loss_db(self, link_id: str) -> float:
        link = self._link(link_id)
        if link.loss_db_override is not None:
            return link.loss_db_override
        return link.length_km * self.fiber_loss_db_per_km

    def link_budget(self, path: Union[str, Sequence[str]]) -> float:
        """Total loss of a single strand or a switched pair of strands.

        A switched pair contributes both strand losses plus the switch's
        insertion loss; strand overrides win over length-derived loss.
        """
        if isinstance(path, str):
            return self.link_loss_db(path)
        if len(path) == 1:
            return self.link_loss_db(path[0])
        if len(path) != 2:
            raise ValidationError("a path is one link id or a switched pair of link ids")
        first, second = (self._link(p) for p in path)
        switch = self._common_switch(first, second)
        return (self.link_loss_db(first.link_id) + self.link_loss_db(second.link_id)
                + switch.insertion_loss_db)

    def _common_switch(self, first: Link, second: Link) -> SwitchState:
        ends_a = {first.a, first.b}
        ends_b = {second.a, second.b}
        shared = ends_a & ends_b & set(self.switches)
        if not shared:
            raise ValidationError(
                f"links {first.link_id!r} and {second.link_id!r} do not meet at a switch")
        return self.switches[sorted(shared)[0]]

    def _link(self, link_id: str) -> Link:
        if link_id not in self.links:
            raise ValidationError(f"unknown link {link_id!r}")
        return self.links[link_id]

    # -- logical channels ----------------------------------------------------

    def qkd_channels(self) -> List[QkdChannel]:
        """Enumerate logical channels: direct strands plus switched combos.

        The enumeration is structural (health plays no part) and cached.
        """
        cached = getattr(self, "_channel_cache", None)
        if cached is not None:
            return cached
        channels = []
        for link in sorted(self.links.values(), key=lambda l: l.link_id):
            if link.a in self.nodes and link.b in self.nodes:
                channels.append(QkdChannel(
                    channel_id=f"{link.a}-{link.b}", tx=link.a, rx=link.b,
                    link_ids=(link.link_id,), via_switch=None))
        for sid in sorted(self.switches):
            sw = self.switches[sid]
            legs = {n: self._leg_link(n, sid) for n in (*sw.tx_ports, *sw.rx_ports)}
            for tx in sw.tx_ports:
                for rx in sw.rx_ports:
                    channels.append(QkdChannel(
                        channel_id=f"{tx}-{rx}", tx=tx, rx=rx,
                        link_ids=(legs[tx].link_id, legs[rx].link_id), via_switch=sid))
        object.__setattr__(self, "_channel_cache", channels)
        return channels

    def channel_by_id(self, channel_id: str) -> QkdChannel:
        for ch in self.qkd_channels():
            if ch.channel_id == channel_id:
                return ch
        raise ValidationError(f"unknown channel {channel_id!r}")

    def _leg_link(self, node_id: str, switch_id: str) -> Link:
        legs = [l for l in self.links.values()
                if {l.a, l.b} == {node_id, switch_id}]
        if len(legs) != 1:
            raise ValidationError(
                f"switch {switch_id!r} port {node_id!r} needs exactly one leg link, "
                f"found {len(legs)}")
        return legs[0]

    def channel_override(self, channel: QkdChannel) -> Optional[ChannelOverride]:
        for ov in self.channels:
            if ov.tx == channel.tx and ov.rx == channel.rx:
                return ov
        return None

    def channel_params(self, channel: QkdChannel) -> LinkParams:
        """Effective physical parameters of a logical channel.

        Merge order: link-parameter defaults, then each strand's overrides
        in path order, then the per-channel override. Loss fields are
        computed from the path, not merged.
        """
        merged = dict(self.default_params)
        for link_id in channel.link_ids:
            merged.update(self.links[link_id].params)
        override = self.channel_override(channel)
        if override:
            merged.update(override.params)
        merged["channel_loss_db"] = sum(self.link_loss_db(l) for l in channel.link_ids)
        merged["insertion_loss_db"] = (
            self.switches[channel.via_switch].insertion_loss_db
            if channel.via_switch else merged.get("insertion_loss_db", 0.0))
        return LinkParams(**merged)

    def channel_estimator_kind(self, channel: QkdChannel) -> EstimatorKind:
        override = self.channel_override(channel)
        if override and override.estimator:
            return override.estimator
        return EstimatorKind.SIMPLE_SHANNON

    def channel_sifting(self, channel: QkdChannel) -> SiftingProtocol:
        override = self.channel_override(channel)
        if override and override.sifting:
            return override.sifting
        return SiftingProtocol.BB84

    def channel_phase_dynamics(self, channel: QkdChannel) -> Tuple[float, float]:
        override = self.channel_override(channel)
        drift = self.drift_rate_rad_per_s
        gain = self.feedback_gain
        if override:
            if override.drift_rate_rad_per_s is not None:
                drift = override.drift_rate_rad_per_s
            if override.feedback_gain is not None:
                gain = override.feedback_gain
        return drift, gain

    def set_link_health(self, link_id: str, health: LinkHealth):
        self.links[link_id] = replace(self._link(link_id), health=health)


def required_links(n_enclaves: int, topology_kind: TopologyKind) -> int:
    """Links needed to join n enclaves: full mesh n(n-1)/2, star n."""
    if n_enclaves < 2:
        raise ValidationError("a key-distribution network needs at least 2 enclaves")
    if topology_kind is TopologyKind.FULL_MESH:
        return n_enclaves * (n_enclaves - 1) // 2
    return n_enclaves


# --------------------------------------------------------------------------
# Config parsing
# --------------------------------------------------------------------------

def _require_keys(obj: dict, where: str, required: tuple, optional: tuple):
    if not isinstance(obj, dict):
        raise ValidationError(f"{where}: expected an object")
    for key in required:
        if key not in obj:
            raise ValidationError(f"{where}: missing required key {key!r}")
    allowed = set(required) | set(optional)
    for key in obj:
        if key not in allowed:
            raise ValidationError(f"{where}: unknown key {key!r}")


def _parse_params(obj: dict, where: str) -> Dict[str, float]:
    _require_keys(obj, where, (), _LINK_PARAM_FIELDS)
    return {k: float(v) for k, v in obj.items()}


def _parse_enum(enum_cls, value, where: str):
    try:
        return enum_cls(value)
    except ValueError as exc:
        options = ", ".join(e.value for e in enum_cls)
        raise ValidationError(f"{where}: expected one of [{options}], got {value!r}") from exc


def load_topology(config: Union[str, dict]) -> Topology:
    """Parse and fully validate a topology document (strict mode)."""
    if isinstance(config, str):
        try:
            config = json.loads(config)
        except json.JSONDecodeError as exc:
            raise ValidationError(f"config is not valid JSON: {exc}") from exc

    _require_keys(config, "topology", ("version", "nodes", "links"),
                  ("name", "description", "switches", "channels", "prepositioned",
                   "defaults"))
    if config["version"] != CONFIG_VERSION:
        raise ValidationError(f"unsupported config version {config['version']!r}")

    defaults = config.get("defaults", {})
    _require_keys(defaults, "defaults", (),
                  ("fiber_loss_db_per_km", "params", "drift_rate_rad_per_s",
                   "feedback_gain"))

    nodes: Dict[str, Node] = {}
    if not config["nodes"]:
        raise ValidationError("nodes: at least one node is required")
    for i, raw in enumerate(config["nodes"]):
        where = f"nodes[{i}]"
        _require_keys(raw, where, ("id", "role"), ("trusted",))
        role = _parse_enum(NodeRole, raw["role"], f"{where}.role")
        node = Node(raw["id"], role, bool(raw.get("trusted", True)))
        if node.node_id in nodes:
            raise ValidationError(f"{where}: duplicate node id {node.node_id!r}")
        if node.role is NodeRole.RELAY and not node.trusted:
            raise ValidationError(
                f"{where}: relay node {node.node_id!r} must be trusted")
        nodes[node.node_id] = node

    switches: Dict[str, SwitchState] = {}
    for i, raw in enumerate(config.get("switches", [])):
        where = f"switches[{i}]"
        _require_keys(raw, where, ("id", "tx_ports", "rx_ports"),
                      ("initial_position", "schedule_period_s", "insertion_loss_db",
                       "toggle_times_s"))
        for port in (*raw["tx_ports"], *raw["rx_ports"]):
            if port not in nodes:
                raise ValidationError(f"{where}: port references undefined node {port!r}")
        if raw["id"] in nodes or raw["id"] in switches:
            raise ValidationError(f"{where}: duplicate id {raw['id']!r}")
        switches[raw["id"]] = SwitchState(
            switch_id=raw["id"],
            tx_ports=tuple(raw["tx_ports"]),
            rx_ports=tuple(raw["rx_ports"]),
            position=_parse_enum(SwitchPosition, raw.get("initial_position", "bar"),
                                 f"{where}.initial_position"),
            schedule_period_s=float(raw.get("schedule_period_s", 900.0)),
            insertion_loss_db=float(raw.get("insertion_loss_db", 0.8)),
            toggle_times_s=tuple(float(t) for t in raw.get("toggle_times_s", ())),
        )

    links: Dict[str, Link] = {}
    endpoints = set(nodes) | set(switches)
    for i, raw in enumerate(config["links"]):
        where = f"links[{i}]"
        _require_keys(raw, where, ("id", "a", "b"),
                      ("length_km", "loss_db_override", "params", "health"))
        for end in (raw["a"], raw["b"]):
            if end not in endpoints:
                raise ValidationError(f"{where}: endpoint references undefined node {end!r}")
        if raw["id"] in links:
            raise ValidationError(f"{where}: duplicate link id {raw['id']!r}")
        a, b = raw["a"], raw["b"]
        if a in nodes and b in nodes:
            if not (nodes[a].role.can_transmit and nodes[b].role.can_receive):
                raise ValidationError(
                    f"{where}: a QKD link needs a transmit-capable 'a' endpoint and a "
                    f"receive-capable 'b' endpoint ({a!r} is {nodes[a].role.value}, "
                    f"{b!r} is {nodes[b].role.value})")
        override = raw.get("loss_db_override")
        links[raw["id"]] = Link(
            link_id=raw["id"], a=a, b=b,
            length_km=float(raw.get("length_km", 0.0)),
            loss_db_override=None if override is None else float(override),
            params=_parse_params(raw.get("params", {}), f"{where}.params"),
            health=_parse_enum(LinkHealth, raw.get("health", "up"), f"{where}.health"),
        )

    channels = []
    for i, raw in enumerate(config.get("channels", [])):
        where = f"channels[{i}]"
        _require_keys(raw, where, ("tx", "rx"),
                      ("params", "estimator", "sifting", "drift_rate_rad_per_s",
                       "feedback_gain"))
        for end in (raw["tx"], raw["rx"]):
            if end not in nodes:
                raise ValidationError(f"{where}: references undefined node {end!r}")
        channels.append(ChannelOverride(
            tx=raw["tx"], rx=raw["rx"],
            params=_parse_params(raw.get("params", {}), f"{where}.params"),
            estimator=_parse_enum(EstimatorKind, raw["estimator"], f"{where}.estimator")
            if "estimator" in raw else None,
            sifting=_parse_enum(SiftingProtocol, raw["sifting"], f"{where}.sifting")
            if "sifting" in raw else None,
            drift_rate_rad_per_s=raw.get("drift_rate_rad_per_s"),
            feedback_gain=raw.get("feedback_gain"),
        ))

    prepositioned = []
    for i, raw in enumerate(config.get("prepositioned", [])):
        where = f"prepositioned[{i}]"
        _require_keys(raw, where, ("a", "b"), ("bits",))
        for end in (raw["a"], raw["b"]):
            if end not in nodes:
                raise ValidationError(f"{where}: references undefined node {end!r}")
        prepositioned.append(Preposition(raw["a"], raw["b"],
                                         int(raw.get("bits", DEFAULT_PREPOSITIONED_BITS))))

    topology = Topology(
        name=config.get("name", ""),
        nodes=nodes,
        links=links,
        switches=switches,
        channels=channels,
        prepositioned=prepositioned,
        fiber_loss_db_per_km=float(defaults.get("fiber_loss_db_per_km",
                                                DEFAULT_FIBER_LOSS_DB_PER_KM)),
        default_params=_parse_params(defaults.get("params", {}), "defaults.params"),
        drift_rate_rad_per_s=float(defaults.get("drift_rate_rad_per_s",
                                                DEFAULT_DRIFT_RATE_RAD_PER_S)),
        feedback_gain=float(defaults.get("feedback_gain", DEFAULT_FEEDBACK_GAIN)),
        description=config.get("description", ""),
    )
    # Every logical channel must instantiate valid physical parameters.
    for ch in topology.qkd_channels():
        try:
            topology.channel_params(ch)
        except (ValueError, TypeError) as exc:
            raise ValidationError(f"channel {ch.channel_id}: invalid parameters: {exc}") from exc
    return topology


def serialize_topology(topology: Topology) -> dict:
    """Canonical config form; load_topology(serialize_topology(t)) == t."""
    doc = {
        "version": CONFIG_VERSION,
        "name": topology.name,
        "description": topology.description,
        "nodes": [
            {"id": n.node_id, "role": n.role.value, "trusted": n.trusted}
            for n in sorted(topology.nodes.values(), key=lambda n: n.node_id)
        ],
        "links": [],
        "switches": [],
        "channels": [],
        "prepositioned": [],
        "defaults": {
            "fiber_loss_db_per_km": topology.fiber_loss_db_per_km,
            "params": dict(sorted(topology.default_params.items())),
            "drift_rate_rad_per_s": topology.drift_rate_rad_per_s,
            "feedback_gain": topology.feedback_gain,
        },
    }
    for link in sorted(topology.links.values(), key=lambda l: l.link_id):
        doc["links"].append({
            "id": link.link_id, "a": link.a, "b": link.b,
            "length_km": link.length_km,
            "loss_db_override": link.loss_db_override,
            "params": dict(sorted(link.params.items())),
            "health": link.health.value,
        })
    for sw in sorted(topology.switches.values(), key=lambda s: s.switch_id):
        doc["switches"].append({
            "id": sw.switch_id,
            "tx_ports": list(sw.tx_ports),
            "rx_ports": list(sw.rx_ports),
            "initial_position": sw.position.value,
            "schedule_period_s": sw.schedule_period_s,
            "insertion_loss_db": sw.insertion_loss_db,
            "toggle_times_s": list(sw.toggle_times_s),
        })
    for ov in sorted(topology.channels, key=lambda o: (o.tx, o.rx)):
        entry = {"tx": ov.tx, "rx": ov.rx, "params": dict(sorted(ov.params.items()))}
        if ov.estimator:
            entry["estimator"] = ov.estimator.value
        if ov.sifting:
            entry["sifting"] = ov.sifting.value
        if ov.drift_rate_rad_per_s is not None:
            entry["drift_rate_rad_per_s"] = ov.drift_rate_rad_per_s
        if ov.feedback_gain is not None:
            entry["feedback_gain"] = ov.feedback_gain
        doc["channels"].append(entry)
    for pre in sorted(topology.prepositioned, key=lambda p: (p.a, p.b)):
        doc["prepositioned"].append({"a": pre.a, "b": pre.b, "bits": pre.bits})
    return doc


def topology_to_json(topology: Topology) -> str:
    return json.dumps(serialize_topology(topology), indent=2, sort_keys=True)


# --------------------------------------------------------------------------
# Presets
# --------------------------------------------------------------------------

def cambridge_config() -> dict:
    """The six-node metro network preset.

    Two fiber transmitters (Alice at the lab, Anna 10 km out), two
    receivers (Bob at the lab, Boris 19 km out behind lossy campus
    segments), a 2x2 switch joining them, and a freespace pair (Ali, Baba)
    tied into the network by a prepositioned pair with Alice.

    Detector constants are calibrated, not measured: with mu=0.5 over the
    10 km path they put the Anna-Bob link near 1,000 secret bits/s at ~3%
    QBER. The Boris paths run mu=1.0 under the multiphoton-aware
    estimator, which prices their secret yield at exactly zero while
    sifted throughput continues. Freespace parameters are placeholders.
    The initial switch position couples Anna to Bob (and Alice to Boris).
    """
    calibrated = {
        "detector_efficiency": 0.004,
        "dark_count_prob": 1e-5,
        "intrinsic_error": 0.018,
        "mean_photon_number": 0.5,
        "pulse_rate_hz": 5e6,
        "dead_time_s": 1e-5,
    }
    return {
        "version": 1,
        "name": "cambridge",
        "description": "Six-node metro QKD network: four switched fiber "
                       "endpoints plus a freespace pair joined by key relay.",
        "nodes": [
            {"id": "Alice", "role": "tx", "trusted": True},
            {"id": "Anna", "role": "tx", "trusted": True},
            {"id": "Bob", "role": "rx", "trusted": True},
            {"id": "Boris", "role": "rx", "trusted": True},
            {"id": "Ali", "role": "tx", "trusted": True},
            {"id": "Baba", "role": "rx", "trusted": True},
        ],
        "switches": [
            {"id": "sw", "tx_ports": ["Alice", "Anna"], "rx_ports": ["Bob", "Boris"],
             "initial_position": "cross", "schedule_period_s": 900.0,
             "insertion_loss_db": 0.8}
        ],
        "links": [
            {"id": "alice-sw", "a": "Alice", "b": "sw", "length_km": 0.003},
            {"id": "anna-sw", "a": "Anna", "b": "sw", "length_km": 10.0},
            {"id": "sw-bob", "a": "sw", "b": "Bob", "length_km": 0.003},
            # 19 km strand whose measured attenuation (campus segments) far
            # exceeds its length-derived loss, hence the explicit override.
            {"id": "sw-boris", "a": "sw", "b": "Boris", "length_km": 19.0,
             "loss_db_override": 11.5},
            # Freespace pair; placeholder physics, exists to exercise key
            # relay across heterogeneous links.
            {"id": "ali-baba", "a": "Ali", "b": "Baba", "length_km": 0.5,
             "loss_db_override": 3.0,
             "params": {"pulse_rate_hz": 1e6, "detector_efficiency": 0.01,
                        "dark_count_prob": 1e-5, "intrinsic_error": 0.02}},
        ],
        "channels": [
            {"tx": "Alice", "rx": "Boris", "params": {"mean_photon_number": 1.0},
             "estimator": "multiphoton_aware"},
            {"tx": "Anna", "rx": "Boris", "params": {"mean_photon_number": 1.0},
             "estimator": "multiphoton_aware"},
        ],
        "prepositioned": [
            {"a": "Ali", "b": "Alice", "bits": DEFAULT_PREPOSITIONED_BITS},
        ],
        "defaults": {
            "fiber_loss_db_per_km": 0.2,
            "params": calibrated,
            "drift_rate_rad_per_s": 0.002,
            "feedback_gain": 0.5,
        },
    }


PRESETS = {
    "cambridge": cambridge_config,
}


def load_preset(name: str) -> Topology:
    if name not in PRESETS:
        raise ValidationError(f"unknown preset {name!r}; available: {sorted(PRESETS)}")
    return load_topology(PRESETS[name]())
