"""Key relay: path selection, hop-by-hop OTP algebra, failure handling."""

import numpy as np
import pytest

from qkdnet import netgraph as ng
from qkdnet.bits import xor_bits
from qkdnet.errors import NoPathError
from qkdnet.keyrelay import HealthMonitor, RelayCoordinator, RelayStatus, find_path
from qkdnet.keystore import ConsumePurpose, KeyOrigin, KeyStore, scan_one_time_use
from qkdnet.netgraph import LinkHealth


class _StubRng:
    """Feeds predetermined bit arrays to random_bits()."""

    def __init__(self, arrays):
        self._queue = [np.asarray(a, dtype=np.uint8) for a in arrays]

    def integers(self, low, high, size=None, dtype=None):
        out = self._queue.pop(0)
        assert out.size == size
        return out


def _relay_mesh(node_specs, link_pairs):
    nodes = [{"id": n, "role": r} for n, r in node_specs]
    links = [{"id": f"{a}-{b}".lower(), "a": a, "b": b, "length_km": 1.0}
             for a, b in link_pairs]
    return ng.load_topology({"version": 1, "nodes": nodes, "links": links})


def _seed(store, pairs, bits=6000, seed=0):
    rng = np.random.default_rng(seed)
    for a, b in pairs:
        store.reservoir(a, b).deposit(
            "seed", rng.integers(0, 2, bits, dtype=np.uint8), KeyOrigin.DIRECT_QKD)


def _chain(n):
    specs = [("N0", "tx")] + [(f"N{i}", "relay") for i in range(1, n - 1)] + \
            [(f"N{n-1}", "rx")]
    pairs = [(f"N{i}", f"N{i+1}") for i in range(n - 1)]
    return _relay_mesh(specs, pairs), pairs


# ---------------------------------------------------------------------------
# failure detection
# ---------------------------------------------------------------------------

def test_healthy_blocks_keep_link_up():
    monitor = HealthMonitor()
    for i in range(10):
        monitor.report_block("L", 0.03, float(i))
    assert monitor.status("L") is LinkHealth.UP
    assert monitor.transitions == []


def test_intercept_signature_degrades_within_three_blocks():
    monitor = HealthMonitor()
    monitor.report_block("L", 0.25, 1.0)
    monitor.report_block("L", 0.24, 2.0)
    assert monitor.status("L") is LinkHealth.UP
    monitor.report_block("L", 0.26, 3.0)
    assert monitor.status("L") is LinkHealth.DEGRADED
    assert len(monitor.transitions) == 1


def test_single_bad_block_does_not_trip():
    monitor = HealthMonitor()
    monitor.report_block("L", 0.25, 1.0)
    monitor.report_block("L", 0.03, 2.0)
    monitor.report_block("L", 0.25, 3.0)
    monitor.report_block("L", 0.25, 4.0)
    assert monitor.status("L") is LinkHealth.UP


def test_zero_click_window_marks_cut():
    monitor = HealthMonitor()
    monitor.watch("L", 0.0)
    monitor.report_clicks("L", 120, 1.0)
    monitor.report_clicks("L", 0, 5.5)
    assert monitor.status("L") is LinkHealth.UP
    monitor.report_clicks("L", 0, 6.1)
    assert monitor.status("L") is LinkHealth.CUT


def test_silence_while_unwatched_is_not_a_cut():
    monitor = HealthMonitor()
    monitor.watch("L", 0.0)
    monitor.report_clicks("L", 10, 1.0)
    monitor.unwatch("L")
    monitor.report_clicks("L", 0, 500.0)
    assert monitor.status("L") is LinkHealth.UP
    monitor.watch("L", 600.0)  # baseline resets on rewatch
    monitor.report_clicks("L", 0, 602.0)
    assert monitor.status("L") is LinkHealth.UP
    monitor.report_clicks("L", 0, 605.5)
    assert monitor.status("L") is LinkHealth.CUT


def test_recovery_after_three_clean_blocks():
    monitor = HealthMonitor()
    for t in range(3):
        monitor.report_block("L", 0.3, float(t))
    assert monitor.status("L") is LinkHealth.DEGRADED
    monitor.report_block("L", 0.02, 4.0)
    monitor.report_block("L", 0.03, 5.0)
    assert monitor.status("L") is LinkHealth.DEGRADED
    monitor.report_block("L", 0.02, 6.0)
    assert monitor.status("L") is LinkHealth.UP
    causes = [t.cause for t in monitor.transitions]
    assert any("clean" in c for c in causes)


# ---------------------------------------------------------------------------
# find_path
# ---------------------------------------------------------------------------

def test_find_path_prefers_richer_relay():
    topo = ng.load_preset("cambridge")
    store = KeyStore()
    _seed(store, [("Alice", "Bob"), ("Anna", "Bob")], bits=5000)
    _seed(store, [("Alice", "Boris"), ("Anna", "Boris")], bits=4000)
    path = find_path(topo, HealthMonitor(), store, "Alice", "Anna", 1000)
    assert path == ["Alice", "Bob", "Anna"]
    # Starve the Bob pairs below the request: the Boris relay takes over.
    store.reservoir("Alice", "Bob").consume(4500, ConsumePurpose.DELIVERY)
    path = find_path(topo, HealthMonitor(), store, "Alice", "Anna", 1000)
    assert path == ["Alice", "Boris", "Anna"]


def test_find_path_lexicographic_tie_break():
    topo = ng.load_preset("cambridge")
    store = KeyStore()
    _seed(store, [("Alice", "Bob"), ("Anna", "Bob"),
                  ("Alice", "Boris"), ("Anna", "Boris")], bits=5000)
    path = find_path(topo, HealthMonitor(), store, "Alice", "Anna", 1000)
    assert path == ["Alice", "Bob", "Anna"]  # equal min-key; "Bob" < "Boris"


def test_find_path_rejects_same_endpoints():
    topo = ng.load_preset("cambridge")
    with pytest.raises(ValueError):
        find_path(topo, HealthMonitor(), KeyStore(), "Alice", "Alice", 10)


def test_find_path_cut_chain_disconnects():
    topo, pairs = _chain(5)
    store = KeyStore()
    _seed(store, pairs)
    health = HealthMonitor()
    health.force("N2-N3", LinkHealth.CUT, 0.0, "test")
    with pytest.raises(NoPathError):
        find_path(topo, health, store, "N0", "N4", 100)


def test_find_path_excludes_untrusted_interior():
    topo = ng.load_topology({
        "version": 1,
        "nodes": [{"id": "A", "role": "tx"},
                  {"id": "M", "role": "rx", "trusted": False},
                  {"id": "B", "role": "rx"}],
        "links": [],
        "prepositioned": [{"a": "A", "b": "M", "bits": 4096},
                          {"a": "M", "b": "B", "bits": 4096}]})
    store = KeyStore()
    _seed(store, [("A", "M"), ("M", "B")])
    with pytest.raises(NoPathError):
        find_path(topo, HealthMonitor(), store, "A", "B", 100)


def test_find_path_needs_available_key():
    topo, pairs = _chain(3)
    store = KeyStore()
    _seed(store, pairs, bits=500)
    with pytest.raises(NoPathError):
        find_path(topo, HealthMonitor(), store, "N0", "N2", 501)


# ---------------------------------------------------------------------------
# relay_key
# ---------------------------------------------------------------------------

def test_relay_xor_arithmetic_by_hand():
    # R=1010, K(S,R1)=1100, K(R1,D)=0011 -> C1=0110, C2=1001.
    topo, _ = _chain(3)
    store = KeyStore()
    rng = np.random.default_rng(0)
    for pair, key_bits in ((("N0", "N1"), [1, 1, 0, 0]), (("N1", "N2"), [0, 0, 1, 1])):
        r = store.reservoir(*pair)
        r.deposit("otp", np.array(key_bits, dtype=np.uint8), KeyOrigin.DIRECT_QKD)
        r.deposit("auth", rng.integers(0, 2, 256, dtype=np.uint8), KeyOrigin.PREPOSITIONED)
    coord = RelayCoordinator(topo, HealthMonitor(), store, _StubRng([[1, 0, 1, 0]]))
    session = coord.request("N0", "N2", 4, time_s=0.0)
    assert coord.drive(session, 1.0) == "delivered"
    assert [list(t.ciphertext) for t in session.hop_transcripts] == \
        [[0, 1, 1, 0], [1, 0, 0, 1]]
    assert list(session.delivered_secret) == [1, 0, 1, 0]
    assert list(session.secret) == [1, 0, 1, 0]


def test_single_hop_degenerates_to_one_otp_transfer():
    topo, pairs = _chain(2)
    store = KeyStore()
    _seed(store, pairs)
    coord = RelayCoordinator(topo, HealthMonitor(), store, np.random.default_rng(5))
    session = coord.request("N0", "N1", 1024, time_s=0.0)
    assert coord.drive(session, 0.5) == "delivered"
    assert len(session.hop_transcripts) == 1
    assert np.array_equal(session.secret, session.delivered_secret)


def test_five_hop_relay_accounting_and_algebra():
    topo, pairs = _chain(6)
    store = KeyStore()
    _seed(store, pairs, bits=20_000)
    coord = RelayCoordinator(topo, HealthMonitor(), store, np.random.default_rng(6))
    session = coord.request("N0", "N5", 10_000, time_s=0.0)
    assert coord.drive(session, 1.0) == "delivered"
    assert np.array_equal(session.secret, session.delivered_secret)
    otp = sum(a.offset_end - a.offset_start for a in store.audit
              if a.kind == "consume" and a.purpose == "one_time_pad")
    auth = sum(a.offset_end - a.offset_start for a in store.audit
               if a.kind == "consume" and a.purpose == "authentication")
    assert otp == 5 * 10_000
    assert auth == 5 * 128
    # Per-hop transcript algebra: ciphertext XOR consumed key = R.
    for t in session.hop_transcripts:
        key = store.reservoirs[t.pair].peek(t.otp_offset_start, 10_000)
        assert np.array_equal(xor_bits(t.ciphertext, key), session.secret)
    assert scan_one_time_use(store.audit) == []


def test_relay_deposits_delivered_secret_for_endpoints():
    topo, pairs = _chain(4)
    store = KeyStore()
    _seed(store, pairs)
    coord = RelayCoordinator(topo, HealthMonitor(), store, np.random.default_rng(7))
    session = coord.request("N0", "N3", 2048, time_s=0.0)
    coord.drive(session, 1.0)
    assert store.available("N0", "N3") == 2048
    assert np.array_equal(store.reservoir("N0", "N3").peek(0, 2048), session.secret)


def test_relay_transitivity_between_transmitters():
    topo = ng.load_preset("cambridge")
    store = KeyStore()
    _seed(store, [("Alice", "Bob"), ("Anna", "Bob")])
    coord = RelayCoordinator(topo, HealthMonitor(), store, np.random.default_rng(8))
    session = coord.request("Alice", "Anna", 1024, time_s=0.0)
    assert coord.drive(session, 1.0) == "delivered"
    assert store.available("Alice", "Anna") == 1024


def test_relay_starvation_pauses_until_replenished():
    topo, pairs = _chain(3)
    store = KeyStore()
    _seed(store, [pairs[0]], bits=6000)
    _seed(store, [pairs[1]], bits=1000)  # not enough for the second hop
    coord = RelayCoordinator(topo, HealthMonitor(), store, np.random.default_rng(9))
    session = coord.request("N0", "N2", 2048, time_s=0.0)
    assert session.status is RelayStatus.PATH_PENDING  # second hop unfunded
    store.reservoir("N1", "N2").deposit(
        "more", np.random.default_rng(1).integers(0, 2, 4000, dtype=np.uint8),
        KeyOrigin.DIRECT_QKD)
    assert coord.drive(session, 2.0) == "delivered"


def test_relay_auth_failure_fails_session_and_degrades_link():
    topo, pairs = _chain(3)
    store = KeyStore()
    _seed(store, pairs)
    health = HealthMonitor()
    coord = RelayCoordinator(topo, health, store, np.random.default_rng(10))
    session = coord.request("N0", "N2", 512, time_s=0.0)
    coord.corrupt_hops.add((session.session_id, 1))
    assert coord.drive(session, 1.0) == "failed"
    assert session.status is RelayStatus.FAILED
    assert health.status("N1-N2") is LinkHealth.DEGRADED


def test_reroute_mid_session_writes_off_and_regenerates():
    specs = [("S", "tx"), ("R1", "relay"), ("R2", "relay"), ("D", "rx")]
    pairs = [("S", "R1"), ("S", "R2"), ("R1", "D"), ("R2", "D")]
    topo = _relay_mesh(specs, pairs)
    store = KeyStore()
    _seed(store, pairs, bits=4000)
    health = HealthMonitor()
    coord = RelayCoordinator(topo, health, store, np.random.default_rng(11))
    session = coord.request("S", "D", 1000, time_s=0.0)
    first_path = list(session.path)
    assert coord.step(session, 0.1) == "advanced"  # first hop consumed
    old_secret = session.secret.copy()
    health.force(f"{first_path[1]}-D", LinkHealth.CUT, 0.2, "test cut")
    assert coord.step(session, 0.3) == "rerouted"
    assert session.regenerations == 1
    assert not np.array_equal(session.secret, old_secret)
    assert coord.drive(session, 0.4) == "delivered"
    assert session.path[1] != first_path[1]
    writeoffs = [a for a in store.audit if a.kind == "write_off"]
    assert len(writeoffs) == 1 and writeoffs[0].offset_end - writeoffs[0].offset_start == 1000
    assert scan_one_time_use(store.audit) == []


def test_session_api_status_and_cancel():
    topo, pairs = _chain(3)
    store = KeyStore()
    _seed(store, pairs)
    coord = RelayCoordinator(topo, HealthMonitor(), store, np.random.default_rng(14))
    session = coord.request("N0", "N2", 512, time_s=0.0)
    assert coord.status(session.session_id) is RelayStatus.IN_FLIGHT
    coord.step(session, 0.1)
    cancelled = coord.cancel(session.session_id, time_s=0.2)
    assert cancelled.status is RelayStatus.FAILED
    assert cancelled.failure_cause == "cancelled"
    writeoffs = [a for a in store.audit if a.kind == "write_off"]
    assert len(writeoffs) == 1
    assert scan_one_time_use(store.audit) == []
    # A cancelled session never advances again.
    assert coord.step(session, 0.3) == "failed"


def test_reroute_all_paths_cut_fails():
    topo, pairs = _chain(3)
    store = KeyStore()
    _seed(store, pairs)
    health = HealthMonitor()
    coord = RelayCoordinator(topo, health, store, np.random.default_rng(12))
    session = coord.request("N0", "N2", 512, time_s=0.0)
    coord.step(session, 0.1)
    health.force("N1-N2", LinkHealth.CUT, 0.2, "test")
    assert coord.step(session, 0.3) == "failed"
    assert "no alternate path" in session.failure_cause


def test_trusted_node_exposure_limited_to_path():
    specs = [("S", "tx"), ("R1", "relay"), ("R2", "relay"), ("D", "rx")]
    pairs = [("S", "R1"), ("S", "R2"), ("R1", "D"), ("R2", "D")]
    topo = _relay_mesh(specs, pairs)
    store = KeyStore()
    _seed(store, [("S", "R1"), ("R1", "D")], bits=4000)
    coord = RelayCoordinator(topo, HealthMonitor(), store, np.random.default_rng(13))
    session = coord.request("S", "D", 500, time_s=0.0)
    assert coord.drive(session, 0.5) == "delivered"
    assert session.path == ["S", "R1", "D"]
    assert coord.node_plaintexts["R2"] == []
    from qkdnet.bits import bits_to_bytes
    r_bytes = bits_to_bytes(session.secret)
    for node in ("S", "R1", "D"):
        assert r_bytes in coord.node_plaintexts[node]


def test_randomized_cut_sessions_always_deliver_when_possible():
    # 100 random trusted meshes, one random link cut each: every session
    # with a surviving path delivers; the audit shows no bit reuse.
    rng = np.random.default_rng(99)
    delivered = attempted = 0
    for trial in range(100):
        n = int(rng.integers(4, 9))
        names = [f"N{i}" for i in range(n)]
        link_pairs = [(names[i], names[i + 1]) for i in range(n - 1)]
        extra = int(rng.integers(0, 3))
        for _ in range(extra):
            a, b = rng.choice(n, 2, replace=False)
            a, b = sorted((int(a), int(b)))
            if b - a > 1 and (names[a], names[b]) not in link_pairs:
                link_pairs.append((names[a], names[b]))
        specs = [(names[0], "relay")] + [(x, "relay") for x in names[1:]]
        topo = _relay_mesh(specs, link_pairs)
        store = KeyStore()
        _seed(store, link_pairs, bits=3000, seed=trial)
        health = HealthMonitor()
        cut = link_pairs[int(rng.integers(0, len(link_pairs)))]
        health.force(f"{cut[0]}-{cut[1]}", LinkHealth.CUT, 0.0, "random cut")
        src, dst = names[0], names[-1]
        coord = RelayCoordinator(topo, health, store, np.random.default_rng(trial))
        session = coord.request(src, dst, 1000, time_s=0.0)
        attempted += 1
        outcome = coord.drive(session, 1.0)
        if session.status is RelayStatus.PATH_PENDING:
            # No qualifying path survives the cut; must not deliver.
            continue
        assert outcome == "delivered"
        assert np.array_equal(session.secret, session.delivered_secret)
        assert scan_one_time_use(store.audit) == []
        delivered += 1
    assert attempted == 100 and delivered > 30  # cuts rarely disconnect extras
