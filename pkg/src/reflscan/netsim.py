"""Deterministic discrete-event network.

Hosts and routers are nodes joined by unidirectional links; each link owns an
egress queue (FIFO drop-tail or round-robin fair) and serializes packets at
its configured rate.  Simulated time is integer nanoseconds, events tie-break
on insertion order, and the only randomness anywhere is injected by callers,
so identical (config, seed) always replays the identical event log.

Spoofed segment bursts travel as one packet with a `copies` count: the wire
cost, queue occupancy and drop-tail behave as if the copies were back-to-back
individual segments, while the event count stays tractable for large scans.
"""

from __future__ import annotations

import csv
import heapq
from dataclasses import dataclass, field, replace
from typing import Callable

from .stackmodel import TcpSegment

NS_PER_S = 1_000_000_000
NS_PER_MS = 1_000_000
NS_PER_US = 1_000

PING_SIZE = 64

KIND_TCP = "tcp"
KIND_PING = "ping"
KIND_PONG = "pong"
KIND_DATA = "data"
KIND_DATA_ACK = "data_ack"

FIFO_DROPTAIL = "fifo"
ROUND_ROBIN_FAIR = "rr"


def serialization_ns(nbytes: int, bandwidth_bps: int) -> int:
    """Transmission time of nbytes at bandwidth_bps, floored to whole ns."""
    return nbytes * 8 * NS_PER_S // bandwidth_bps


@dataclass(slots=True)
class Packet:
    pid: int
    kind: str
    src: str
    dst: str
    size: int
    copies: int = 1
    segment: TcpSegment | None = None
    probe_id: int | None = None
    flow: str | None = None

    @property
    def wire_bytes(self) -> int:
        return self.size * self.copies


@dataclass(slots=True)
class ProbeRecord:
    """One latency probe: send/receive timestamps plus the caller's loss mark."""

    probe_id: int
    send_time_ns: int
    recv_time_ns: int | None = None
    lost: bool = False

    @property
    def rtt_ns(self) -> int | None:
        if self.recv_time_ns is None:
            return None
        return self.recv_time_ns - self.send_time_ns

    @property
    def rtt_s(self) -> float | None:
        rtt = self.rtt_ns
        return None if rtt is None else rtt / NS_PER_S


class EventLog:
    """Ordered (time, event, packet, location, occupancy) records.

    Per-packet metadata (kind, copies, origin) is kept in a side table so
    segment-level accounting can be recovered from aggregated packets.
    Recording can be disabled for large scans; counters stay on regardless.
    """

    CSV_HEADER = ("time_ns", "event", "packet_id", "node", "queue_occupancy_bytes")

    def __init__(self, enabled: bool = True) -> None:
        self.enabled = enabled
        self.records: list[tuple[int, str, int, str, int]] = []
        self.packets: dict[int, tuple[str, str, str, int, int]] = {}

    def note_packet(self, pkt: Packet) -> None:
        self.packets[pkt.pid] = (pkt.kind, pkt.src, pkt.dst, pkt.size, pkt.copies)

    def record(self, t: int, event: str, pid: int, node: str, occupancy: int = 0) -> None:
        if self.enabled:
            self.records.append((t, event, pid, node, occupancy))

    def copies_of(self, pid: int) -> int:
        return self.packets[pid][4]

    def count_segments(self, event: str, node: str, kind: str) -> int:
        """Sum of segment copies over matching records (needs recording on)."""
        total = 0
        for _, ev, pid, where, _ in self.records:
            if ev == event and where == node and self.packets[pid][0] == kind:
                total += self.packets[pid][4]
        return total

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(self.CSV_HEADER)
            writer.writerows(self.records)


class Simulator:
    """Event loop: integer-ns clock, (time, insertion-seq) ordered heap."""

    def __init__(self, log_events: bool = True) -> None:
        self.now = 0
        self.log = EventLog(enabled=log_events)
        self._heap: list[tuple[int, int, Callable[[], None]]] = []
        self._seq = 0

    def schedule(self, t_ns: int, fn: Callable[[], None]) -> None:
        if t_ns < self.now:
            raise ValueError("cannot schedule into the past")
        self._seq += 1
        heapq.heappush(self._heap, (t_ns, self._seq, fn))

    def schedule_in(self, dt_ns: int, fn: Callable[[], None]) -> None:
        self.schedule(self.now + dt_ns, fn)

    def run_until(self, t_ns: int) -> EventLog:
        """Process every event with timestamp <= t_ns, then park the clock at t_ns."""
        heap = self._heap
        while heap and heap[0][0] <= t_ns:
            when, _, fn = heapq.heappop(heap)
            self.now = when
            fn()
        if t_ns > self.now:
            self.now = t_ns
        return self.log

    def run_for(self, dt_ns: int) -> EventLog:
        return self.run_until(self.now + dt_ns)


class Link:
    """Unidirectional link with an egress queue and a serializing server.

    FIFO_DROPTAIL serves packets in arrival order; ROUND_ROBIN_FAIR keeps one
    lane per source host and serves the lanes one packet per turn.  Capacity
    is a shared byte budget in both modes; arrivals that do not fit are
    dropped copy by copy (drop-tail).
    """

    def __init__(
        self,
        sim: Simulator,
        name: str,
        src: str,
        dst: str,
        bandwidth_bps: int,
        prop_delay_ns: int,
        capacity_bytes: int | None = None,
        policy: str = FIFO_DROPTAIL,
    ) -> None:
        if bandwidth_bps <= 0:
            raise ValueError(f"link {name}: bandwidth must be positive")
        if prop_delay_ns < 0:
            raise ValueError(f"link {name}: propagation delay must be non-negative")
        self.sim = sim
        self.name = name
        self.src = src
        self.dst = dst
        self.bandwidth_bps = bandwidth_bps
        self.prop_delay_ns = prop_delay_ns
        self.capacity_bytes = capacity_bytes
        self.policy = policy
        self.occupancy = 0
        self.dropped_copies = 0
        self.deliver: Callable[[Packet], None] | None = None
        self._busy = False
        self._fifo: list[Packet] = []
        self._fifo_head = 0
        self._lanes: dict[str, list[Packet]] = {}
        self._lane_heads: dict[str, int] = {}
        self._lane_order: list[str] = []
        self._lane_idx = 0

    def ser_ns(self, nbytes: int) -> int:
        return serialization_ns(nbytes, self.bandwidth_bps)

    def send(self, pkt: Packet) -> None:
        sim = self.sim
        if self.capacity_bytes is not None:
            free = self.capacity_bytes - self.occupancy
            if pkt.wire_bytes > free:
                fit = max(0, free // pkt.size)
                dropped = pkt.copies - fit
                self.dropped_copies += dropped
                if sim.log.enabled:
                    drop_pkt = replace(pkt, copies=dropped)
                    sim.log.note_packet(drop_pkt)
                    sim.log.record(sim.now, "drop", pkt.pid, self.name, self.occupancy)
                if fit == 0:
                    return
                pkt = replace(pkt, copies=fit)
        self.occupancy += pkt.wire_bytes
        if sim.log.enabled:
            sim.log.note_packet(pkt)
            sim.log.record(sim.now, "enqueue", pkt.pid, self.name, self.occupancy)
        if self.policy == ROUND_ROBIN_FAIR:
            lane = pkt.src
            if lane not in self._lanes:
                self._lanes[lane] = []
                self._lane_heads[lane] = 0
                self._lane_order.append(lane)
            self._lanes[lane].append(pkt)
        else:
            self._fifo.append(pkt)
        if not self._busy:
            self._start_next()

    def _dequeue(self) -> Packet | None:
        if self.policy == ROUND_ROBIN_FAIR:
            n = len(self._lane_order)
            for _ in range(n):
                lane = self._lane_order[self._lane_idx % n]
                self._lane_idx += 1
                queue = self._lanes[lane]
                head = self._lane_heads[lane]
                if head < len(queue):
                    pkt = queue[head]
                    self._lane_heads[lane] = head + 1
                    if head + 1 >= len(queue):
                        queue.clear()
                        self._lane_heads[lane] = 0
                    return pkt
            return None
        if self._fifo_head < len(self._fifo):
            pkt = self._fifo[self._fifo_head]
            self._fifo_head += 1
            if self._fifo_head >= len(self._fifo):
                self._fifo.clear()
                self._fifo_head = 0
            return pkt
        return None

    def _start_next(self) -> None:
        pkt = self._dequeue()
        if pkt is None:
            self._busy = False
            return
        self._busy = True
        self.sim.schedule_in(self.ser_ns(pkt.wire_bytes), lambda: self._finish(pkt))

    def _finish(self, pkt: Packet) -> None:
        sim = self.sim
        self.occupancy -= pkt.wire_bytes
        if sim.log.enabled:
            sim.log.record(sim.now, "depart", pkt.pid, self.name, self.occupancy)
        deliver = self.deliver
        if deliver is not None:
            sim.schedule_in(self.prop_delay_ns, lambda: deliver(pkt))
        self._start_next()


class Node:
    """A host or router: per-kind packet handlers installed by the scenario."""

    def __init__(self, name: str) -> None:
        self.name = name
        self.handlers: dict[str, Callable[[Packet], None]] = {}


class Topology:
    """Nodes, links and static routes; also owns probe and flow plumbing."""

    def __init__(self, sim: Simulator) -> None:
        self.sim = sim
        self.nodes: dict[str, Node] = {}
        self.links: dict[tuple[str, str], Link] = {}
        self.routes: dict[str, dict[str, str]] = {}
        self.sent_copies: dict[tuple[str, str], int] = {}
        self.probes: dict[int, ProbeRecord] = {}
        self._next_pid = 0
        self._next_probe = 0

    def add_node(self, name: str) -> Node:
        node = Node(name)
        self.nodes[name] = node
        self.routes.setdefault(name, {})
        return node

    def add_link(
        self,
        src: str,
        dst: str,
        bandwidth_bps: int,
        prop_delay_ns: int,
        capacity_bytes: int | None = None,
        policy: str = FIFO_DROPTAIL,
    ) -> Link:
        link = Link(
            self.sim,
            f"{src}->{dst}",
            src,
            dst,
            bandwidth_bps,
            prop_delay_ns,
            capacity_bytes,
            policy,
        )
        link.deliver = lambda pkt: self._forward(dst, pkt)
        self.links[(src, dst)] = link
        return link

    def add_route(self, node: str, dst: str, next_hop: str) -> None:
        self.routes[node][dst] = next_hop

    def next_pid(self) -> int:
        self._next_pid += 1
        return self._next_pid

    def send_from(self, host: str, pkt: Packet) -> None:
        """Inject a packet at its origin host."""
        key = (host, pkt.kind)
        self.sent_copies[key] = self.sent_copies.get(key, 0) + pkt.copies
        if self.sim.log.enabled:
            self.sim.log.note_packet(pkt)
            self.sim.log.record(self.sim.now, "send", pkt.pid, host)
        self._forward(host, pkt)

    def sent(self, host: str, kind: str) -> int:
        return self.sent_copies.get((host, kind), 0)

    def _forward(self, node: str, pkt: Packet) -> None:
        if node == pkt.dst:
            self._deliver(node, pkt)
            return
        next_hop = self.routes[node].get(pkt.dst)
        if next_hop is None:
            raise ValueError(f"no route from {node} to {pkt.dst}")
        self.links[(node, next_hop)].send(pkt)

    def _deliver(self, node: str, pkt: Packet) -> None:
        if self.sim.log.enabled:
            self.sim.log.record(self.sim.now, "deliver", pkt.pid, node)
        if pkt.kind == KIND_PING:
            reply = Packet(
                pid=self.next_pid(),
                kind=KIND_PONG,
                src=node,
                dst=pkt.src,
                size=pkt.size,
                probe_id=pkt.probe_id,
            )
            self.send_from(node, reply)
            return
        if pkt.kind == KIND_PONG and pkt.probe_id is not None:
            record = self.probes.get(pkt.probe_id)
            if record is not None and record.recv_time_ns is None:
                record.recv_time_ns = self.sim.now
            return
        handler = self.nodes[node].handlers.get(pkt.kind)
        if handler is not None:
            handler(pkt)

    def send_ping_probe(self, src: str, dst: str, size: int = PING_SIZE) -> ProbeRecord:
        """Launch one echo probe; the record fills in when the reply lands."""
        self._next_probe += 1
        record = ProbeRecord(probe_id=self._next_probe, send_time_ns=self.sim.now)
        self.probes[record.probe_id] = record
        pkt = Packet(
            pid=self.next_pid(),
            kind=KIND_PING,
            src=src,
            dst=dst,
            size=size,
            probe_id=record.probe_id,
        )
        self.send_from(src, pkt)
        return record


class WindowFlow:
    """Ack-clocked fixed-window bulk transfer used as background load.

    The source keeps `window_bytes` in flight; the sink acknowledges every
    second data packet and each ack releases the next packets.  In steady
    state the flow saturates the bottleneck on its path and parks a standing
    queue of roughly (window - bandwidth*RTT) bytes there, which is what
    gives the saturated scenarios their elevated but stable baseline RTT.
    An optional rate cap paces the source below its link speed.
    """

    ACK_EVERY = 2
    ACK_SIZE = 80

    def __init__(
        self,
        topo: Topology,
        src: str,
        dst: str,
        window_bytes: int,
        packet_size: int = 1500,
        rate_bps: int | None = None,
    ) -> None:
        self.topo = topo
        self.src = src
        self.dst = dst
        self.window_bytes = window_bytes
        self.packet_size = packet_size
        self.rate_bps = rate_bps
        self.inflight = 0
        self.running = False
        self._recv_count = 0
        self._next_send_ns = 0
        self.flow_id = f"flow:{src}->{dst}"

    def start(self) -> None:
        if self.rate_bps is not None and self.rate_bps <= 0:
            return
        self.running = True
        sink = self.topo.nodes[self.dst]
        prev_data = sink.handlers.get(KIND_DATA)

        def on_data(pkt: Packet) -> None:
            if pkt.flow != self.flow_id:
                if prev_data is not None:
                    prev_data(pkt)
                return
            for _ in range(pkt.copies):
                self._recv_count += 1
                if self._recv_count % self.ACK_EVERY == 0:
                    ack = Packet(
                        pid=self.topo.next_pid(),
                        kind=KIND_DATA_ACK,
                        src=self.dst,
                        dst=self.src,
                        size=self.ACK_SIZE,
                        flow=self.flow_id,
                    )
                    self.topo.send_from(self.dst, ack)

        sink.handlers[KIND_DATA] = on_data

        source = self.topo.nodes[self.src]
        prev_ack = source.handlers.get(KIND_DATA_ACK)

        def on_ack(pkt: Packet) -> None:
            if pkt.flow != self.flow_id:
                if prev_ack is not None:
                    prev_ack(pkt)
                return
            self.inflight -= self.ACK_EVERY * self.packet_size
            self._pump()

        source.handlers[KIND_DATA_ACK] = on_ack
        self._pump()

    def stop(self) -> None:
        self.running = False

    def _pump(self) -> None:
        if not self.running:
            return
        sim = self.topo.sim
        while self.inflight + self.packet_size <= self.window_bytes:
            if self.rate_bps is not None and sim.now < self._next_send_ns:
                when = self._next_send_ns
                sim.schedule(when, self._pump)
                return
            pkt = Packet(
                pid=self.topo.next_pid(),
                kind=KIND_DATA,
                src=self.src,
                dst=self.dst,
                size=self.packet_size,
                flow=self.flow_id,
            )
            self.inflight += self.packet_size
            if self.rate_bps is not None:
                self._next_send_ns = max(self._next_send_ns, sim.now) + serialization_ns(
                    self.packet_size, self.rate_bps
                )
            self.topo.send_from(self.src, pkt)


def build_topology(cfg, sim: Simulator) -> Topology:
    """Wire the experimental topology from a scenario config.

    Attacker and victim sit on a LAN behind the edge router; the edge's
    uplink to the upstream router is the shared bottleneck and the victim's
    peer lives one hop beyond it.  With attacker_on_lan disabled the attacker
    attaches next to the upstream router instead (spoofed traffic then rides
    the downlink) and its probes target the edge router, so probe replies
    still cross the uplink queue.
    """
    topo = Topology(sim)
    for name in ("attacker", "victim", "peer", "edge", "upstream"):
        topo.add_node(name)

    lan_prop = cfg.lan_prop_us * NS_PER_US
    wan_prop = cfg.wan_prop_us * NS_PER_US

    def duplex(a: str, b: str, bps: int, prop: int) -> None:
        topo.add_link(a, b, bps, prop)
        topo.add_link(b, a, bps, prop)

    duplex("victim", "edge", cfg.lan_bps, lan_prop)
    duplex("peer", "upstream", cfg.lan_bps, lan_prop)
    topo.add_link(
        "edge",
        "upstream",
        cfg.uplink_bps,
        wan_prop,
        capacity_bytes=cfg.uplink_queue_bytes,
        policy=cfg.queue_policy,
    )
    topo.add_link(
        "upstream",
        "edge",
        cfg.downlink_bps,
        wan_prop,
        capacity_bytes=cfg.downlink_queue_bytes,
        policy=cfg.queue_policy,
    )

    if cfg.attacker_on_lan:
        duplex("attacker", "edge", cfg.lan_bps, lan_prop)
        attacker_gw = "edge"
    else:
        duplex("attacker", "upstream", cfg.lan_bps, lan_prop)
        attacker_gw = "upstream"

    for dst in ("victim", "peer", "edge", "upstream"):
        if dst != attacker_gw:
            topo.add_route("attacker", dst, attacker_gw)
    for dst in ("attacker", "peer", "edge", "upstream"):
        if dst != "edge":
            topo.add_route("victim", dst, "edge")
    for dst in ("attacker", "victim", "edge", "upstream"):
        if dst != "upstream":
            topo.add_route("peer", dst, "upstream")

    topo.add_route("edge", "peer", "upstream")
    topo.add_route("edge", "upstream", "upstream")
    topo.add_route("upstream", "victim", "edge")
    topo.add_route("edge", "victim", "victim")
    topo.add_route("upstream", "peer", "peer")
    if cfg.attacker_on_lan:
        topo.add_route("edge", "attacker", "attacker")
        topo.add_route("upstream", "attacker", "edge")
    else:
        topo.add_route("upstream", "attacker", "attacker")
        topo.add_route("edge", "attacker", "upstream")

    return topo
