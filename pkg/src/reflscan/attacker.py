"""The scan engine.

Every secret is recovered the same way: send a batch of spoofed segments
whose acceptance depends on the tested value, interleave latency probes
through the shared bottleneck queue, and classify the probe RTT/loss pattern
as a spike (the victim answered) or silence (it did not).  On top of that
one primitive sit the range port scan, the in-window sequence sweep, the
acceptable-ack search with conntrack window inflation, the binary searches
for both next-send values, and the fast-retransmit amplified probe.
"""

from __future__ import annotations

import enum
from collections import deque
from dataclasses import dataclass, field
from statistics import mean

from .netsim import KIND_TCP, NS_PER_MS, NS_PER_S, Packet, ProbeRecord, serialization_ns
from .scenario import Scenario
from .seqspace import seq_add, seq_diff
from .stackmodel import TcpFlags, TcpSegment

PING_LEAD_MARGIN_NS = 1 * NS_PER_MS
DRAIN_FACTOR = 1.5
MIN_SEARCH_WINDOW = 1 << 10


class ScanFailed(RuntimeError):
    """The victim stopped answering as modeled; the scan cannot conclude."""


class QueryMode(enum.Enum):
    EXPECT_SPIKE = "expect_spike"
    EXPECT_SILENCE = "expect_silence"


class Classification(enum.Enum):
    SPIKE = "spike"
    NO_SPIKE = "no_spike"
    INCONCLUSIVE = "inconclusive"


@dataclass(frozen=True)
class Target:
    """One spoofed-segment shape: every repeat of it is byte-identical."""

    port: int
    seq: int
    ack: int
    flags: TcpFlags
    window_field: int = 0
    payload_len: int = 0


@dataclass
class Query:
    targets: list[Target]
    repeats_per_target: int
    probes: int
    mode: QueryMode = QueryMode.EXPECT_SPIKE

    def __post_init__(self) -> None:
        if self.repeats_per_target < 1 or self.probes < 1:
            raise ValueError("repeats_per_target and probes must be >= 1")


@dataclass
class SpikeVerdict:
    query_id: int
    avg_rtt_s: float | None
    loss_rate: float
    classified: Classification


@dataclass
class SeriesPoint:
    query_id: int
    stage: str
    x_lo: int
    x_hi: int
    avg_rtt_s: float | None
    loss_rate: float
    classification: str


@dataclass
class StageStats:
    name: str
    queries: int = 0
    pings: int = 0
    spoofed_segments: int = 0
    reflected_segments: int = 0
    sim_time_s: float = 0.0
    extras: dict = field(default_factory=dict)


@dataclass
class ScanReport:
    scenario: str
    inferred_port: int | None = None
    inferred_victim_snd_nxt: int | None = None
    inferred_peer_snd_nxt: int | None = None
    queries: int = 0
    pings: int = 0
    spoofed_segments: int = 0
    reflected_segments: int = 0
    scan_time_s: float = 0.0
    success: bool = False
    session_corrupted: bool = False
    stages: list[StageStats] = field(default_factory=list)

    def stage(self, name: str) -> StageStats:
        for stage in self.stages:
            if stage.name == name:
                return stage
        raise KeyError(name)


class ProbeBaseline:
    """Rolling quiet-RTT estimate; only completed non-spike queries feed it."""

    def __init__(self, maxlen: int = 30) -> None:
        self._history: deque[int] = deque(maxlen=maxlen)

    def update(self, rtts_ns: list[int]) -> None:
        self._history.extend(rtts_ns)

    @property
    def rtt_ns(self) -> int:
        if not self._history:
            raise RuntimeError("baseline queried before warm-up")
        return int(mean(self._history))


class AttackEngine:
    """Drives one scan against a built scenario.

    The engine is the outer loop of the simulation: it schedules spoofed
    batches and probes, advances simulated time until the probes resolve,
    and never reads the scenario's ground truth.
    """

    def __init__(self, scenario: Scenario) -> None:
        self.scn = scenario
        self.cfg = scenario.cfg
        self.sim = scenario.sim
        self.topo = scenario.topo
        self.rng = scenario.attacker_rng
        self.baseline = ProbeBaseline()
        self.mod = self.cfg.seq_mod

        gw = "edge" if self.cfg.attacker_on_lan else "upstream"
        self._access_bps = self.topo.links[("attacker", gw)].bandwidth_bps

        self.queries = 0
        self.pings = 0
        self.spoofed_segments = 0
        self.series: list[SeriesPoint] = []
        self.stages: list[StageStats] = []
        self._stage_mark: tuple[int, int, int, int, int] | None = None
        self._stage_name = ""

        # Attacker state accumulated across scan phases.
        self.port: int | None = None
        self.inwindow_seq: int | None = None
        self.acceptable_ack: int | None = None
        self.ack_granularity: int | None = None
        self.victim_snd_nxt: int | None = None
        self.peer_snd_nxt: int | None = None
        self.failed = False

        # One fixed (seq, ack) used by probes that must miss the window; the
        # odds of accidentally landing in-window are window/space per scan.
        self._scan_seq = self.rng.randrange(self.mod)
        self._scan_ack = self.rng.randrange(self.mod)
        self._scan_flags = (
            TcpFlags.SYN | TcpFlags.ACK
            if self.cfg.victim_model == "netfilter"
            else TcpFlags.ACK
        )

    # ------------------------------------------------------------------
    # stage accounting

    def _begin_stage(self, name: str) -> None:
        self._close_stage()
        self._stage_name = name
        self._stage_mark = (
            self.queries,
            self.pings,
            self.spoofed_segments,
            self.scn.reflected_segments,
            self.sim.now,
        )

    def _close_stage(self) -> None:
        if self._stage_mark is None:
            return
        q0, p0, s0, r0, t0 = self._stage_mark
        self.stages.append(
            StageStats(
                name=self._stage_name,
                queries=self.queries - q0,
                pings=self.pings - p0,
                spoofed_segments=self.spoofed_segments - s0,
                reflected_segments=self.scn.reflected_segments - r0,
                sim_time_s=(self.sim.now - t0) / NS_PER_S,
            )
        )
        self._stage_mark = None

    def current_stage_extras(self) -> dict:
        # Extras attach to the most recently closed stage.
        return self.stages[-1].extras

    # ------------------------------------------------------------------
    # probing primitives

    def warm_up(self) -> None:
        """Establish the quiet-RTT baseline before the first query."""
        rtts = []
        for _ in range(self.cfg.warmup_probes):
            rec = self._blocking_ping(horizon_ns=5 * NS_PER_S)
            if rec.rtt_ns is not None:
                rtts.append(rec.rtt_ns)
            self.sim.run_for(5 * NS_PER_MS)
        if not rtts:
            raise ScanFailed("no warm-up probe was answered")
        self.baseline.update(rtts)

    def _blocking_ping(self, horizon_ns: int) -> ProbeRecord:
        rec = self.topo.send_ping_probe("attacker", self.scn.ping_target)
        self.pings += 1
        deadline = rec.send_time_ns + horizon_ns
        while rec.recv_time_ns is None and self.sim.now < deadline:
            self.sim.run_for(NS_PER_MS)
        return rec

    def _spoof_packet(self, target: Target, copies: int) -> None:
        seg = TcpSegment(
            src_addr="peer",
            dst_addr="victim",
            src_port=self.cfg.server_port,
            dst_port=target.port,
            seq=target.seq,
            ack=target.ack,
            flags=target.flags,
            window_field=target.window_field,
            payload_len=target.payload_len,
        )
        pkt = Packet(
            pid=self.topo.next_pid(),
            kind=KIND_TCP,
            src="attacker",
            dst="victim",
            size=seg.wire_size,
            copies=copies,
            segment=seg,
        )
        self.spoofed_segments += copies
        self.topo.send_from("attacker", pkt)

    def reflection_ns(self, segments: int, size: int = 80) -> int:
        """Drain time of a reflected burst through the bottleneck uplink."""
        return serialization_ns(segments * size, self.cfg.uplink_bps)

    def measure_query(
        self,
        q: Query,
        *,
        stage_x: tuple[int, int] | None = None,
        window_offset_ns: int | None = None,
        spike_window_ns: int | None = None,
    ) -> SpikeVerdict:
        """Send one query batch with interleaved probes and classify it.

        Spoofed targets are paced at the attacker's access rate so probes are
        not stuck behind the batch on the first hop.  Probes are spread from
        just after the first target until the expected end of the reflected
        burst; each probe is declared lost when no reply arrives within twice
        the average RTT of the already-answered probes of the same query
        (falling back to the scan baseline for the first one).
        """
        self.queries += 1
        query_id = self.queries
        cfg = self.cfg
        t0 = self.sim.now

        seg_size = 80 + q.targets[0].payload_len
        target_wire = q.repeats_per_target * seg_size
        target_ser = serialization_ns(target_wire, self._access_bps)
        for i, target in enumerate(q.targets):
            when = t0 + i * target_ser
            self.sim.schedule(when, lambda tgt=target: self._spoof_packet(tgt, q.repeats_per_target))

        if spike_window_ns is None:
            spike_window_ns = self.reflection_ns(q.repeats_per_target, seg_size)
        offset = window_offset_ns or 0
        # Targets stream through the LAN pipeline: the last target's
        # reflection reaches the bottleneck after the batch has left the
        # access link plus two more per-target serializations (in and out
        # of the victim's segment).
        lead_batch = (len(q.targets) + 2) * target_ser + PING_LEAD_MARGIN_NS + offset
        # Probes sample the interval during which a reflected burst is still
        # in the bottleneck queue no matter which target triggered it: from
        # the end of the batch until the first target's burst has drained.
        # Batches longer than one burst fall back to trailing the batch.
        window_start = lead_batch + PING_LEAD_MARGIN_NS
        window_end = offset + max(spike_window_ns, lead_batch + spike_window_ns // 2)
        span = max(window_end - window_start, q.probes)

        records: list[ProbeRecord] = []
        ping_times: list[int] = []
        for k in range(q.probes):
            when = t0 + window_start + k * span // q.probes + self.rng.randrange(NS_PER_MS)
            ping_times.append(when)
            self.sim.schedule(when, lambda: records.append(self._send_probe()))

        baseline_ns = self.baseline.rtt_ns
        answered: list[int] = []
        lost = 0
        for k in range(q.probes):
            self.sim.run_until(ping_times[k])
            rec = records[k]
            ref = int(mean(answered)) if answered else baseline_ns
            deadline = 2 * ref
            self.sim.run_until(ping_times[k] + deadline)
            rtt = rec.rtt_ns
            if rtt is not None and rtt <= deadline:
                answered.append(rtt)
            else:
                rec.lost = True
                lost += 1

        if q.mode is QueryMode.EXPECT_SILENCE:
            # Negative searches need the queue fully emptied before any
            # following query, with slack for background jitter.
            drain_until = t0 + lead_batch + int(DRAIN_FACTOR * spike_window_ns)
        else:
            drain_until = t0 + lead_batch + spike_window_ns + 5 * NS_PER_MS
        if drain_until > self.sim.now:
            self.sim.run_until(drain_until)

        avg_ns = int(mean(answered)) if answered else None
        loss_rate = lost / q.probes
        # A probe that returned, but slower than the spike threshold, is
        # evidence of congestion just like a lost one; without this a burst
        # draining near the end of the probe window can hide behind the
        # adaptive loss deadline.
        slow = sum(1 for rtt in answered if rtt > cfg.spike_factor * baseline_ns)
        elevated_rate = (lost + slow) / q.probes
        if not answered and lost == 0:
            classified = Classification.INCONCLUSIVE
        elif (avg_ns is not None and avg_ns > cfg.spike_factor * baseline_ns) or (
            elevated_rate >= cfg.loss_threshold
        ):
            classified = Classification.SPIKE
        else:
            classified = Classification.NO_SPIKE

        if classified is Classification.NO_SPIKE and answered:
            self.baseline.update(answered)

        verdict = SpikeVerdict(
            query_id=query_id,
            avg_rtt_s=None if avg_ns is None else avg_ns / NS_PER_S,
            loss_rate=loss_rate,
            classified=classified,
        )
        x_lo, x_hi = stage_x if stage_x is not None else (0, 0)
        self.series.append(
            SeriesPoint(
                query_id=query_id,
                stage=self._stage_name or "adhoc",
                x_lo=x_lo,
                x_hi=x_hi,
                avg_rtt_s=verdict.avg_rtt_s,
                loss_rate=loss_rate,
                classification=classified.value,
            )
        )
        return verdict

    def _send_probe(self) -> ProbeRecord:
        self.pings += 1
        return self.topo.send_ping_probe("attacker", self.scn.ping_target)

    # ------------------------------------------------------------------
    # port discovery

    def scan_port_range(self, lo: int, hi: int, per_port_segments: int | None = None) -> SpikeVerdict:
        """One range query: did any port in [lo, hi) reflect the batch?"""
        if lo > hi:
            raise ValueError("empty port range")
        repeats = per_port_segments or self.cfg.segments_per_target
        targets = [
            Target(port, self._scan_seq, self._scan_ack, self._scan_flags)
            for port in range(lo, hi)
        ]
        q = Query(targets, repeats, self.cfg.pings_per_query, QueryMode.EXPECT_SPIKE)
        return self.measure_query(q, stage_x=(lo, hi))

    def find_ephemeral_port(self, strategy: str = "range") -> ScanReport:
        """Locate the connection's client port over [port_lo, port_hi).

        Range mode covers the space in ports_per_query chunks, re-tests every
        spiking chunk until one survives, then bisects it down to a single
        port and confirms.  Sequential mode queries one port at a time.
        """
        cfg = self.cfg
        self._begin_stage("port_scan")
        if strategy == "sequential":
            found = self._find_port_sequential()
        elif strategy == "range":
            found = self._find_port_range()
        else:
            raise ValueError(f"unknown strategy: {strategy!r}")
        if found is None:
            self.failed = True
        else:
            self.port = found
        self._close_stage()
        return self.report()

    def _find_port_range(self) -> int | None:
        cfg = self.cfg
        step = cfg.ports_per_query
        ranges = [
            (lo, min(lo + step, cfg.port_hi)) for lo in range(cfg.port_lo, cfg.port_hi, step)
        ]
        spiked = [r for r in ranges if self._range_spikes(*r)]
        rounds = 0
        while len(spiked) > 1 and rounds < 4:
            spiked = [r for r in spiked if self._range_spikes(*r)]
            rounds += 1
        if not spiked:
            return None
        lo, hi = spiked[0]
        while hi - lo > 1:
            mid = (lo + hi) // 2
            if self._range_spikes(lo, mid):
                hi = mid
            else:
                lo = mid
        for _ in range(self.cfg.confirm_votes):
            if not self._range_spikes(lo, lo + 1):
                return None
        return lo

    def _find_port_sequential(self) -> int | None:
        cfg = self.cfg
        hits = [
            port
            for port in range(cfg.port_lo, cfg.port_hi)
            if self._range_spikes(port, port + 1)
        ]
        while len(hits) > 1:
            hits = [port for port in hits if self._range_spikes(port, port + 1)]
        if not hits:
            return None
        port = hits[0]
        for _ in range(cfg.confirm_votes):
            if not self._range_spikes(port, port + 1):
                return None
        return port

    def _range_spikes(self, lo: int, hi: int) -> bool:
        return self.scan_port_range(lo, hi).classified is Classification.SPIKE

    def assume_port(self, port: int) -> None:
        """Take the ephemeral port as given (staged experiments)."""
        self.port = port

    # ------------------------------------------------------------------
    # classic (RFC-793-style) sequence/ack searches

    def _silent(self, target: Target, pings: int | None = None) -> bool:
        """True when a batch of this target draws no response from the victim."""
        q = Query(
            [target],
            self.cfg.segments_per_target,
            pings or self.cfg.seq_pings_per_query,
            QueryMode.EXPECT_SILENCE,
        )
        verdict = self.measure_query(q, stage_x=(target.seq, target.ack))
        if verdict.classified is Classification.INCONCLUSIVE:
            verdict = self.measure_query(q, stage_x=(target.seq, target.ack))
        return verdict.classified is Classification.NO_SPIKE

    def search_inwindow_seq_rfc793(self, assumed_window: int | None = None) -> int:
        """Find a (sequence, ack) pair the victim does not answer.

        Probes sequence values spaced by the assumed window, each with the
        two acknowledge numbers half the space apart (one of them must be
        acceptable).  Queries run one value at a time with a drain pause in
        between: silence, not a spike, is the positive signal here.  When a
        full pass finds nothing the assumed window halves and only the new
        midpoints are probed.
        """
        if self.port is None:
            raise ScanFailed("ephemeral port unknown")
        cfg = self.cfg
        self._begin_stage("seq_search")
        mod = self.mod
        half = mod // 2
        window = assumed_window or cfg.assumed_window or cfg.effective_window
        a0 = self.rng.randrange(mod)
        base = self.rng.randrange(mod)
        min_window = min(MIN_SEARCH_WINDOW, window)
        first_pass = True
        try:
            while window >= min_window:
                candidates: list[tuple[int, int]] = []
                count = mod // window
                for i in range(count):
                    if not first_pass and i % 2 == 0:
                        continue  # even multiples were covered by wider passes
                    seq = seq_add(base, i * window, mod)
                    for ack in (a0, seq_add(a0, half, mod)):
                        target = Target(self.port, seq, ack, TcpFlags.ACK)
                        if self._silent(target):
                            candidates.append((seq, ack))
                for seq, ack in candidates:
                    target = Target(self.port, seq, ack, TcpFlags.ACK)
                    if all(self._silent(target) for _ in range(cfg.confirm_votes)):
                        self.inwindow_seq = seq
                        self.acceptable_ack = ack
                        return seq
                window //= 2
                first_pass = False
            self.failed = True
            raise ScanFailed("no silent sequence number down to the minimum window")
        finally:
            self._close_stage()

    def binary_search_peer_sndnxt(self, inwindow_seq: int | None = None) -> int:
        """Lowest silent sequence number: the victim's RCV.NXT.

        That value equals the peer's SND.NXT; it sits at most one window
        below the verified in-window sequence number.
        """
        seq0 = inwindow_seq if inwindow_seq is not None else self.inwindow_seq
        if seq0 is None or self.acceptable_ack is None:
            raise ScanFailed("verified in-window sequence number required")
        cfg = self.cfg
        self._begin_stage("peer_sndnxt")
        window = cfg.assumed_window or cfg.effective_window
        ack = self.acceptable_ack

        def silent_at(offset: int) -> bool:
            seq = seq_add(seq0, -offset, self.mod)
            return self._silent(Target(self.port, seq, ack, TcpFlags.ACK))

        lo, hi = 0, window  # silent at lo; one window back is always outside
        while hi - lo > 1:
            mid = (lo + hi) // 2
            if silent_at(mid):
                lo = mid
            else:
                hi = mid
        self.peer_snd_nxt = seq_add(seq0, -lo, self.mod)
        self._close_stage()
        return self.peer_snd_nxt

    def binary_search_victim_sndnxt_rfc793(self) -> int:
        """Highest acknowledge number the victim does not answer: its SND.NXT.

        The known acceptable ack bounds SND.NXT inside an arc of half the
        space, so the noiseless search takes exactly log2(space/2) queries.
        """
        if self.inwindow_seq is None or self.acceptable_ack is None:
            raise ScanFailed("verified in-window sequence number required")
        self._begin_stage("victim_sndnxt")
        half = self.mod // 2
        seq = self.inwindow_seq
        a0 = self.acceptable_ack

        def silent_at(offset: int) -> bool:
            ack = seq_add(a0, offset, self.mod)
            return self._silent(Target(self.port, seq, ack, TcpFlags.ACK))

        lo, hi = 0, half  # acceptable at lo; half the space up is not
        while hi - lo > 1:
            mid = (lo + hi) // 2
            if silent_at(mid):
                lo = mid
            else:
                hi = mid
        self.victim_snd_nxt = seq_add(a0, lo, self.mod)
        self._close_stage()
        return self.victim_snd_nxt

    # ------------------------------------------------------------------
    # conntrack-aware searches

    def inflate_conntrack_window(self) -> int:
        """Fool the tracker's largest-window-seen up to its scaled maximum.

        Covers the whole acknowledge space with ACKs spaced by the tracker's
        minimum look-back, each advertising a 0xFFFF window.  Exactly one of
        them passes the ack filter and records the inflated window; its
        out-of-window sequence number makes the endpoint answer with a
        harmless ACK.  Returns the new, much coarser search granularity.
        """
        if self.port is None:
            raise ScanFailed("ephemeral port unknown")
        cfg = self.cfg
        self._begin_stage("inflate")
        slack = cfg.conntrack_ack_slack
        count = self.mod // slack
        base = self.rng.randrange(self.mod)
        t0 = self.sim.now
        ser = serialization_ns(80, self._access_bps)

        def send_cover(i: int) -> None:
            target = Target(
                self.port,
                self._scan_seq,
                seq_add(base, i * slack, self.mod),
                TcpFlags.ACK,
                window_field=0xFFFF,
            )
            self._spoof_packet(target, 1)

        for i in range(count):
            self.sim.schedule(t0 + i * ser, lambda i=i: send_cover(i))
        self.sim.run_until(t0 + count * ser + self.reflection_ns(2) + 20 * NS_PER_MS)

        self.ack_granularity = 0xFFFF << cfg.window_scale
        self._close_stage()
        self.current_stage_extras()["cover_acks"] = count
        self.current_stage_extras()["inflated_window"] = self.ack_granularity
        return self.ack_granularity

    def search_acceptable_ack_netfilter(self, use_inflation: bool | None = None) -> int:
        """Range-search the acknowledge space for one value conntrack accepts.

        Analogous to the port scan: ACK-only segments with an out-of-window
        sequence number pass the filter (and get answered) only when their
        ack is within the tracker's look-back, so the spacing equals that
        look-back and exactly one value per pass reflects.
        """
        if self.port is None:
            raise ScanFailed("ephemeral port unknown")
        cfg = self.cfg
        inflate = cfg.use_inflation if use_inflation is None else use_inflation
        if inflate and self.ack_granularity is None:
            self.inflate_conntrack_window()
        self._begin_stage("ack_search")
        granularity = self.ack_granularity if inflate else cfg.conntrack_ack_slack
        count = self.mod // granularity
        base = self.rng.randrange(self.mod)
        values = [seq_add(base, i * granularity, self.mod) for i in range(count)]

        def chunk_spikes(chunk: list[int]) -> bool:
            targets = [Target(self.port, self._scan_seq, v, TcpFlags.ACK) for v in chunk]
            q = Query(
                targets, cfg.segments_per_target, cfg.pings_per_query, QueryMode.EXPECT_SPIKE
            )
            verdict = self.measure_query(q, stage_x=(chunk[0], chunk[-1]))
            return verdict.classified is Classification.SPIKE

        try:
            step = cfg.ack_values_per_query
            chunks = [values[i : i + step] for i in range(0, len(values), step)]
            spiked = [c for c in chunks if chunk_spikes(c)]
            rounds = 0
            while len(spiked) > 1 and rounds < 4:
                spiked = [c for c in spiked if chunk_spikes(c)]
                rounds += 1
            if not spiked:
                self.failed = True
                raise ScanFailed("no acceptable acknowledge number reflected")
            chunk = spiked[0]
            while len(chunk) > 1:
                mid = len(chunk) // 2
                if chunk_spikes(chunk[:mid]):
                    chunk = chunk[:mid]
                else:
                    chunk = chunk[mid:]
            value = chunk[0]
            for _ in range(cfg.confirm_votes):
                if not chunk_spikes([value]):
                    self.failed = True
                    raise ScanFailed("acceptable acknowledge number failed confirmation")
            self.acceptable_ack = value
            self.ack_granularity = granularity
            return value
        finally:
            self._close_stage()

    def binary_search_victim_sndnxt_netfilter(
        self, acceptable_ack: int | None = None, depth: int | None = None
    ) -> int:
        """Exact SND.NXT within look-back range above the acceptable ack.

        The probe segment keeps its out-of-window sequence number, so a
        reflected ACK means the filter accepted the tested value; the
        highest accepted value is SND.NXT.
        """
        ack0 = acceptable_ack if acceptable_ack is not None else self.acceptable_ack
        depth = depth if depth is not None else self.ack_granularity
        if ack0 is None or depth is None:
            raise ScanFailed("acceptable acknowledge number required")
        cfg = self.cfg
        self._begin_stage("victim_sndnxt")

        def spikes_at(offset: int) -> bool:
            value = seq_add(ack0, offset, self.mod)
            targets = [Target(self.port, self._scan_seq, value, TcpFlags.ACK)]
            q = Query(
                targets, cfg.segments_per_target, cfg.pings_per_query, QueryMode.EXPECT_SPIKE
            )
            verdict = self.measure_query(q, stage_x=(value, value))
            if verdict.classified is Classification.INCONCLUSIVE:
                verdict = self.measure_query(q, stage_x=(value, value))
            return verdict.classified is Classification.SPIKE

        lo, hi = 0, depth + 1  # accepted at lo; beyond the look-back is not
        while hi - lo > 1:
            mid = (lo + hi) // 2
            if spikes_at(mid):
                lo = mid
            else:
                hi = mid
        self.victim_snd_nxt = seq_add(ack0, lo, self.mod)
        self._close_stage()
        return self.victim_snd_nxt

    def probe_peer_sndnxt_data(self, assumed_window: int | None = None) -> int:
        """Recover the peer's SND.NXT with one-byte data probes.

        The filter sequence-validates data segments, so an in-window byte is
        passed through and acknowledged as out-of-order data while anything
        outside is dropped: a positive range search over the sequence space,
        then a binary search for the window start.  Probing the exact window
        start deposits the byte there and corrupts the session; the flag is
        reported, never suppressed.
        """
        if self.port is None or self.acceptable_ack is None:
            raise ScanFailed("port and acceptable acknowledge number required")
        cfg = self.cfg
        self._begin_stage("peer_sndnxt")
        window = assumed_window or cfg.assumed_window or cfg.effective_window
        ack = self.acceptable_ack

        def data_target(seq: int) -> Target:
            return Target(self.port, seq, ack, TcpFlags.ACK, payload_len=1)

        def chunk_spikes(chunk: list[int]) -> bool:
            q = Query(
                [data_target(s) for s in chunk],
                cfg.segments_per_target,
                cfg.pings_per_query,
                QueryMode.EXPECT_SPIKE,
            )
            verdict = self.measure_query(q, stage_x=(chunk[0], chunk[-1]))
            return verdict.classified is Classification.SPIKE

        try:
            base = self.rng.randrange(self.mod)
            hit: int | None = None
            min_window = min(MIN_SEARCH_WINDOW, window)
            while window >= min_window and hit is None:
                values = [seq_add(base, i * window, self.mod) for i in range(self.mod // window)]
                step = cfg.ports_per_query
                chunks = [values[i : i + step] for i in range(0, len(values), step)]
                spiked = [c for c in chunks if chunk_spikes(c)]
                rounds = 0
                while len(spiked) > 1 and rounds < 4:
                    spiked = [c for c in spiked if chunk_spikes(c)]
                    rounds += 1
                if spiked:
                    chunk = spiked[0]
                    while len(chunk) > 1:
                        mid = len(chunk) // 2
                        chunk = chunk[:mid] if chunk_spikes(chunk[:mid]) else chunk[mid:]
                    if all(chunk_spikes([chunk[0]]) for _ in range(cfg.confirm_votes)):
                        hit = chunk[0]
                        break
                window //= 2
            if hit is None:
                self.failed = True
                raise ScanFailed("no in-window data probe reflected")

            lo, hi = 0, window  # in-window at lo; a full window back is not
            while hi - lo > 1:
                mid = (lo + hi) // 2
                if chunk_spikes([seq_add(hit, -mid, self.mod)]):
                    lo = mid
                else:
                    hi = mid
            self.peer_snd_nxt = seq_add(hit, -lo, self.mod)
            return self.peer_snd_nxt
        finally:
            self._close_stage()

    # ------------------------------------------------------------------
    # fast-retransmit amplification

    def fast_retransmit_port_probe(self, port: int, dup_acks: int | None = None) -> SpikeVerdict:
        """Port probe amplified through the peer's fast-retransmit logic.

        A batch to the right port reflects as identical ACKs that the sending
        peer reads as duplicate acknowledgements, releasing one MTU of data
        per duplicate after the third; a wrong port only yields RSTs the peer
        absorbs.  Probes are scheduled after the attacker's own (known-size)
        reflected burst has drained, so only the amplified data burst on the
        downlink registers as a spike.
        """
        cfg = self.cfg
        n = dup_acks or cfg.segments_per_target
        targets = [Target(port, self._scan_seq, self._scan_ack, TcpFlags.ACK)]
        q = Query(targets, n, cfg.pings_per_query, QueryMode.EXPECT_SPIKE)
        self_burst_ns = self.reflection_ns(n) + 10 * NS_PER_MS
        amplified_ns = serialization_ns(max(0, n - 3) * cfg.mtu, cfg.downlink_bps)
        return self.measure_query(
            q,
            stage_x=(port, port + 1),
            window_offset_ns=self_burst_ns,
            spike_window_ns=max(amplified_ns, 10 * NS_PER_MS),
        )

    # ------------------------------------------------------------------
    # reporting

    def report(self, truth=None) -> ScanReport:
        self._close_stage()
        report = ScanReport(
            scenario=self.cfg.scenario,
            inferred_port=self.port,
            inferred_victim_snd_nxt=self.victim_snd_nxt,
            inferred_peer_snd_nxt=self.peer_snd_nxt,
            queries=self.queries,
            pings=self.pings,
            spoofed_segments=self.spoofed_segments,
            reflected_segments=self.scn.reflected_segments,
            scan_time_s=self.sim.now / NS_PER_S,
            session_corrupted=self.scn.victim.corrupted,
            stages=list(self.stages),
        )
        if truth is not None and not self.failed:
            checks = [self.port == truth.port]
            if self.victim_snd_nxt is not None:
                checks.append(self.victim_snd_nxt == truth.victim_snd_nxt)
            if self.peer_snd_nxt is not None:
                checks.append(self.peer_snd_nxt == truth.peer_snd_nxt)
            report.success = self.port is not None and all(checks)
        return report
