"""Victim-side segment disposition.

Composes a firewall filter (none, Windows-XP style, or Netfilter-conntrack
style) with classic established-state TCP event processing.  The output is a
Verdict: silently drop, respond with an ACK or RST, accept out-of-order data,
or tear the connection down.

The processing rules here are exactly the ones an off-path attacker can poke
at: they decide whether a spoofed segment is answered, and the answer (not
its content) is what leaks through the shared queue.
"""

from __future__ import annotations

import enum
from collections import deque
from dataclasses import dataclass, field

from .seqspace import (
    CONNTRACK_ACK_SLACK,
    SEQ_MOD,
    WindowSize,
    ack_acceptable_conntrack,
    ack_acceptable_rfc793,
    in_window,
)

#: Accounting size of a header-only segment: 40 B layer-2 + 20 B IP + 20 B TCP.
WIRE_OVERHEAD = 80


class TcpFlags(enum.IntFlag):
    SYN = 0x1
    ACK = 0x2
    RST = 0x4
    FIN = 0x8


@dataclass
class TcpSegment:
    """One spoofed or legitimate segment as seen by the victim."""

    src_addr: str
    dst_addr: str
    src_port: int
    dst_port: int
    seq: int
    ack: int
    flags: TcpFlags
    window_field: int = 0
    payload_len: int = 0

    def __post_init__(self) -> None:
        if not 0 <= self.window_field <= 0xFFFF:
            raise ValueError("window field must fit in 16 bits")
        if self.payload_len < 0:
            raise ValueError("payload length must be non-negative")

    @property
    def wire_size(self) -> int:
        return WIRE_OVERHEAD + self.payload_len

    @property
    def carries_data(self) -> bool:
        # FIN consumes sequence space; filters treat it like data of length 1.
        return self.payload_len > 0 or TcpFlags.FIN in self.flags


class ConnState(enum.Enum):
    ESTABLISHED = "established"
    CLOSED = "closed"
    RESET = "reset"


class RstPolicy(enum.Enum):
    RFC793 = "rfc793"
    STRICT_CHALLENGE = "strict_challenge"


class Disposition(enum.Enum):
    SILENT_DROP = "silent_drop"
    RESPOND_ACK = "respond_ack"
    RESPOND_RST = "respond_rst"
    ACCEPT_DATA = "accept_data"
    CONNECTION_RESET = "connection_reset"


@dataclass
class Verdict:
    disposition: Disposition
    response: TcpSegment | None = None


class ResponseThrottle:
    """Sliding-window limiter on responses to rejected segments.

    At most `limit` responses are emitted in any window of `interval_ns`
    nanoseconds.  Mitigation knob: with the limiter active, a reflected burst
    collapses to a trickle and the congestion signal disappears.
    """

    def __init__(self, limit: int, interval_ns: int) -> None:
        if limit <= 0 or interval_ns <= 0:
            raise ValueError("throttle limit and interval must be positive")
        self.limit = limit
        self.interval_ns = interval_ns
        self._emitted: deque[int] = deque()

    def allow(self, now_ns: int, wanted: int = 1) -> int:
        """Number of responses (<= wanted) permitted at time now_ns."""
        while self._emitted and now_ns - self._emitted[0] >= self.interval_ns:
            self._emitted.popleft()
        granted = min(wanted, self.limit - len(self._emitted))
        for _ in range(max(0, granted)):
            self._emitted.append(now_ns)
        return max(0, granted)


@dataclass
class EndpointState:
    """A victim-side connection record (one established connection)."""

    local_addr: str
    local_port: int
    remote_addr: str
    remote_port: int
    snd_nxt: int
    rcv_nxt: int
    rcv_wnd: WindowSize
    state: ConnState = ConnState.ESTABLISHED
    rst_policy: RstPolicy = RstPolicy.RFC793
    throttle: ResponseThrottle | None = None
    corrupted: bool = False
    mod: int = SEQ_MOD

    def matches(self, seg: TcpSegment) -> bool:
        return (
            seg.dst_addr == self.local_addr
            and seg.dst_port == self.local_port
            and seg.src_addr == self.remote_addr
            and seg.src_port == self.remote_port
        )

    def make_ack(self) -> TcpSegment:
        return TcpSegment(
            src_addr=self.local_addr,
            dst_addr=self.remote_addr,
            src_port=self.local_port,
            dst_port=self.remote_port,
            seq=self.snd_nxt,
            ack=self.rcv_nxt,
            flags=TcpFlags.ACK,
            window_field=self.rcv_wnd.advertised,
        )

    def make_rst(self) -> TcpSegment:
        return TcpSegment(
            src_addr=self.local_addr,
            dst_addr=self.remote_addr,
            src_port=self.local_port,
            dst_port=self.remote_port,
            seq=self.snd_nxt,
            ack=self.rcv_nxt,
            flags=TcpFlags.RST,
        )


@dataclass
class ConntrackEntry:
    """Connection-tracking shadow state for the peer-to-victim direction.

    The tracker never sees the endpoint's true state; here it starts exactly
    synchronized with it (firewall and stack share a host in the modeled
    setup) and only max_win_seen evolves, monotonically, from the window
    field of accepted segments.
    """

    local_addr: str
    local_port: int
    remote_addr: str
    remote_port: int
    snd_nxt_est: int
    rcv_nxt_est: int
    rcv_window: int
    scale: int = 0
    max_win_seen: int = 0
    ack_slack: int = CONNTRACK_ACK_SLACK
    mod: int = SEQ_MOD

    def matches(self, seg: TcpSegment) -> bool:
        return (
            seg.dst_addr == self.local_addr
            and seg.dst_port == self.local_port
            and seg.src_addr == self.remote_addr
            and seg.src_port == self.remote_port
        )

    def note_window(self, window_field: int) -> None:
        self.max_win_seen = max(self.max_win_seen, window_field << self.scale)


def rfc793_process(state: EndpointState, seg: TcpSegment) -> Verdict:
    """Established-state event processing for one segment.

    The firewall (if any) has already passed the segment and it matches the
    connection 4-tuple.  Out-of-window segments are acknowledged, valid
    duplicates are silent, in-window SYNs reset, RSTs follow the configured
    policy, and out-of-order data is acknowledged and buffered.
    """
    if not state.matches(seg):
        raise ValueError("segment does not match the connection 4-tuple")
    if state.state is not ConnState.ESTABLISHED:
        return Verdict(Disposition.SILENT_DROP)

    window = state.rcv_wnd.effective
    if not in_window(seg.seq, state.rcv_nxt, window, state.mod):
        return Verdict(Disposition.RESPOND_ACK, state.make_ack())

    if TcpFlags.RST in seg.flags:
        if state.rst_policy is RstPolicy.RFC793 or seg.seq == state.rcv_nxt:
            state.state = ConnState.RESET
            return Verdict(Disposition.CONNECTION_RESET)
        # Strict validation: in-window RST off the exact expected sequence
        # number is challenged with an ACK instead of resetting.
        return Verdict(Disposition.RESPOND_ACK, state.make_ack())

    if TcpFlags.SYN in seg.flags:
        state.state = ConnState.RESET
        return Verdict(Disposition.CONNECTION_RESET, state.make_rst())

    if TcpFlags.ACK not in seg.flags:
        return Verdict(Disposition.SILENT_DROP)

    if not ack_acceptable_rfc793(seg.ack, state.snd_nxt, state.mod):
        return Verdict(Disposition.RESPOND_ACK, state.make_ack())

    if seg.carries_data:
        if seg.seq == state.rcv_nxt:
            # The byte lands exactly at the window start; no reassembly is
            # modeled, the session is just flagged as damaged.
            state.corrupted = True
        return Verdict(Disposition.ACCEPT_DATA, state.make_ack())

    return Verdict(Disposition.SILENT_DROP)


def netfilter_filter(entry: ConntrackEntry, seg: TcpSegment) -> bool:
    """Conntrack-style pre-filter. Returns True when the segment passes.

    Rules: SYN+ACK always passes; anything without ACK is dropped; pure ACKs
    are validated on the acknowledge number only; data-carrying segments are
    additionally sequence-validated.  Accepted segments update the largest
    window seen.
    """
    if not entry.matches(seg):
        return False
    flags = seg.flags
    if TcpFlags.SYN in flags and TcpFlags.ACK in flags:
        entry.note_window(seg.window_field)
        return True
    if TcpFlags.ACK not in flags:
        return False
    if not ack_acceptable_conntrack(
        seg.ack, entry.snd_nxt_est, entry.max_win_seen, entry.ack_slack, entry.mod
    ):
        return False
    if seg.carries_data and not in_window(
        seg.seq, entry.rcv_nxt_est, entry.rcv_window, entry.mod
    ):
        return False
    entry.note_window(seg.window_field)
    return True


def winxp_filter(state: EndpointState, seg: TcpSegment) -> bool:
    """Windows-XP-style firewall: pass any ACK-flagged segment on a known connection.

    Segments addressed to nonexistent connections and segments without the
    ACK flag (bare SYN, bare RST) are silently dropped.
    """
    return state.matches(seg) and TcpFlags.ACK in seg.flags


class HostModel(enum.Enum):
    RFC793_BARE = "rfc793"
    WINXP_FW = "winxp"
    LINUX_NETFILTER = "netfilter"
    CLOSED_PORT_RST = "closed_port_rst"


def host_process(
    model: HostModel,
    state: EndpointState,
    seg: TcpSegment,
    conntrack: ConntrackEntry | None = None,
) -> Verdict:
    """Full host disposition: firewall step then TCP-layer step.

    Segments that do not belong to the tracked connection are silently
    dropped, except under CLOSED_PORT_RST where the host answers them with a
    RST (no firewall, RST responder for closed ports).
    """
    if model is HostModel.CLOSED_PORT_RST:
        if not state.matches(seg):
            rst = TcpSegment(
                src_addr=seg.dst_addr,
                dst_addr=seg.src_addr,
                src_port=seg.dst_port,
                dst_port=seg.src_port,
                seq=seg.ack,
                ack=0,
                flags=TcpFlags.RST,
            )
            return Verdict(Disposition.RESPOND_RST, rst)
        return rfc793_process(state, seg)

    if model is HostModel.RFC793_BARE:
        if not state.matches(seg):
            return Verdict(Disposition.SILENT_DROP)
        return rfc793_process(state, seg)

    if model is HostModel.WINXP_FW:
        if not winxp_filter(state, seg):
            return Verdict(Disposition.SILENT_DROP)
        return rfc793_process(state, seg)

    if model is HostModel.LINUX_NETFILTER:
        if conntrack is None:
            raise ValueError("netfilter host model requires a conntrack entry")
        if not netfilter_filter(conntrack, seg):
            return Verdict(Disposition.SILENT_DROP)
        return rfc793_process(state, seg)

    raise ValueError(f"unknown host model: {model}")
