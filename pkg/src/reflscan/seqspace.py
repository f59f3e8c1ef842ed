"""32-bit sequence-space arithmetic and closed-form attack cost/delay formulas.

Every sequence and acknowledge number lives on a modular circle (2^32 by
default, smaller powers of two for reduced test spaces).  There is no total
order on the circle: all comparisons are phrased as a forward distance from a
reference point.  Functions here are pure, integer-only (except the delay
formula, which returns seconds) and safe to call from anywhere.
"""

from __future__ import annotations

from dataclasses import dataclass

SEQ_MOD = 1 << 32

#: An effective receive window may never exceed 1 GB (14-bit scale cap).
MAX_EFFECTIVE_WINDOW = 1 << 30

#: Minimum ack look-back accepted by conntrack-style validation.
CONNTRACK_ACK_SLACK = 66000

#: Number of candidate ephemeral ports (random pick from [1025, 65535]).
EPHEMERAL_PORT_SPACE = (1 << 16) - 1025


def seq_diff(a: int, b: int, mod: int = SEQ_MOD) -> int:
    """Forward distance from *b* to *a* on the sequence circle, in [0, mod)."""
    return (a - b) % mod


def seq_add(a: int, n: int, mod: int = SEQ_MOD) -> int:
    """*a* advanced by *n* octets (n may be negative)."""
    return (a + n) % mod


def in_window(seq: int, rcv_nxt: int, window: int, mod: int = SEQ_MOD) -> bool:
    """Zero-length-segment acceptability: seq within [rcv_nxt, rcv_nxt+window).

    A zero receive window accepts nothing.
    """
    if window <= 0:
        return False
    return seq_diff(seq, rcv_nxt, mod) < window


def ack_acceptable_rfc793(ack: int, snd_nxt: int, mod: int = SEQ_MOD) -> bool:
    """Classic ack validation: equal to SND.NXT or lower by at most half the space.

    On the full 32-bit circle the look-back is 2^31, so out of any two acks
    that differ by half the space exactly one is acceptable.
    """
    return seq_diff(snd_nxt, ack, mod) <= mod // 2


def ack_acceptable_conntrack(
    ack: int,
    snd_nxt: int,
    max_win_seen: int,
    slack: int = CONNTRACK_ACK_SLACK,
    mod: int = SEQ_MOD,
) -> bool:
    """Conntrack-style ack validation.

    Accepts acks equal to SND.NXT or lower by at most max(slack, largest
    sender window seen).  The slack floor keeps sessions with tiny windows
    from being over-filtered; it is also what makes the look-back attacker
    inflatable through the advertised-window field.
    """
    return seq_diff(snd_nxt, ack, mod) <= max(slack, max_win_seen)


def reflection_delay(n_segments: int, segment_size: int, bandwidth_bps: int | float) -> float:
    """Seconds of queueing delay added by a burst of equal-size packets.

    This is the FIFO back-of-envelope: a probe entering the queue behind the
    burst waits for all of it to serialize.
    """
    if bandwidth_bps <= 0:
        raise ValueError("bandwidth must be positive")
    return n_segments * segment_size * 8 / bandwidth_bps


def blind_attempt_count(win_a: int, win_b: int, port_space: int = EPHEMERAL_PORT_SPACE) -> int:
    """Expected attempts to blindly forge one fully acceptable segment.

    The attacker must hit the ephemeral port, an in-window sequence number
    and an acceptable acknowledge number at the same time.
    """
    if win_a <= 0 or win_b <= 0:
        raise ValueError("window sizes must be positive")
    return port_space * SEQ_MOD * SEQ_MOD // (win_a * win_b)


def blind_reset_attempt_count(port_space: int = EPHEMERAL_PORT_SPACE) -> int:
    """Attempts to blindly reset a connection under strict RST validation.

    Strict validation requires the exact next expected sequence number, so
    only the port and one full sequence number must be guessed.
    """
    return port_space * SEQ_MOD


def amplification_factor(mtu: int, ack_size: int) -> int:
    """Data bytes elicited per spoofed byte in a duplicate-ACK burst (floored)."""
    if ack_size <= 0:
        raise ValueError("ack size must be positive")
    return mtu // ack_size


@dataclass(frozen=True)
class WindowSize:
    """Advertised 16-bit window field plus the scale negotiated at setup."""

    advertised: int
    scale: int = 0

    def __post_init__(self) -> None:
        if not 0 <= self.advertised <= 0xFFFF:
            raise ValueError("advertised window field must fit in 16 bits")
        if self.scale < 0:
            raise ValueError("scale factor must be non-negative")
        if self.effective > MAX_EFFECTIVE_WINDOW:
            raise ValueError("effective window above 1 GB is not allowed")

    @property
    def effective(self) -> int:
        """Window in octets: advertised field shifted by the scale factor."""
        return self.advertised << self.scale


@dataclass(frozen=True)
class AckWindowRange:
    """Acceptable-ack interval [upper - depth, upper] on the sequence circle."""

    upper: int
    depth: int
    mod: int = SEQ_MOD

    def __contains__(self, ack: int) -> bool:
        return seq_diff(self.upper, ack, self.mod) <= self.depth
