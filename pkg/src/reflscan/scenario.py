"""Scenario configuration and simulation assembly.

A scenario is a flat key=value config (rates, victim model, connection
window, seed, scan parameters) plus the machinery to build a live simulation
from it: topology, victim endpoint with its secrets drawn from the seeded
RNG, conntrack shadow state, peer behavior and background load.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field, fields, replace
from importlib import resources
from pathlib import Path

from . import netsim
from .netsim import (
    FIFO_DROPTAIL,
    KIND_DATA,
    KIND_TCP,
    NS_PER_MS,
    NS_PER_S,
    Packet,
    Simulator,
    Topology,
    WindowFlow,
    serialization_ns,
)
from .seqspace import WindowSize
from .stackmodel import (
    ConnState,
    ConntrackEntry,
    Disposition,
    EndpointState,
    HostModel,
    ResponseThrottle,
    RstPolicy,
    TcpFlags,
    TcpSegment,
    host_process,
)

IDLE = "idle"
DOWNLOAD = "download"
UPLOAD = "upload"

_HOST_MODELS = {m.value: m for m in HostModel}
_RST_POLICIES = {p.value: p for p in RstPolicy}


class ConfigError(ValueError):
    """Raised for malformed or invalid scenario configuration."""


@dataclass
class ScenarioConfig:
    scenario: str = IDLE
    victim_model: str = HostModel.RFC793_BARE.value
    rst_policy: str = RstPolicy.RFC793.value
    throttle_limit: int = 0
    throttle_interval_ms: int = 100

    uplink_bps: int = 320_000
    downlink_bps: int = 2_500_000
    lan_bps: int = 100_000_000
    wan_prop_us: int = 9_000
    lan_prop_us: int = 50
    queue_policy: str = FIFO_DROPTAIL
    uplink_queue_bytes: int = 65_536
    downlink_queue_bytes: int = 262_144
    attacker_on_lan: bool = True

    window_field: int = 32_768
    window_scale: int = 1
    conntrack_ack_slack: int = 66_000
    seq_bits: int = 32
    server_port: int = 443
    true_port: int = 0  # 0 = draw from [port_lo, port_hi) with the seed

    seed: int = 1
    port_lo: int = 1025
    port_hi: int = 65_536
    pings_per_query: int = 5
    seq_pings_per_query: int = 3
    segments_per_target: int = 30
    ports_per_query: int = 100
    ack_values_per_query: int = 25
    assumed_window: int = 0  # 0 = attacker assumes the true effective window
    use_inflation: bool = True
    data_probe: bool = True
    port_known: bool = False
    spike_factor: float = 2.0
    loss_threshold: float = 0.5
    confirm_votes: int = 3
    warmup_probes: int = 5
    attack_start_ms: int = 100
    mtu: int = 1500

    background_rate_bps: int = 0  # 0 = ack-clocked at link speed
    standing_queue_bytes: int = 0  # 0 = calibrated for a ~0.68 s standing delay
    peer_fast_retransmit: bool = False
    event_log: bool = False

    @property
    def seq_mod(self) -> int:
        return 1 << self.seq_bits

    @property
    def host_model(self) -> HostModel:
        return _HOST_MODELS[self.victim_model]

    @property
    def rst_policy_enum(self) -> RstPolicy:
        return _RST_POLICIES[self.rst_policy]

    @property
    def effective_window(self) -> int:
        return self.window_field << self.window_scale

    @property
    def throttle_interval_ns(self) -> int:
        return self.throttle_interval_ms * NS_PER_MS

    def validate(self) -> None:
        for key in ("uplink_bps", "downlink_bps", "lan_bps"):
            if getattr(self, key) <= 0:
                raise ConfigError(f"{key} must be positive")
        if self.scenario not in (IDLE, DOWNLOAD, UPLOAD):
            raise ConfigError(f"unknown scenario: {self.scenario!r}")
        if self.victim_model not in _HOST_MODELS:
            raise ConfigError(f"unknown victim_model: {self.victim_model!r}")
        if self.rst_policy not in _RST_POLICIES:
            raise ConfigError(f"unknown rst_policy: {self.rst_policy!r}")
        if self.queue_policy not in (FIFO_DROPTAIL, netsim.ROUND_ROBIN_FAIR):
            raise ConfigError(f"unknown queue_policy: {self.queue_policy!r}")
        if not 0 <= self.window_field <= 0xFFFF:
            raise ConfigError("window_field must fit in 16 bits")
        if self.seq_bits not in (16, 32):
            raise ConfigError("seq_bits must be 16 or 32")
        if not 0 < self.port_lo < self.port_hi <= 65_536:
            raise ConfigError("port range must satisfy 0 < lo < hi <= 65536")
        if self.true_port and not self.port_lo <= self.true_port < self.port_hi:
            raise ConfigError("true_port outside the configured port range")
        if self.effective_window >= self.seq_mod:
            raise ConfigError("window must be smaller than the sequence space")
        for key in (
            "pings_per_query",
            "seq_pings_per_query",
            "segments_per_target",
            "ports_per_query",
            "ack_values_per_query",
            "warmup_probes",
        ):
            if getattr(self, key) < 1:
                raise ConfigError(f"{key} must be at least 1")
        if self.throttle_limit < 0:
            raise ConfigError("throttle_limit must be >= 0")


_BOOL_WORDS = {"true": True, "yes": True, "1": True, "false": False, "no": False, "0": False}
_FIELD_TYPES = {f.name: f.type for f in fields(ScenarioConfig)}


def parse_config(text: str, source: str = "<config>") -> ScenarioConfig:
    """Parse flat key=value text with # comments into a validated config."""
    values: dict[str, object] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected key=value, got {raw!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        value = value.strip()
        if key not in _FIELD_TYPES:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        ftype = _FIELD_TYPES[key]
        try:
            if ftype == "bool":
                values[key] = _BOOL_WORDS[value.lower()]
            elif ftype == "int":
                values[key] = int(value, 0)
            elif ftype == "float":
                values[key] = float(value)
            else:
                values[key] = value
        except (ValueError, KeyError) as exc:
            raise ConfigError(f"{source}:{lineno}: bad value for {key}: {value!r}") from exc
    cfg = ScenarioConfig(**values)
    cfg.validate()
    return cfg


def builtin_scenarios() -> list[str]:
    root = resources.files("reflscan").joinpath("scenarios")
    return sorted(p.name[: -len(".cfg")] for p in root.iterdir() if p.name.endswith(".cfg"))


def load_scenario(path_or_name: str | Path) -> ScenarioConfig:
    """Load a config file, or a built-in scenario by name (e.g. idle-netfilter)."""
    path = Path(path_or_name)
    if path.is_file():
        return parse_config(path.read_text(), source=str(path))
    builtin = resources.files("reflscan").joinpath("scenarios", f"{path_or_name}.cfg")
    if builtin.is_file():
        return parse_config(builtin.read_text(), source=str(path_or_name))
    raise ConfigError(f"no such config file or built-in scenario: {path_or_name}")


@dataclass
class TruthSecrets:
    """Ground truth of the target connection, for verification only."""

    port: int
    victim_snd_nxt: int
    peer_snd_nxt: int  # equals the victim's RCV.NXT


@dataclass
class Scenario:
    cfg: ScenarioConfig
    sim: Simulator
    topo: Topology
    victim: EndpointState
    conntrack: ConntrackEntry | None
    truth: TruthSecrets
    attacker_rng: random.Random
    flows: list[WindowFlow] = field(default_factory=list)
    reflected_segments: int = 0
    amplified_segments: int = 0

    @property
    def ping_target(self) -> str:
        return "upstream" if self.cfg.attacker_on_lan else "edge"

    @property
    def uplink(self) -> netsim.Link:
        return self.topo.links[("edge", "upstream")]

    @property
    def downlink(self) -> netsim.Link:
        return self.topo.links[("upstream", "edge")]


def _install_victim(scn: Scenario) -> None:
    cfg = scn.cfg
    topo = scn.topo
    model = cfg.host_model
    throttle = (
        ResponseThrottle(cfg.throttle_limit, cfg.throttle_interval_ns)
        if cfg.throttle_limit > 0
        else None
    )
    scn.victim.throttle = throttle

    def on_tcp(pkt: Packet) -> None:
        seg = pkt.segment
        if seg is None or scn.victim.state is not ConnState.ESTABLISHED:
            return
        verdict = host_process(model, scn.victim, seg, scn.conntrack)
        response = verdict.response
        if response is None:
            return
        copies = 1 if verdict.disposition is Disposition.CONNECTION_RESET else pkt.copies
        if throttle is not None:
            copies = throttle.allow(topo.sim.now, copies)
            if copies == 0:
                return
        scn.reflected_segments += copies
        out = Packet(
            pid=topo.next_pid(),
            kind=KIND_TCP,
            src="victim",
            dst=_host_of(response.dst_addr),
            size=response.wire_size,
            copies=copies,
            segment=response,
        )
        topo.send_from("victim", out)

    topo.nodes["victim"].handlers[KIND_TCP] = on_tcp


def _host_of(addr: str) -> str:
    # Addresses are host names in this simulator.
    return addr


def _install_peer(scn: Scenario) -> None:
    """Peer-side duplicate-ACK behavior for the fast-retransmit amplifier.

    Only meaningful when the peer is modeled as actively sending: a burst of
    identical pure ACKs arms fast retransmit after the third duplicate, and
    every further duplicate releases one MTU-sized data segment toward the
    victim.  RSTs (and anything else) are absorbed with no side effect.
    Reflected bursts arrive as one aggregated packet, so each such packet is
    treated as one duplicate-ACK train.
    """
    cfg = scn.cfg
    if not cfg.peer_fast_retransmit:
        return
    topo = scn.topo

    def on_tcp(pkt: Packet) -> None:
        seg = pkt.segment
        if seg is None or seg.flags != TcpFlags.ACK or seg.payload_len:
            return
        new_data = max(0, pkt.copies - 3)
        if new_data > 0:
            scn.amplified_segments += new_data
            burst = Packet(
                pid=topo.next_pid(),
                kind=KIND_DATA,
                src="peer",
                dst="victim",
                size=cfg.mtu,
                copies=new_data,
            )
            topo.send_from("peer", burst)

    topo.nodes["peer"].handlers[KIND_TCP] = on_tcp


def _standing_queue_bytes(cfg: ScenarioConfig, link_bps: int) -> int:
    if cfg.standing_queue_bytes:
        return cfg.standing_queue_bytes
    # Sized for a ~0.68 s standing delay, reproducing the saturated baseline.
    return int(0.68 * link_bps / 8)


def _start_background(scn: Scenario) -> None:
    cfg = scn.cfg
    if cfg.scenario == IDLE:
        return
    if cfg.scenario == DOWNLOAD:
        src, dst, link_bps = "peer", "victim", cfg.downlink_bps
    else:
        src, dst, link_bps = "victim", "peer", cfg.uplink_bps
    standing = _standing_queue_bytes(cfg, link_bps)
    bdp = int(link_bps * 0.022 / 8)  # bandwidth times the unloaded RTT
    flow = WindowFlow(
        scn.topo,
        src,
        dst,
        window_bytes=standing + bdp,
        rate_bps=cfg.background_rate_bps or None,
    )
    flow.start()
    scn.flows.append(flow)


def build_scenario(cfg: ScenarioConfig) -> Scenario:
    """Assemble a runnable simulation with seeded secrets."""
    cfg.validate()
    sim = Simulator(log_events=cfg.event_log)
    topo = netsim.build_topology(cfg, sim)

    secrets = random.Random(f"{cfg.seed}:secrets")
    mod = cfg.seq_mod
    port = cfg.true_port or secrets.randrange(cfg.port_lo, cfg.port_hi)
    victim_snd_nxt = secrets.randrange(mod)
    victim_rcv_nxt = secrets.randrange(mod)

    victim = EndpointState(
        local_addr="victim",
        local_port=port,
        remote_addr="peer",
        remote_port=cfg.server_port,
        snd_nxt=victim_snd_nxt,
        rcv_nxt=victim_rcv_nxt,
        rcv_wnd=WindowSize(cfg.window_field, cfg.window_scale),
        rst_policy=cfg.rst_policy_enum,
        mod=mod,
    )
    conntrack = None
    if cfg.host_model is HostModel.LINUX_NETFILTER:
        conntrack = ConntrackEntry(
            local_addr="victim",
            local_port=port,
            remote_addr="peer",
            remote_port=cfg.server_port,
            snd_nxt_est=victim_snd_nxt,
            rcv_nxt_est=victim_rcv_nxt,
            rcv_window=cfg.effective_window,
            scale=cfg.window_scale,
            max_win_seen=cfg.effective_window,
            ack_slack=cfg.conntrack_ack_slack,
            mod=mod,
        )

    scn = Scenario(
        cfg=cfg,
        sim=sim,
        topo=topo,
        victim=victim,
        conntrack=conntrack,
        truth=TruthSecrets(port=port, victim_snd_nxt=victim_snd_nxt, peer_snd_nxt=victim_rcv_nxt),
        attacker_rng=random.Random(f"{cfg.seed}:attacker"),
    )
    _install_victim(scn)
    _install_peer(scn)
    _start_background(scn)
    sim.run_until(cfg.attack_start_ms * NS_PER_MS)
    return scn
