"""FAST-TCP sender and receiver endpoints."""

from __future__ import annotations

import logging
import math
from collections import deque
from dataclasses import dataclass

from .engine import ACK, DATA, NS, Network, Packet, ns

__all__ = [
    "MIN_CWND",
    "FastConfig",
    "FastState",
    "FastFlow",
    "FastSink",
    "Remedy",
    "fast_window_update",
    "single_flow_equilibrium",
]

log = logging.getLogger(__name__)

MIN_CWND = 2.0


def fast_window_update(cwnd: float, base_rtt: float, rtt: float, alpha: float,
                       gamma: float) -> float:
    """One application of the FAST window rule, floored at :data:`MIN_CWND`."""
    new = gamma * (base_rtt * cwnd / rtt + alpha) + (1.0 - gamma) * cwnd
    return max(new, MIN_CWND)


@dataclass
class FastConfig:
    alpha: float = 50.0
    gamma: float = 0.5
    rtt_ewma_weight: float = 0.25
    # None updates once per measured RTT, otherwise every ``update_interval`` seconds
    update_interval: float | None = None
    start_time: float = 0.0
    stop_time: float | None = None
    initial_cwnd: float = 2.0
    slow_start: bool = False
    # oracle initialisation: start with the true propagation delay as base RTT
    base_rtt_preset: float | None = None
    dupthresh: int = 3
    packet_size: int = 1000
    ack_size: int = 40

    def validate(self) -> list[str]:
        errors = []
        if not self.alpha > 0:
            errors.append("alpha must be > 0")
        if not 0 < self.gamma <= 1:
            errors.append("gamma must be in (0, 1]")
        if not 0 < self.rtt_ewma_weight <= 1:
            errors.append("rtt_ewma_weight must be in (0, 1]")
        if self.update_interval is not None and not self.update_interval > 0:
            errors.append("update_interval must be > 0")
        if self.start_time < 0:
            errors.append("start_time must be >= 0")
        if self.stop_time is not None and self.stop_time <= self.start_time:
            errors.append("stop_time must be after start_time")
        if self.initial_cwnd < MIN_CWND:
            errors.append(f"initial_cwnd must be >= {MIN_CWND}")
        if self.packet_size <= 0 or self.ack_size <= 0:
            errors.append("packet sizes must be > 0")
        return errors


@dataclass(frozen=True)
class FastState:
    cwnd: float
    base_rtt: float
    rtt_est: float
    last_rtt_sample: float
    in_flight: int
    updates: int


class Remedy:
    """Hooks a flow calls into; subclasses override what they need."""

    name = "none"

    def attach(self, flow: "FastFlow") -> None:
        pass

    def on_ack(self, flow: "FastFlow", ack: Packet, sample: float) -> None:
        pass

    def on_update(self, flow: "FastFlow", old: float, new: float) -> None:
        pass

    def on_loss(self, flow: "FastFlow") -> None:
        pass


class FastSink:
    """Receiver: counts delivered data and acknowledges every packet."""

    def __init__(self, net: Network, flow: "FastFlow", route: tuple, ack_size: int):
        self.net = net
        self.flow = flow
        self.route = route
        self.ack_size = ack_size
        self.received = 0
        self.bytes = 0

    def receive(self, pkt: Packet) -> None:
        self.received += 1
        self.bytes += pkt.size
        ack = Packet(pkt.flow_id, pkt.seq, pkt.tx_id, self.ack_size, pkt.sent_at, ACK)
        self.net.send(ack, self.route, self.flow)


class FastFlow:
    """Window-clocked FAST sender.

    Every ACK yields an RTT sample; ``base_rtt`` is the running minimum and
    ``rtt_est`` an exponentially weighted average. The window is recomputed
    with :func:`fast_window_update` once per RTT (or per fixed interval)
    unless a remedy has frozen it.
    """

    def __init__(self, net: Network, flow_id, cfg: FastConfig, fwd_route: tuple,
                 rev_route: tuple, remedy: Remedy | None = None):
        self.net = net
        self.sim = net.sim
        self.flow_id = flow_id
        self.cfg = cfg
        self.fwd_route = fwd_route
        self.sink = FastSink(net, self, rev_route, cfg.ack_size)
        self.remedy = remedy or Remedy()
        self.cwnd = float(cfg.initial_cwnd)
        self.base_rtt = math.inf
        self.rtt_est: float | None = None
        self.last_rtt_sample: float | None = None
        self.frozen = False
        self.active = False
        self.started = False
        self.next_tx = 0
        self.next_seq = 0
        self.outstanding: dict[int, int] = {}
        self._order: deque = deque()
        self._retx: deque = deque()
        self.next_update = 0
        self.updates = 0
        self.sent = 0
        self.acked = 0
        self.losses = 0
        self.last_ack_time = 0
        self.probe_results: list = []
        self.events: list = []
        self._last_progress = -1
        self.remedy.attach(self)
        self.sim.schedule(ns(cfg.start_time), self._on_start)
        if cfg.stop_time is not None:
            self.sim.schedule(ns(cfg.stop_time), self._on_stop)

    # lifecycle

    def _on_start(self, _=None) -> None:
        self.active = self.started = True
        self.cwnd = float(self.cfg.initial_cwnd)
        if self.cfg.base_rtt_preset is not None:
            self.base_rtt = float(self.cfg.base_rtt_preset)
        self.try_send()
        self.sim.schedule_in(ns(1.0), self._watchdog)

    def _on_stop(self, _=None) -> None:
        self.active = False

    @property
    def in_flight(self) -> int:
        return len(self.outstanding)

    def state(self) -> FastState:
        return FastState(self.cwnd, self.base_rtt, self.rtt_est or math.nan,
                         self.last_rtt_sample or math.nan, self.in_flight, self.updates)

    # transmission

    def try_send(self) -> None:
        if not self.active:
            return
        limit = int(self.cwnd)
        out = self.outstanding
        now = self.sim.now
        while len(out) < limit:
            if self._retx:
                seq = self._retx.popleft()
            else:
                seq = self.next_seq
                self.next_seq += 1
            tx = self.next_tx
            self.next_tx += 1
            out[tx] = seq
            self._order.append(tx)
            self.sent += 1
            self.net.send(Packet(self.flow_id, seq, tx, self.cfg.packet_size, now, DATA),
                          self.fwd_route, self.sink)

    def receive(self, ack: Packet) -> None:
        tx = ack.tx_id
        out = self.outstanding
        if out.pop(tx, None) is None:
            return
        now = self.sim.now
        self.acked += 1
        self.last_ack_time = now
        sample = (now - ack.sent_at) / NS
        self.last_rtt_sample = sample
        if sample < self.base_rtt:
            self.base_rtt = sample
        if self.rtt_est is None:
            self.rtt_est = sample
        else:
            self.rtt_est += self.cfg.rtt_ewma_weight * (sample - self.rtt_est)

        order = self._order
        while order and order[0] not in out:
            order.popleft()
        if order and order[0] <= tx - self.cfg.dupthresh:
            while order and order[0] <= tx - self.cfg.dupthresh:
                self._mark_lost(order.popleft())
                while order and order[0] not in out:
                    order.popleft()
            self.remedy.on_loss(self)

        self.remedy.on_ack(self, ack, sample)
        if not self.frozen and now >= self.next_update:
            self.update_window()
            step = self.cfg.update_interval if self.cfg.update_interval else self.rtt_est
            self.next_update = now + ns(step)
        self.try_send()

    def _mark_lost(self, tx: int) -> None:
        seq = self.outstanding.pop(tx)
        self._retx.append(seq)
        self.losses += 1

    def _watchdog(self, _=None) -> None:
        # retransmission timeout: no ACK for a whole period while data is outstanding
        if self.outstanding and self.last_ack_time == self._last_progress:
            for tx in list(self._order):
                if tx in self.outstanding:
                    self._mark_lost(tx)
            self._order.clear()
            self.remedy.on_loss(self)
            self.try_send()
        self._last_progress = self.last_ack_time
        if self.active or self.outstanding:
            period = max(0.2, 4 * (self.rtt_est or 0.25))
            self.sim.schedule_in(ns(period), self._watchdog)

    # congestion control

    def update_window(self) -> float:
        old = self.cwnd
        new = fast_window_update(old, self.base_rtt, self.rtt_est, self.cfg.alpha, self.cfg.gamma)
        if self.cfg.slow_start and new > 2 * old:
            new = 2 * old
        self.cwnd = new
        self.updates += 1
        self.remedy.on_update(self, old, new)
        return self.cwnd

    def resume(self) -> None:
        """Unfreeze the window rule; the next update happens one RTT from now."""
        self.frozen = False
        self.next_update = self.sim.now + ns(self.rtt_est or 0.0)

    def record(self, kind: str, **info) -> None:
        self.events.append({"time": self.sim.now / NS, "flow_id": self.flow_id,
                            "event": kind, **info})


def single_flow_equilibrium(alpha: float = 50.0, capacity_pps: float = 12500.0,
                            prop_delay: float = 0.010, duration: float = 10.0,
                            packet_size: int = 1000, gamma: float = 0.5) -> tuple[float, float]:
    """Run one FAST flow over a single bottleneck; return (rate pkt/s, mean queue pkt).

    Both are averaged over the second half of the run. ``prop_delay`` is the
    round-trip propagation delay, split evenly between the two directions.
    """
    net = Network()
    rate_bps = capacity_pps * packet_size * 8
    net.add_link("fwd", rate_bps, prop_delay / 2)
    net.add_link("rev", rate_bps, prop_delay / 2)
    flow = FastFlow(net, 0, FastConfig(alpha=alpha, gamma=gamma, packet_size=packet_size),
                    net.route("fwd", source="src"), net.route("rev", source="dst"))
    net.finalize()
    half = ns(duration / 2)
    net.sim.run_until(half)
    got0, area0 = flow.sink.received, net.links["fwd"].wait_area(half)
    net.sim.run_until(ns(duration))
    span = duration - half / NS
    rate = (flow.sink.received - got0) / span
    queue = (net.links["fwd"].wait_area(ns(duration)) - area0) / NS / span
    return rate, queue
