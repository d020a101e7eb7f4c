"""Deterministic packet-level discrete-event engine.

Time is an integer number of nanoseconds everywhere inside the engine.
Links are store-and-forward FIFO servers with tail drop. Departure times are
computed when a packet joins a link, so a transmission finishing is not an
event of its own: the only events are a packet reaching a link that merges
several upstream links, and a packet reaching its endpoint. A link fed by a
single upstream link (and unbounded) is traversed inline, which keeps FIFO
order because its arrivals are produced in time order.
"""

from __future__ import annotations

import heapq
from collections import deque
from dataclasses import dataclass, field

__all__ = [
    "NS",
    "DATA",
    "ACK",
    "BACKGROUND",
    "SchedulingError",
    "RunawayError",
    "Simulator",
    "Packet",
    "Link",
    "Network",
    "ns",
]

NS = 1_000_000_000
DATA, ACK, BACKGROUND = 0, 1, 2
KIND_NAMES = ("data", "ack", "background")


def ns(seconds: float) -> int:
    """Seconds to integer nanoseconds."""
    return int(round(seconds * NS))


class SchedulingError(RuntimeError):
    """An event was scheduled before the current clock."""


class RunawayError(RuntimeError):
    """The event-count safety cap was exceeded."""


class Simulator:
    """Event queue and clock. Ties are dispatched in insertion order."""

    def __init__(self, max_events: int = 500_000_000):
        self.now = 0
        self.max_events = max_events
        self.dispatched = 0
        self._heap: list = []
        self._seq = 0
        self._stop = False

    def schedule(self, at: int, fn, arg=None) -> None:
        if at < self.now:
            raise SchedulingError(f"event at {at} ns is before now={self.now} ns")
        self._seq += 1
        heapq.heappush(self._heap, (at, self._seq, fn, arg))

    def schedule_in(self, delay: int, fn, arg=None) -> None:
        self.schedule(self.now + delay, fn, arg)

    def stop(self) -> None:
        """Finish the current ``run_until`` after the running event."""
        self._stop = True

    @property
    def pending(self) -> int:
        return len(self._heap)

    def pending_events(self):
        return (entry[2:] for entry in self._heap)

    def run_until(self, t_end: int) -> int:
        """Dispatch every event with timestamp <= ``t_end``; returns the clock."""
        heap = self._heap
        pop = heapq.heappop
        cap = self.max_events
        count = self.dispatched
        self._stop = False
        try:
            while heap and heap[0][0] <= t_end:
                t, _, fn, arg = pop(heap)
                self.now = t
                fn(arg)
                count += 1
                if count > cap:
                    raise RunawayError(f"more than {cap} events dispatched")
                if self._stop:
                    return self.now
        finally:
            self.dispatched = count
        if t_end > self.now:
            self.now = t_end
        return self.now


class Packet:
    __slots__ = ("flow_id", "seq", "tx_id", "size", "sent_at", "kind", "route", "hop", "dest")

    def __init__(self, flow_id, seq, tx_id, size, sent_at, kind):
        self.flow_id = flow_id
        self.seq = seq
        self.tx_id = tx_id
        self.size = size
        self.sent_at = sent_at
        self.kind = kind
        self.route = ()
        self.hop = 0
        self.dest = None

    def __repr__(self):
        return (f"Packet({KIND_NAMES[self.kind]}, flow={self.flow_id}, seq={self.seq}, "
                f"size={self.size}, sent_at={self.sent_at})")


class Link:
    """One direction of a link plus the FIFO buffer in front of it.

    ``capacity`` counts packets waiting for transmission (the packet being
    serialised is not in the buffer); 0 means unbounded. A ``monitored``
    link is never traversed inline, so its buffer state is exact at the
    current clock. ``trace``, when set to a list, receives
    ``(arrival, start, size)`` per packet with ``start = -1`` for drops.
    """

    __slots__ = ("name", "rate_bps", "prop", "capacity", "busy_until", "waiting", "inline",
                 "feeders", "arrivals", "drops", "bytes_out", "packets_out", "area_done",
                 "trace", "monitored", "_tx")

    def __init__(self, name: str, rate_bps: float, prop_delay: float, capacity: int = 0):
        if not rate_bps > 0:
            raise ValueError(f"link {name}: rate must be > 0")
        if prop_delay < 0 or capacity < 0:
            raise ValueError(f"link {name}: delay and capacity must be >= 0")
        self.name = name
        self.rate_bps = float(rate_bps)
        self.prop = ns(prop_delay)
        self.capacity = int(capacity)
        self.busy_until = 0
        self.waiting = deque()  # (arrival, start, size) of packets not yet on the wire
        self.inline = False
        self.feeders = set()
        self.arrivals = 0
        self.drops = 0
        self.bytes_out = 0
        self.packets_out = 0
        self.area_done = 0
        self.trace = None
        self.monitored = False
        self._tx = {}

    def tx_time(self, size: int) -> int:
        t = self._tx.get(size)
        if t is None:
            t = self._tx[size] = int(round(size * 8 * NS / self.rate_bps))
        return t

    @property
    def packet_rate(self) -> float:
        """Packets per second for 1000-byte packets."""
        return self.rate_bps / 8000.0

    def _retire(self, now: int) -> None:
        w = self.waiting
        while w and w[0][1] <= now:
            arr, start, _ = w.popleft()
            self.area_done += start - arr

    def occupancy(self, now: int) -> int:
        """Packets waiting in the buffer at ``now``."""
        self._retire(now)
        count = 0
        for arr, _, _ in self.waiting:
            if arr > now:
                break
            count += 1
        return count

    def byte_occupancy(self, now: int) -> int:
        self._retire(now)
        total = 0
        for arr, _, size in self.waiting:
            if arr > now:
                break
            total += size
        return total

    def wait_area(self, now: int) -> int:
        """Integral of the buffer occupancy from time 0 to ``now`` (packet-ns).

        Queries must not go back in time: packets that started service
        before an earlier query are folded into a running total.
        """
        self._retire(now)
        partial = 0
        for arr, _, _ in self.waiting:
            if arr > now:
                break
            partial += now - arr
        return self.area_done + partial

    def __repr__(self):
        return f"Link({self.name!r}, {self.rate_bps:g} b/s, {self.prop} ns)"


@dataclass
class Counters:
    injected: list = field(default_factory=lambda: [0, 0, 0])
    delivered: list = field(default_factory=lambda: [0, 0, 0])
    dropped: list = field(default_factory=lambda: [0, 0, 0])


class Network:
    """Links, routes and packet transport on top of a :class:`Simulator`."""

    def __init__(self, sim: Simulator | None = None):
        self.sim = sim or Simulator()
        self.links: dict[str, Link] = {}
        self.counters = Counters()
        self._finalized = False
        self._arrive_cb = self._arrive
        self._deliver_cb = self._deliver
        self.drop_listeners = []

    def add_link(self, name: str, rate_bps: float, prop_delay: float, capacity: int = 0) -> Link:
        if name in self.links:
            raise ValueError(f"duplicate link {name}")
        link = self.links[name] = Link(name, rate_bps, prop_delay, capacity)
        return link

    def route(self, *names: str, source: str) -> tuple:
        """Register a path; ``source`` names the host injecting into the first link."""
        if self._finalized:
            raise RuntimeError("routes must be declared before finalize()")
        links = tuple(self.links[n] for n in names)
        if not links:
            raise ValueError("empty route")
        links[0].feeders.add(("host", source))
        for prev, nxt in zip(links, links[1:]):
            nxt.feeders.add(("link", prev.name))
        return links

    def finalize(self) -> None:
        for link in self.links.values():
            only = next(iter(link.feeders)) if len(link.feeders) == 1 else None
            link.inline = (only is not None and only[0] == "link" and link.capacity == 0
                           and not link.monitored)
        self._finalized = True

    def base_delay(self, route: tuple, size: int) -> int:
        """Delay through ``route`` for a packet of ``size`` bytes when every queue is empty."""
        return sum(link.prop + link.tx_time(size) for link in route)

    def send(self, pkt: Packet, route: tuple, dest) -> None:
        """Inject ``pkt`` at the current time; ``dest.receive(pkt)`` runs on arrival."""
        if not self._finalized:
            self.finalize()
        pkt.route = route
        pkt.hop = 0
        pkt.dest = dest
        self.counters.injected[pkt.kind] += 1
        self._forward(pkt, self.sim.now)

    def _arrive(self, pkt: Packet) -> None:
        self._forward(pkt, self.sim.now)

    def _deliver(self, pkt: Packet) -> None:
        self.counters.delivered[pkt.kind] += 1
        pkt.dest.receive(pkt)

    def _forward(self, pkt: Packet, t: int) -> None:
        route = pkt.route
        size = pkt.size
        while True:
            link = route[pkt.hop]
            w = link.waiting
            while w and w[0][1] <= t:
                arr, start, _ = w.popleft()
                link.area_done += start - arr
            link.arrivals += 1
            if link.capacity and len(w) >= link.capacity:
                link.drops += 1
                self.counters.dropped[pkt.kind] += 1
                if link.trace is not None:
                    link.trace.append((t, -1, size))
                for listener in self.drop_listeners:
                    listener(link, pkt)
                return
            start = link.busy_until if link.busy_until > t else t
            tx = link._tx.get(size)
            if tx is None:
                tx = link.tx_time(size)
            link.busy_until = start + tx
            if start > t:
                w.append((t, start, size))
            if link.trace is not None:
                link.trace.append((t, start, size))
            link.bytes_out += size
            link.packets_out += 1
            t = start + tx + link.prop
            pkt.hop += 1
            if pkt.hop == len(route):
                self.sim.schedule(t, self._deliver_cb, pkt)
                return
            if not route[pkt.hop].inline:
                self.sim.schedule(t, self._arrive_cb, pkt)
                return

    def in_flight(self) -> list[int]:
        """Packets currently inside the network, per kind, counted from pending events."""
        counts = [0, 0, 0]
        arrive, deliver = self._arrive_cb, self._deliver_cb
        for fn, arg in self.sim.pending_events():
            if fn is arrive or fn is deliver:
                counts[arg.kind] += 1
        return counts

    def check_conservation(self) -> bool:
        """injected == delivered + dropped + in flight, for every packet kind."""
        c = self.counters
        flying = self.in_flight()
        return all(c.injected[k] == c.delivered[k] + c.dropped[k] + flying[k] for k in range(3))
