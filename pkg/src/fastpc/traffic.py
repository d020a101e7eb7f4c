"""Pareto ON/OFF background sources (unreliable, unacknowledged)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .engine import BACKGROUND, NS, Network, Packet, ns

__all__ = ["ParetoOnOffConfig", "ParetoOnOff", "BackgroundSink", "pareto_scale", "sample_pareto"]


@dataclass
class ParetoOnOffConfig:
    shape: float = 1.5
    mean_burst: float = 0.1
    mean_idle: float = 0.1
    peak_rate: float = 1e6  # bits/second
    packet_size: int = 1000
    seed: int = 0
    start_time: float = 0.0

    def validate(self) -> list[str]:
        errors = []
        if not self.shape > 1:
            errors.append("background.shape must be > 1 (finite mean)")
        for key in ("mean_burst", "mean_idle", "peak_rate"):
            if not getattr(self, key) > 0:
                errors.append(f"background.{key} must be > 0")
        if self.packet_size <= 0:
            errors.append("background.packet_size must be > 0")
        if self.start_time < 0:
            errors.append("background.start_time must be >= 0")
        return errors

    @property
    def mean_load(self) -> float:
        """Long-run offered load in bits/second."""
        return self.peak_rate * self.mean_burst / (self.mean_burst + self.mean_idle)


def pareto_scale(mean: float, shape: float) -> float:
    return mean * (shape - 1.0) / shape


def sample_pareto(rng: np.random.Generator, mean: float, shape: float, size=None):
    """Inverse-CDF draw: ``scale * U**(-1/shape)`` with U uniform on (0, 1]."""
    u = 1.0 - rng.random(size)
    return pareto_scale(mean, shape) * u ** (-1.0 / shape)


class BackgroundSink:
    def __init__(self):
        self.received = 0
        self.bytes = 0

    def receive(self, pkt: Packet) -> None:
        self.received += 1
        self.bytes += pkt.size


class ParetoOnOff:
    """Alternates Pareto-distributed ON and OFF periods; sends at ``peak_rate`` while ON.

    The source starts with an OFF period so that several sources started
    together do not burst in phase.
    """

    def __init__(self, net: Network, source_id, cfg: ParetoOnOffConfig, route: tuple,
                 sink: BackgroundSink | None = None, rng: np.random.Generator | None = None):
        self.net = net
        self.sim = net.sim
        self.source_id = source_id
        self.cfg = cfg
        self.route = route
        self.sink = sink or BackgroundSink()
        self.rng = rng if rng is not None else np.random.default_rng(cfg.seed)
        self.gap = ns(cfg.packet_size * 8 / cfg.peak_rate)
        self.sent = 0
        self.on_periods: list[float] = []
        self.seq = 0
        self._credit = 0.0
        self._left = 0
        self.sim.schedule(ns(cfg.start_time), self._idle)

    def _draw(self, mean: float) -> int:
        return max(1, ns(float(sample_pareto(self.rng, mean, self.cfg.shape))))

    def _idle(self, _=None) -> None:
        self.sim.schedule_in(self._draw(self.cfg.mean_idle), self._burst)

    def _burst(self, _=None) -> None:
        length = self._draw(self.cfg.mean_burst)
        self.on_periods.append(length / NS)
        # carry the fractional packet over so the long-run load is unbiased
        self._credit += length / self.gap
        count = int(self._credit)
        self._credit -= count
        busy = self._left > 0
        self._left += count
        self.sim.schedule_in(length, self._idle)
        if self._left and not busy:
            self._emit()

    def _emit(self, _=None) -> None:
        pkt = Packet(self.source_id, self.seq, self.seq, self.cfg.packet_size, self.sim.now,
                     BACKGROUND)
        self.seq += 1
        self.sent += 1
        self.net.send(pkt, self.route, self.sink)
        self._left -= 1
        if self._left:
            self.sim.schedule_in(self.gap, self._emit)
