"""Sender-side corrections for the base-RTT overestimate of late-joining flows.

:class:`RateReduction` throttles a newly settled flow for a couple of RTTs
so its minimum-RTT filter may catch an emptier queue. :class:`DelayProbe`
perturbs the window of a settled flow, infers how many flows share the
bottleneck and its capacity from the RTT response, and subtracts the
queueing bias from the base RTT.
"""

from __future__ import annotations

import logging
import math
from collections import deque
from dataclasses import asdict, dataclass

from .engine import NS, ns
from .fast import MIN_CWND, FastFlow, Remedy
from .model import ModelDomainError, ProbeEstimationError, invert_probe

__all__ = [
    "ProbeConfig",
    "RateReductionConfig",
    "ProbeResult",
    "DelayProbe",
    "RateReduction",
    "make_remedy",
    "REMEDIES",
]

log = logging.getLogger(__name__)

DEAD_ZONE = 0.1


@dataclass
class ProbeConfig:
    theta: float = -0.5
    t_eps_rtts: float = 1.0
    # r* is the mean raw RTT over this many RTTs with the window frozen
    baseline_rtts: float = 1.0
    settle_window: int = 5
    # settled when the last settle_window updates span less than
    # max(settle_tol * w, settle_abs) packets; 1% lets large-window flows probe
    # before they converge (n is overestimated), and the absolute floor absorbs
    # the sub-packet jitter of a packet-level window
    settle_tol: float = 0.001
    settle_abs: float = 1.0
    max_retries: int = 2

    def validate(self) -> list[str]:
        errors = []
        if not -1.0 <= self.theta < 1.0 or self.theta == 0:
            errors.append("remedy.theta must be in [-1, 1) and nonzero")
        if not self.t_eps_rtts > 0:
            errors.append("remedy.t_eps_rtts must be > 0")
        if not self.baseline_rtts > 0:
            errors.append("remedy.baseline_rtts must be > 0")
        if self.settle_window < 1:
            errors.append("remedy.settle_window must be >= 1")
        if not self.settle_tol > 0:
            errors.append("remedy.settle_tol must be > 0")
        if self.settle_abs < 0:
            errors.append("remedy.settle_abs must be >= 0")
        if self.max_retries < 0:
            errors.append("remedy.max_retries must be >= 0")
        return errors


@dataclass
class RateReductionConfig:
    # None divides the window by the flow's alpha
    scale_factor: float | None = None
    throttle_duration_rtts: float = 2.0
    settle_window: int = 5
    settle_tol: float = 0.01
    settle_abs: float = 1.0

    def validate(self) -> list[str]:
        errors = []
        if self.scale_factor is not None and not self.scale_factor > 1:
            errors.append("remedy.scale_factor must be > 1")
        if not self.throttle_duration_rtts > 0:
            errors.append("remedy.throttle_duration_rtts must be > 0")
        if self.settle_window < 1:
            errors.append("remedy.settle_window must be >= 1")
        if not self.settle_tol > 0:
            errors.append("remedy.settle_tol must be > 0")
        if self.settle_abs < 0:
            errors.append("remedy.settle_abs must be >= 0")
        return errors


@dataclass
class ProbeResult:
    time: float
    flow_id: object
    attempt: int
    theta: float
    t_eps: float
    r_star: float
    w_star: float
    delta_r: float
    samples: int
    status: str  # ok | failed_sign | clamped | aborted_loss | no_samples
    n_hat: float = math.nan
    c_hat: float = math.nan
    d_corrected: float = math.nan
    w_reset: float = math.nan
    base_rtt_before: float = math.nan

    @property
    def n_rounded(self) -> int | None:
        if math.isnan(self.n_hat):
            return None
        return max(0, int(round(self.n_hat)))

    def as_row(self) -> dict:
        row = asdict(self)
        row["n_rounded"] = self.n_rounded
        return row


class _SettleDetector:
    """Settled once the last ``window`` updates stay inside a narrow band.

    The band is ``max(tol * mean, abs_tol)`` wide. Judging the whole range
    rather than each step separates a slow drift (many small steps in one
    direction) from the sub-packet jitter a packet-level window never loses.
    """

    def __init__(self, window: int, tol: float, abs_tol: float = 0.0):
        self.window = window
        self.tol = tol
        self.abs_tol = abs_tol
        self.recent = deque(maxlen=window + 1)

    def reset(self) -> None:
        self.recent.clear()

    def feed(self, old: float, new: float) -> bool:
        if not self.recent:
            self.recent.append(old)
        self.recent.append(new)
        if len(self.recent) <= self.window:
            return False
        lo, hi = min(self.recent), max(self.recent)
        return hi - lo < max(self.tol * (hi + lo) / 2, self.abs_tol)


SETTLE, BASELINE, PERTURB, DONE, GAVE_UP = "settle", "baseline", "perturb", "done", "gave_up"


class DelayProbe(Remedy):
    """Window probe that corrects the base RTT once the flow has settled.

    Sequence per attempt: wait for ``settle_window`` small window updates;
    freeze the window and average raw RTT samples for one RTT (``r*``);
    scale the window by ``1 - theta``; average the RTT of packets sent after
    the burst (or pause) and no later than ``t_eps`` into the probe; invert.
    """

    name = "delay_probe"

    def __init__(self, cfg: ProbeConfig | None = None, on_result=None):
        self.cfg = cfg or ProbeConfig()
        self.theta = self.cfg.theta
        self.attempt = 0
        self.state = SETTLE
        self.settle = _SettleDetector(self.cfg.settle_window, self.cfg.settle_tol,
                                      self.cfg.settle_abs)
        self.on_result = on_result
        self.results: list[ProbeResult] = []
        if abs(self.theta) < DEAD_ZONE:
            log.warning("probe theta %.3g is inside the +/-%.1f dead zone; "
                        "estimates will be unreliable", self.theta, DEAD_ZONE)

    def on_update(self, flow: FastFlow, old: float, new: float) -> None:
        if self.state == SETTLE and self.settle.feed(old, new):
            self._begin_baseline(flow)

    def _begin_baseline(self, flow: FastFlow) -> None:
        self.state = BASELINE
        flow.frozen = True
        self._bl_end = flow.sim.now + ns(self.cfg.baseline_rtts * flow.rtt_est)
        self._sum = 0.0
        self._n = 0

    def on_ack(self, flow: FastFlow, ack, sample: float) -> None:
        if self.state == BASELINE:
            self._sum += sample
            self._n += 1
            if flow.sim.now >= self._bl_end:
                self._begin_perturb(flow, self._sum / self._n)
        elif self.state == PERTURB:
            if ack.tx_id < self._first_tx:
                return
            if ack.sent_at <= self._hold_end:
                self._sum += sample
                self._n += 1
            else:
                self._finish(flow)

    def _begin_perturb(self, flow: FastFlow, r_star: float) -> None:
        self.state = PERTURB
        self._r_star = r_star
        self._w_star = flow.cwnd
        self._t0 = flow.sim.now
        self._t_eps = self.cfg.t_eps_rtts * r_star
        self._hold_end = self._t0 + ns(self._t_eps)
        self._sum = 0.0
        self._n = 0
        self._base_before = flow.base_rtt
        flow.cwnd = max((1.0 - self.theta) * self._w_star, MIN_CWND)
        flow.try_send()
        # the burst (theta < 0) has left; the pause (theta > 0) ends at the next send
        self._first_tx = flow.next_tx

    def on_loss(self, flow: FastFlow) -> None:
        if self.state == PERTURB:
            self._fail(flow, self._result(flow, "aborted_loss", math.nan))
        elif self.state == BASELINE:
            flow.resume()
            self.state = SETTLE
            self.settle.reset()

    def _result(self, flow, status, delta_r, inv=None) -> ProbeResult:
        res = ProbeResult(
            time=flow.sim.now / NS, flow_id=flow.flow_id, attempt=self.attempt,
            theta=self.theta, t_eps=self._t_eps, r_star=self._r_star, w_star=self._w_star,
            delta_r=delta_r, samples=self._n, status=status, base_rtt_before=self._base_before)
        if inv is not None:
            res.n_hat = inv.n_hat
            res.c_hat = inv.c_hat
            res.d_corrected = inv.d_corrected
            res.w_reset = inv.w_reset
        return res

    def _finish(self, flow: FastFlow) -> None:
        if self._n == 0:
            self._fail(flow, self._result(flow, "no_samples", math.nan))
            return
        r_eps = self._sum / self._n
        delta_r = r_eps - self._r_star
        try:
            inv = invert_probe(self.theta, self._t_eps, delta_r, self._w_star, self._r_star,
                               self._base_before, flow.cfg.alpha)
        except ProbeEstimationError:
            self._fail(flow, self._result(flow, "failed_sign", delta_r))
            return
        except ModelDomainError:
            self._fail(flow, self._result(flow, "failed_sign", delta_r))
            return
        if inv.clamped:
            self._fail(flow, self._result(flow, "clamped", delta_r, inv))
            return
        res = self._result(flow, "ok", delta_r, inv)
        self._publish(flow, res)
        if inv.d_corrected < flow.base_rtt:
            flow.base_rtt = inv.d_corrected
        flow.cwnd = max(inv.w_reset, MIN_CWND)
        flow.resume()
        self.state = DONE

    def _fail(self, flow: FastFlow, res: ProbeResult) -> None:
        self._publish(flow, res)
        flow.cwnd = self._w_star
        flow.resume()
        if self.attempt < self.cfg.max_retries:
            self.attempt += 1
            self.theta /= 2.0
            self.state = SETTLE
            self.settle.reset()
        else:
            self.state = GAVE_UP

    def _publish(self, flow: FastFlow, res: ProbeResult) -> None:
        self.results.append(res)
        flow.probe_results.append(res)
        flow.record("probe", status=res.status, n_hat=res.n_hat, theta=res.theta)
        if self.on_result is not None:
            self.on_result(res)


class RateReduction(Remedy):
    """Divide the window by ``scale_factor`` for a few RTTs after the first settle."""

    name = "rate_reduction"

    def __init__(self, cfg: RateReductionConfig | None = None):
        self.cfg = cfg or RateReductionConfig()
        self.settle = _SettleDetector(self.cfg.settle_window, self.cfg.settle_tol,
                                      self.cfg.settle_abs)
        self.state = SETTLE

    def on_update(self, flow: FastFlow, old: float, new: float) -> None:
        if self.state == SETTLE and self.settle.feed(old, new):
            self.state = BASELINE
            scale = self.cfg.scale_factor or flow.cfg.alpha
            flow.frozen = True
            flow.cwnd = max(flow.cwnd / scale, MIN_CWND)
            flow.record("throttle_start", base_rtt=flow.base_rtt, cwnd=flow.cwnd)
            flow.sim.schedule_in(ns(self.cfg.throttle_duration_rtts * flow.rtt_est),
                                 self._release, flow)

    def _release(self, flow: FastFlow) -> None:
        flow.record("throttle_end", base_rtt=flow.base_rtt)
        flow.resume()
        self.state = DONE


REMEDIES = ("none", "rate_reduction", "delay_probe")


def make_remedy(name: str, params: dict | None = None, on_result=None) -> Remedy:
    params = dict(params or {})
    if name in (None, "", "none"):
        return Remedy()
    if name == "delay_probe":
        return DelayProbe(ProbeConfig(**params), on_result=on_result)
    if name == "rate_reduction":
        return RateReduction(RateReductionConfig(**params))
    raise ValueError(f"unknown remedy {name!r}; expected one of {', '.join(REMEDIES)}")
