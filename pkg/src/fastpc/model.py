"""Closed-form and numerically solved equilibrium predictions for FAST flows.

Every function here is pure. Capacities are packets/second, delays are
seconds, windows and backlogs are packets. Shares are fractions of the
bottleneck capacity and depend only on the number of flows.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "FlowParams",
    "PathParams",
    "BacklogVector",
    "StableArrivalSolution",
    "ProbeInversion",
    "ModelDomainError",
    "SolverError",
    "ProbeEstimationError",
    "equilibrium_rate",
    "two_flow_split",
    "sequential_backlog",
    "sequential_shares",
    "sequential_queue_length",
    "stable_arrival",
    "rate_reduction_min_delay",
    "probe_rtt_change",
    "invert_probe",
    "fairness_ratio",
]

GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0

_RESIDUAL_TOL = 1e-10
_INNER_TOL = 1e-13
_MAX_ITER = 200


class ModelDomainError(ValueError):
    """An argument lies outside the domain where the model is defined."""


class SolverError(ArithmeticError):
    """The backlog root finder failed to reach the residual tolerance."""


class ProbeEstimationError(ValueError):
    """The measured RTT change is inconsistent with the probe direction."""


@dataclass(frozen=True)
class FlowParams:
    alpha: float = 50.0
    gamma: float = 0.5

    def __post_init__(self):
        if not self.alpha > 0:
            raise ModelDomainError(f"alpha must be > 0, got {self.alpha}")
        if not 0 < self.gamma <= 1:
            raise ModelDomainError(f"gamma must be in (0, 1], got {self.gamma}")


@dataclass(frozen=True)
class PathParams:
    capacity_c: float
    prop_delay_d: float = 0.0
    tx_time_sum: float = 0.0

    def __post_init__(self):
        if not self.capacity_c > 0:
            raise ModelDomainError("capacity_c must be > 0")
        if self.prop_delay_d < 0 or self.tx_time_sum < 0:
            raise ModelDomainError("delays must be >= 0")

    @property
    def base_rtt(self) -> float:
        return self.prop_delay_d + self.tx_time_sum


@dataclass(frozen=True)
class BacklogVector:
    """Extra-queue coefficients ``a[0..n-1]`` for flows joining one at a time.

    ``a[j-1]`` is the additional backlog, in units of alpha, that builds up
    when the j-th flow joins. The first entry is always 0.
    """

    a: np.ndarray

    def __len__(self):
        return len(self.a)

    @property
    def total(self) -> float:
        return float(np.sum(self.a))


@dataclass(frozen=True)
class StableArrivalSolution:
    n: int
    a: float
    share_old: float
    share_new: float
    newcomer_backlog: float

    @property
    def unfairness(self) -> float:
        """Newcomer rate over incumbent rate."""
        return self.share_new / self.share_old


@dataclass(frozen=True)
class ProbeInversion:
    theta: float
    t_eps: float
    delta_r: float
    n_hat: float
    c_hat: float
    d_corrected: float
    w_reset: float
    clamped: bool = False

    @property
    def n_rounded(self) -> int:
        return max(0, int(round(self.n_hat)))


def equilibrium_rate(alpha: float, queueing_delay: float) -> float:
    """Rate a FAST flow settles at when it sees ``queueing_delay`` seconds of queue."""
    if not queueing_delay > 0:
        raise ModelDomainError(
            f"equilibrium undefined for queueing delay {queueing_delay!r} (empty buffer)")
    return alpha / queueing_delay


def two_flow_split() -> tuple[float, float, float]:
    """Shares of the older and newer flow when the second joins a settled first.

    Returns ``(share_first, share_second, a)``.
    """
    a = GOLDEN
    return 1.0 - a, a, a


def _solve_coefficient(c: np.ndarray, guess: float, hi: float) -> float:
    # Root of f(a) = sum(1/(c+a)) - 1 on [0, hi]; f is convex and strictly
    # decreasing, f(0) > 0 and f(hi) < 0. Newton, bisecting when a step
    # leaves the current bracket.
    lo = 0.0
    x = min(max(guess, lo), hi)
    for _ in range(_MAX_ITER):
        inv = 1.0 / (c + x)
        f = inv.sum() - 1.0
        if abs(f) < _INNER_TOL:
            return x
        if f > 0:
            lo = x
        else:
            hi = x
        nxt = x + f / (inv @ inv)
        if not lo < nxt < hi:
            nxt = 0.5 * (lo + hi)
        if nxt == x:
            break
        x = nxt
    if abs((1.0 / (c + x)).sum() - 1.0) < _RESIDUAL_TOL:
        return x
    raise SolverError(f"backlog solver did not converge for {len(c)} flows")


def _solve_sequential(n: int) -> tuple[np.ndarray, np.ndarray]:
    """Return the coefficients and the final denominators ``1 + n - i + sum_{k>=i} a_k``."""
    if n < 0:
        raise ModelDomainError("n must be >= 0")
    a = np.zeros(n)
    if n == 0:
        return a, np.zeros(0)
    # c[i] holds 1 + (j - i) + sum_{k=i}^{j-1} a_k for the flows present at step j
    c = np.ones(n)
    for j in range(1, n):
        c[:j] += 1.0 + a[j - 1]
        c[j] = 1.0
        cj = c[: j + 1]
        x = _solve_coefficient(cj, a[j - 1] + 0.5, float(j + 1))
        if abs((1.0 / (cj + x)).sum() - 1.0) >= _RESIDUAL_TOL:
            raise SolverError(f"residual above tolerance at prefix {j + 1}")
        a[j] = x
    return a, c + a[n - 1]


def sequential_backlog(n: int) -> BacklogVector:
    """Backlog coefficients for ``n`` flows that each join after the previous one settled."""
    a, _ = _solve_sequential(int(n))
    return BacklogVector(a)


def sequential_shares(n: int) -> np.ndarray:
    """Normalised throughput of each flow, oldest first, after ``n`` sequential arrivals."""
    if n < 1:
        raise ModelDomainError("n must be >= 1")
    _, denom = _solve_sequential(int(n))
    return 1.0 / denom


def sequential_queue_length(n: int, alpha: float) -> float:
    """Bottleneck backlog in packets once ``n`` sequential flows have settled."""
    if n < 1 or not alpha > 0:
        raise ModelDomainError("need n >= 1 and alpha > 0")
    vec = sequential_backlog(n)
    return alpha * (n + vec.total)


def stable_arrival(n: int, alpha: float = 1.0) -> StableArrivalSolution:
    """One flow joining ``n`` flows that already share the link fairly."""
    if n < 1:
        raise ModelDomainError("n must be >= 1")
    a = (math.sqrt(1.0 + 4.0 * n) - 1.0) / 2.0
    return StableArrivalSolution(
        n=int(n),
        a=a,
        share_old=1.0 / (n + 1.0 + a),
        share_new=1.0 / (1.0 + a),
        newcomer_backlog=alpha * (1.0 + a),
    )


def rate_reduction_min_delay(n: int, alpha: float, capacity_c: float) -> float:
    """Smallest round-trip propagation delay for which throttling a newcomer drains the queue."""
    if n < 1 or not alpha > 0 or not capacity_c > 0:
        raise ModelDomainError("need n >= 1, alpha > 0, capacity_c > 0")
    return n * alpha * (1.0 + math.sqrt(1.0 + 4.0 * n)) / (2.0 * capacity_c)


def probe_rtt_change(theta: float, t_eps: float, n: int) -> float:
    """RTT change a settled newcomer sees after scaling its window by ``1 - theta``.

    Forward form of the depletion balance for a newcomer sharing with ``n``
    fairly settled flows. Positive when the queue grows (``theta < 0``).
    """
    sol = stable_arrival(n)
    # queue grows at (sending rate - C); the newcomer's rate is C/(1+a)
    return -theta * t_eps * sol.share_new


def invert_probe(theta: float, t_eps: float, delta_r: float, w: float, r: float,
                 base_rtt_est: float, alpha: float) -> ProbeInversion:
    """Infer flow count, capacity and corrected base RTT from a window probe.

    ``delta_r`` is the measured RTT change ``r_eps - r`` (seconds); it is
    positive when the probe grew the queue. ``w`` and ``r`` are the settled
    window and RTT before the probe.

    Raises
    ------
    ProbeEstimationError
        If the response implies fewer than zero competing flows.
    """
    if theta == 0 or not t_eps > 0 or delta_r == 0:
        raise ModelDomainError("need theta != 0, t_eps > 0, delta_r != 0")
    if not w > 0 or not r > base_rtt_est >= 0:
        raise ModelDomainError("need w > 0 and r > base_rtt_est >= 0")
    rho = -theta * t_eps / delta_r
    if rho < 1.0:
        raise ProbeEstimationError(
            f"inconsistent probe response: rho={rho:.6g} (theta={theta}, delta_r={delta_r:.6g})")
    n_hat = rho * (rho - 1.0)
    c_hat = (1.0 + math.sqrt(1.0 + 4.0 * n_hat)) * w / (2.0 * r)
    d_corr = base_rtt_est - n_hat * alpha / c_hat
    clamped = d_corr < 0
    if clamped:
        d_corr = 0.0
    w_reset = alpha + d_corr * c_hat / (n_hat + 1.0)
    return ProbeInversion(theta, t_eps, delta_r, n_hat, c_hat, d_corr, w_reset, clamped)


def fairness_ratio(new_rate: float, old_rates) -> float:
    """``n * new_rate / sum(old_rates)``; 1 means the newcomer gets an equal share."""
    old = np.asarray(list(old_rates), dtype=float)
    if old.size == 0:
        raise ModelDomainError("old_rates must be nonempty")
    if np.any(old < 0) or new_rate < 0:
        raise ModelDomainError("rates must be >= 0")
    total = old.sum()
    if not total > 0:
        raise ModelDomainError("old_rates sum to zero")
    return float(old.size * new_rate / total)
