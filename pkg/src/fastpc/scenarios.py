"""Scenario description, topology builders, metric collection and sweeps.

A scenario is a flat mapping of dotted keys (``topology.bottleneck_delay=0.005``)
that :meth:`ScenarioSpec.from_mapping` validates and expands into per-flow
settings. Scenario files hold one ``key = value`` pair per line; ``#``
starts a comment.

Two topologies are provided:

``dumbbell``
    Every sender has its own access link into router R1, the bottleneck runs
    R1 -> R2, and every receiver has its own access link out of R2. ACKs come
    back over mirrored, unbounded links.
``parking_lot``
    Routers R1..RH in a chain ending at a common destination D. Incumbent
    flow i enters at router ``min(i + 1, H)``, the newcomer and background
    sources enter at R1, so the last chain link is shared by everybody.
"""

from __future__ import annotations

import csv
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from .engine import NS, Network, ns
from .fast import FastConfig, FastFlow
from .model import fairness_ratio
from .remedies import REMEDIES, ProbeConfig, RateReductionConfig, make_remedy
from .traffic import BackgroundSink, ParetoOnOff, ParetoOnOffConfig

__all__ = [
    "ScenarioError",
    "TopologySpec",
    "FlowSpec",
    "MetricsSpec",
    "ScenarioSpec",
    "MetricsLog",
    "SweepPoint",
    "parse_scenario_text",
    "load_scenario",
    "dump_scenario",
    "build",
    "run_scenario",
    "run_mapping",
    "sweep",
    "check_trace",
    "AXIS_ALIASES",
    "EXPERIMENTS",
]

log = logging.getLogger(__name__)


class ScenarioError(ValueError):
    """Invalid scenario; ``errors`` lists every offending field."""

    def __init__(self, errors):
        if isinstance(errors, str):
            errors = [errors]
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))


# ---------------------------------------------------------------- schema

def _bool(text) -> bool:
    if isinstance(text, bool):
        return text
    low = str(text).strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _opt_float(text):
    if text is None or str(text).strip().lower() in ("", "none", "null"):
        return None
    return float(text)


def _update_mode(text):
    """``per_rtt`` or ``fixed:<seconds>``; a bare number means fixed."""
    if text is None:
        return None
    low = str(text).strip().lower()
    if low in ("per_rtt", "none", ""):
        return None
    if low.startswith("fixed:"):
        low = low[6:]
    return float(low)


TOP_KEYS = {
    "name": (str, ""),
    "duration": (float, 60.0),
    "seed": (int, 1),
    "packet_size": (int, 1000),
    "ack_size": (int, 40),
    "stop_on_probe": (_bool, False),
    "topology.kind": (str, "dumbbell"),
    "topology.bottleneck_rate": (float, 100e6),
    "topology.bottleneck_delay": (float, 0.005),
    "topology.access_rate": (float, 1e9),
    "topology.access_delay": (float, 0.001),
    "topology.hop_count": (int, 5),
    "topology.link_rate": (float, 100e6),
    "topology.link_delay": (float, 0.005),
    "topology.buffer": (int, 0),
    "metrics.interval": (float, 0.1),
    "metrics.window": (float, 0.5),
    "metrics.tail_start": (_opt_float, None),
    "metrics.trace": (_bool, False),
    "flows.count": (int, 1),
    "flows.start_time": (float, 0.0),
    "flows.interval": (float, 0.0),
    "flows.start_jitter": (float, 0.0),
    "newcomer.enabled": (_bool, False),
    "background.count": (int, 0),
    "background.shape": (float, 1.5),
    "background.mean_burst": (float, 0.1),
    "background.mean_idle": (float, 0.1),
    "background.peak_rate": (float, 1e6),
    "background.packet_size": (int, 0),
    "background.seed": (_opt_float, None),
    "background.start_time": (float, 0.0),
}

# keys accepted under flows., flow.<i>. and newcomer.
FLOW_KEYS = {
    "alpha": (float, 50.0),
    "gamma": (float, 0.5),
    "rtt_ewma_weight": (float, 0.25),
    "update_mode": (_update_mode, None),
    "start_time": (float, None),
    "stop_time": (_opt_float, None),
    "remedy": (str, "none"),
    "oracle_base_rtt": (_bool, False),
    "slow_start": (_bool, False),
    "initial_cwnd": (float, 2.0),
    "entry": (int, 0),
}

REMEDY_KEYS = {
    "theta": float,
    "t_eps_rtts": float,
    "baseline_rtts": float,
    "settle_window": int,
    "settle_tol": float,
    "settle_abs": float,
    "max_retries": int,
    "scale_factor": _opt_float,
    "throttle_duration_rtts": float,
}
_PROBE_FIELDS = {f.name for f in fields(ProbeConfig)}
_THROTTLE_FIELDS = {f.name for f in fields(RateReductionConfig)}

AXIS_ALIASES = {
    "n": "flows.count",
    "alpha": "flows.alpha",
    "theta": "newcomer.remedy.theta",
    "bottleneck_delay": "topology.bottleneck_delay",
    "peak_rate": "background.peak_rate",
    "seed": "seed",
}


# ---------------------------------------------------------------- spec types

@dataclass
class TopologySpec:
    kind: str = "dumbbell"
    bottleneck_rate: float = 100e6
    bottleneck_delay: float = 0.005
    access_rate: float = 1e9
    access_delay: float = 0.001
    hop_count: int = 5
    link_rate: float = 100e6
    link_delay: float = 0.005
    buffer: int = 0

    @property
    def capacity_bps(self) -> float:
        return self.bottleneck_rate if self.kind == "dumbbell" else self.link_rate


@dataclass
class FlowSpec:
    flow_id: int
    alpha: float = 50.0
    gamma: float = 0.5
    rtt_ewma_weight: float = 0.25
    update_mode: float | None = None
    start_time: float = 0.0
    stop_time: float | None = None
    remedy: str = "none"
    remedy_params: dict = field(default_factory=dict)
    oracle_base_rtt: bool = False
    slow_start: bool = False
    initial_cwnd: float = 2.0
    entry: int = 0
    newcomer: bool = False


@dataclass
class MetricsSpec:
    interval: float = 0.1
    window: float = 0.5
    tail_start: float | None = None
    trace: bool = False


@dataclass
class ScenarioSpec:
    topology: TopologySpec
    flows: list
    background: list
    duration: float = 60.0
    seed: int = 1
    packet_size: int = 1000
    ack_size: int = 40
    metrics: MetricsSpec = field(default_factory=MetricsSpec)
    stop_on_probe: bool = False
    name: str = ""
    source: dict = field(default_factory=dict)

    @property
    def capacity_pps(self) -> float:
        return self.topology.capacity_bps / (8.0 * self.packet_size)

    @classmethod
    def from_mapping(cls, mapping: dict) -> "ScenarioSpec":
        """Validate a dotted-key mapping; raise :class:`ScenarioError` listing every problem."""
        errors: list[str] = []
        raw = {str(k).strip(): v for k, v in mapping.items()}
        top: dict = {}
        group: dict = {}
        per_flow: dict = {}
        newcomer: dict = {}

        def convert(key, conv, value):
            try:
                return conv(value)
            except (TypeError, ValueError):
                errors.append(f"{key}: cannot parse {value!r}")
                return None

        def flow_key(prefix, rest, value, target):
            if rest.startswith("remedy.") and rest != "remedy":
                pname = rest[7:]
                if pname not in REMEDY_KEYS:
                    errors.append(f"{prefix}{rest}: unknown remedy parameter")
                    return
                target.setdefault("remedy_params", {})[pname] = convert(
                    prefix + rest, REMEDY_KEYS[pname], value)
            elif rest in FLOW_KEYS:
                target[rest] = convert(prefix + rest, FLOW_KEYS[rest][0], value)
            else:
                errors.append(f"{prefix}{rest}: unknown key")

        for key, value in raw.items():
            if key in TOP_KEYS:
                top[key] = convert(key, TOP_KEYS[key][0], value)
            elif key.startswith("flows."):
                flow_key("flows.", key[6:], value, group)
            elif key.startswith("newcomer."):
                flow_key("newcomer.", key[9:], value, newcomer)
            elif key.startswith("flow."):
                parts = key.split(".", 2)
                if len(parts) < 3 or not parts[1].isdigit():
                    errors.append(f"{key}: expected flow.<index>.<key>")
                    continue
                flow_key(f"flow.{parts[1]}.", parts[2], value, per_flow.setdefault(int(parts[1]), {}))
            else:
                errors.append(f"{key}: unknown key")
        if errors:
            raise ScenarioError(errors)

        def get(key):
            return top.get(key, TOP_KEYS[key][1])

        topo = TopologySpec(**{k[9:]: get(k) for k in TOP_KEYS if k.startswith("topology.")})
        metrics = MetricsSpec(**{k[8:]: get(k) for k in TOP_KEYS if k.startswith("metrics.")})
        duration, seed = get("duration"), get("seed")
        packet_size, ack_size = get("packet_size"), get("ack_size")
        rng = np.random.default_rng(np.random.SeedSequence([seed, 0]))

        count = get("flows.count")
        if count < 0:
            errors.append("flows.count must be >= 0")
            count = 0
        for idx in per_flow:
            if not 1 <= idx <= count:
                errors.append(f"flow.{idx}: index outside 1..{count}")
        base_start = group.get("start_time")
        base_start = get("flows.start_time") if base_start is None else base_start
        jitter = get("flows.start_jitter")
        flows = []
        start = base_start
        for i in range(1, count + 1):
            # jitter lengthens each gap, so consecutive starts are >= interval apart
            if i > 1:
                start += get("flows.interval")
                if jitter > 0:
                    start += float(rng.uniform(0.0, jitter))
            settings = {k: v for k, v in group.items() if k != "start_time"}
            settings["start_time"] = start
            own = per_flow.get(i, {})
            params = dict(settings.get("remedy_params", {}))
            params.update(own.get("remedy_params", {}))
            settings.update({k: v for k, v in own.items() if v is not None or k == "stop_time"})
            settings["remedy_params"] = params
            flows.append(FlowSpec(flow_id=i, **settings))
        if get("newcomer.enabled"):
            settings = {k: v for k, v in group.items() if k != "start_time"}
            params = dict(settings.get("remedy_params", {}))
            params.update(newcomer.get("remedy_params", {}))
            settings.update(newcomer)
            settings["remedy_params"] = params
            if settings.get("start_time") is None:
                last = max((f.start_time for f in flows), default=0.0)
                settings["start_time"] = last + 5.0
            flows.append(FlowSpec(flow_id=count + 1, newcomer=True, **settings))
        elif newcomer:
            errors.append("newcomer.* keys given but newcomer.enabled is false")

        background = []
        bg_seed = get("background.seed")
        bg_seed = seed if bg_seed is None else int(bg_seed)
        for k in range(get("background.count")):
            background.append(ParetoOnOffConfig(
                shape=get("background.shape"), mean_burst=get("background.mean_burst"),
                mean_idle=get("background.mean_idle"), peak_rate=get("background.peak_rate"),
                packet_size=get("background.packet_size") or packet_size,
                seed=bg_seed * 1000 + k, start_time=get("background.start_time")))

        spec = cls(topology=topo, flows=flows, background=background, duration=duration,
                   seed=seed, packet_size=packet_size, ack_size=ack_size, metrics=metrics,
                   stop_on_probe=get("stop_on_probe"), name=get("name"), source=dict(raw))
        errors.extend(spec.validate())
        if errors:
            raise ScenarioError(errors)
        return spec

    def validate(self) -> list[str]:
        errors = []
        t = self.topology
        if t.kind not in ("dumbbell", "parking_lot"):
            errors.append(f"topology.kind: unknown topology {t.kind!r}")
        for key in ("bottleneck_rate", "access_rate", "link_rate"):
            if not getattr(t, key) > 0:
                errors.append(f"topology.{key} must be > 0")
        for key in ("bottleneck_delay", "access_delay", "link_delay"):
            if getattr(t, key) < 0:
                errors.append(f"topology.{key} must be >= 0")
        if t.hop_count < 1:
            errors.append("topology.hop_count must be >= 1")
        if t.buffer < 0:
            errors.append("topology.buffer must be >= 0")
        if not self.duration > 0:
            errors.append("duration must be > 0")
        if self.packet_size <= 0 or self.ack_size <= 0:
            errors.append("packet_size and ack_size must be > 0")
        m = self.metrics
        if not m.interval > 0 or not m.window > 0:
            errors.append("metrics.interval and metrics.window must be > 0")
        if m.tail_start is not None and not 0 <= m.tail_start < self.duration:
            errors.append("metrics.tail_start must lie in [0, duration)")
        if not self.flows:
            errors.append("scenario has no flows")
        for f in self.flows:
            tag = "newcomer" if f.newcomer else f"flow.{f.flow_id}"
            cfg = self._fast_config(f)
            errors.extend(f"{tag}.{e}" for e in cfg.validate())
            if not 0 <= f.start_time < self.duration:
                errors.append(f"{tag}.start_time must lie in [0, duration)")
            if f.remedy not in REMEDIES:
                errors.append(f"{tag}.remedy: unknown remedy {f.remedy!r}")
            else:
                errors.extend(f"{tag}.{e}" for e in self._remedy_errors(f))
            if t.kind == "parking_lot" and not 0 <= f.entry <= t.hop_count:
                errors.append(f"{tag}.entry must be in 1..{t.hop_count} (0 = automatic)")
        for b in self.background:
            errors.extend(b.validate())
        return sorted(set(errors), key=errors.index)

    def _remedy_errors(self, f: FlowSpec) -> list[str]:
        params = {k: v for k, v in f.remedy_params.items() if v is not None}
        if f.remedy == "delay_probe":
            unknown = set(params) - _PROBE_FIELDS
            if unknown:
                return [f"remedy.{k}: not a delay_probe parameter" for k in sorted(unknown)]
            return ProbeConfig(**params).validate()
        if f.remedy == "rate_reduction":
            unknown = set(params) - _THROTTLE_FIELDS
            if unknown:
                return [f"remedy.{k}: not a rate_reduction parameter" for k in sorted(unknown)]
            return RateReductionConfig(**params).validate()
        return []

    def _fast_config(self, f: FlowSpec, base_rtt: float | None = None) -> FastConfig:
        return FastConfig(alpha=f.alpha, gamma=f.gamma, rtt_ewma_weight=f.rtt_ewma_weight,
                          update_interval=f.update_mode, start_time=f.start_time,
                          stop_time=f.stop_time, initial_cwnd=f.initial_cwnd,
                          slow_start=f.slow_start, base_rtt_preset=base_rtt,
                          packet_size=self.packet_size, ack_size=self.ack_size)

    @property
    def newcomer(self) -> FlowSpec:
        """The explicit newcomer, otherwise the flow that starts last."""
        for f in self.flows:
            if f.newcomer:
                return f
        return max(self.flows, key=lambda f: (f.start_time, f.flow_id))


def parse_scenario_text(text: str) -> dict:
    mapping = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ScenarioError(f"line {lineno}: expected key = value")
        key, value = line.split("=", 1)
        mapping[key.strip()] = value.strip()
    return mapping


def load_scenario(path) -> dict:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ScenarioError(f"{path}: {exc.strerror or exc}") from None
    return parse_scenario_text(text)


def dump_scenario(mapping: dict) -> str:
    return "".join(f"{k} = {_fmt(v)}\n" for k, v in mapping.items())


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


# ---------------------------------------------------------------- topology

@dataclass
class Built:
    net: Network
    flows: list
    sources: list
    monitored: list  # link names, bottleneck last
    bottleneck: str
    true_base_rtt: dict


def build(spec: ScenarioSpec, on_probe=None) -> Built:
    net = Network()
    t = spec.topology
    cap = t.buffer
    routes = {}
    bg_routes = []
    if t.kind == "dumbbell":
        net.add_link("bn", t.bottleneck_rate, t.bottleneck_delay, cap)
        net.add_link("bn_r", t.bottleneck_rate, t.bottleneck_delay)
        for f in spec.flows:
            i = f.flow_id
            net.add_link(f"up{i}", t.access_rate, t.access_delay)
            net.add_link(f"down{i}", t.access_rate, t.access_delay)
            net.add_link(f"rup{i}", t.access_rate, t.access_delay)
            net.add_link(f"rdown{i}", t.access_rate, t.access_delay)
            routes[i] = (net.route(f"up{i}", "bn", f"down{i}", source=f"S{i}"),
                         net.route(f"rup{i}", "bn_r", f"rdown{i}", source=f"D{i}"))
        for k in range(len(spec.background)):
            net.add_link(f"bgup{k}", t.access_rate, t.access_delay)
            net.add_link(f"bgdown{k}", t.access_rate, t.access_delay)
            bg_routes.append(net.route(f"bgup{k}", "bn", f"bgdown{k}", source=f"B{k}"))
        monitored = ["bn"]
    else:
        h = t.hop_count
        for k in range(1, h + 1):
            net.add_link(f"c{k}", t.link_rate, t.link_delay, cap)
            net.add_link(f"cr{k}", t.link_rate, t.link_delay)
        incumbents = [f for f in spec.flows if not f.newcomer]
        for pos, f in enumerate(incumbents, 1):
            f.entry = f.entry or min(pos + 1, h)
        for f in spec.flows:
            if f.newcomer:
                f.entry = f.entry or 1
        for f in spec.flows:
            i, e = f.flow_id, f.entry
            net.add_link(f"up{i}", t.link_rate, t.link_delay)
            net.add_link(f"rdown{i}", t.link_rate, t.link_delay)
            fwd = [f"up{i}"] + [f"c{k}" for k in range(e, h + 1)]
            rev = [f"cr{k}" for k in range(h, e - 1, -1)] + [f"rdown{i}"]
            routes[i] = (net.route(*fwd, source=f"S{i}"), net.route(*rev, source="D"))
        for k in range(len(spec.background)):
            net.add_link(f"bgup{k}", t.link_rate, t.link_delay)
            bg_routes.append(net.route(f"bgup{k}", *[f"c{j}" for j in range(1, h + 1)],
                                       source=f"B{k}"))
        monitored = [f"c{k}" for k in range(1, h + 1)]
    for name in monitored:
        net.links[name].monitored = True
    if spec.metrics.trace:
        for name in monitored:
            net.links[name].trace = []
    net.finalize()

    flows = []
    true_base = {}
    for f in spec.flows:
        fwd, rev = routes[f.flow_id]
        base = (net.base_delay(fwd, spec.packet_size) + net.base_delay(rev, spec.ack_size)) / NS
        true_base[f.flow_id] = base
        cfg = spec._fast_config(f, base if f.oracle_base_rtt else None)
        params = {k: v for k, v in f.remedy_params.items() if v is not None}
        remedy = make_remedy(f.remedy, params,
                             on_result=(lambda res, fid=f.flow_id: on_probe(fid, res))
                             if on_probe else None)
        flows.append(FastFlow(net, f.flow_id, cfg, fwd, rev, remedy))

    sources = []
    for k, (bcfg, route) in enumerate(zip(spec.background, bg_routes)):
        rng = np.random.default_rng(np.random.SeedSequence([bcfg.seed, 1]))
        sources.append(ParetoOnOff(net, f"bg{k}", bcfg, route, BackgroundSink(), rng))
    return Built(net, flows, sources, monitored, monitored[-1], true_base)


# ---------------------------------------------------------------- metrics

@dataclass
class MetricsLog:
    """Sampled series and the run summary.

    ``throughput``, ``cwnd`` and ``base_rtt`` map flow id to an array aligned
    with ``times``; ``queue`` maps link name to sampled buffer occupancy.
    """

    times: np.ndarray
    throughput: dict
    cwnd: dict
    base_rtt: dict
    queue: dict
    probes: list
    events: list
    drops: dict
    summary: dict

    SERIES = ("throughput", "cwnd", "base_rtt", "queue")

    def rows(self, kind: str):
        data = getattr(self, kind)
        for key, values in data.items():
            for t, v in zip(self.times, values):
                yield float(t), key, float(v)

    def write_csvs(self, out_dir) -> list[Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        written = []
        id_col = {"queue": "queue_id"}
        for kind in self.SERIES:
            path = out / f"{kind}.csv"
            with open(path, "w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(["time", id_col.get(kind, "flow_id"), "value"])
                for t, key, v in self.rows(kind):
                    w.writerow([f"{t:.6f}", key, repr(v)])
            written.append(path)
        path = out / "probes.csv"
        cols = ["time", "flow_id", "attempt", "status", "theta", "t_eps", "r_star", "w_star",
                "delta_r", "samples", "n_hat", "n_rounded", "c_hat", "d_corrected", "w_reset",
                "base_rtt_before"]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(cols)
            for row in self.probes:
                w.writerow([_cell(row.get(c)) for c in cols])
        written.append(path)
        path = out / "events.csv"
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["time", "flow_id", "event", "detail"])
            for ev in self.events:
                extra = ";".join(f"{k}={_cell(v)}" for k, v in ev.items()
                                 if k not in ("time", "flow_id", "event"))
                w.writerow([f"{ev['time']:.9f}", ev["flow_id"], ev["event"], extra])
        written.append(path)
        return written

    def write_summary(self, path) -> Path:
        path = Path(path)
        path.write_text("".join(f"{k}={_cell(v)}\n" for k, v in self.summary.items()))
        return path


def _cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def read_summary(path) -> dict:
    out = {}
    for line in Path(path).read_text().splitlines():
        if "=" in line:
            k, v = line.split("=", 1)
            out[k] = v
    return out


class _Sampler:
    def __init__(self, built: Built, spec: ScenarioSpec):
        self.b = built
        self.sim = built.net.sim
        self.step = ns(spec.metrics.interval)
        self.times = []
        self.received = {f.flow_id: [] for f in built.flows}
        self.cwnd = {f.flow_id: [] for f in built.flows}
        self.base = {f.flow_id: [] for f in built.flows}
        self.queue = {name: [] for name in built.monitored}
        self.conservation_failures = 0
        self.sim.schedule(self.step, self.sample)

    def sample(self, _=None) -> None:
        now = self.sim.now
        self.times.append(now)
        for f in self.b.flows:
            fid = f.flow_id
            self.received[fid].append(f.sink.received)
            self.cwnd[fid].append(f.cwnd if f.started else 0.0)
            self.base[fid].append(f.base_rtt if math.isfinite(f.base_rtt) else math.nan)
        links = self.b.net.links
        for name in self.b.monitored:
            self.queue[name].append(links[name].occupancy(now))
        if not self.b.net.check_conservation():
            self.conservation_failures += 1
        self.sim.schedule_in(self.step, self.sample)


class _TailMark:
    def __init__(self, built: Built, at: int):
        self.b = built
        self.at = at
        self.taken = False
        self.received = {}
        self.area = {}
        built.net.sim.schedule(at, self.take)

    def take(self, _=None) -> None:
        self.taken = True
        self.received = {f.flow_id: f.sink.received for f in self.b.flows}
        self.area = {name: self.b.net.links[name].wait_area(self.at) for name in self.b.monitored}


def default_tail_start(spec: ScenarioSpec, true_base: dict) -> float:
    """Midpoint between (last join + 10 RTTs) and the end of the run."""
    last = max(f.start_time for f in spec.flows)
    rtt = max(true_base.values())
    settled = min(last + 10 * rtt, spec.duration)
    return settled + 0.5 * (spec.duration - settled)


def run_scenario(spec: ScenarioSpec) -> MetricsLog:
    """Build and run ``spec``; deterministic for a given spec and seed."""
    probe_rows = []
    newcomer_id = spec.newcomer.flow_id
    state = {}

    def on_probe(fid, res):
        row = res.as_row()
        probe_rows.append(row)
        if spec.stop_on_probe and fid == newcomer_id:
            state["stopped_by_probe"] = True
            state["net"].sim.stop()

    built = build(spec, on_probe)
    net = built.net
    state["net"] = net
    sim = net.sim
    sampler = _Sampler(built, spec)
    tail_s = spec.metrics.tail_start
    if tail_s is None:
        tail_s = default_tail_start(spec, built.true_base_rtt)
    tail = _TailMark(built, ns(tail_s))

    end = sim.run_until(ns(spec.duration))
    end_s = end / NS

    times = np.array(sampler.times, dtype=np.int64)
    tsec = times / NS
    win = max(1, int(round(spec.metrics.window / spec.metrics.interval)))
    throughput = {}
    for fid, counts in sampler.received.items():
        c = np.asarray(counts, dtype=float)
        prev = np.concatenate([np.zeros(win), c])[: len(c)]
        span = np.minimum(np.arange(1, len(c) + 1), win) * spec.metrics.interval
        throughput[fid] = (c - prev) / span if len(c) else c
    cwnd = {fid: np.asarray(v, dtype=float) for fid, v in sampler.cwnd.items()}
    base = {fid: np.asarray(v, dtype=float) for fid, v in sampler.base.items()}
    queue = {k: np.asarray(v, dtype=float) for k, v in sampler.queue.items()}

    cap = spec.capacity_pps
    summary = {
        "name": spec.name,
        "seed": spec.seed,
        "capacity_pps": cap,
        "end_time": end_s,
        "stopped_by_probe": bool(state.get("stopped_by_probe")),
        "tail_start": tail_s,
    }
    rates = {}
    if tail.taken and end > tail.at:
        span = (end - tail.at) / NS
        for f in built.flows:
            rates[f.flow_id] = (f.sink.received - tail.received[f.flow_id]) / span
        summary["tail_span"] = span
        for name in built.monitored:
            summary[f"queue_mean.{name}"] = (
                (net.links[name].wait_area(end) - tail.area[name]) / NS / span)
        summary["queue_mean"] = summary[f"queue_mean.{built.bottleneck}"]
    for fid, r in rates.items():
        summary[f"rate.{fid}"] = r
        summary[f"share.{fid}"] = r / cap
    if rates:
        summary["total_rate"] = sum(rates.values())
        old = [r for fid, r in rates.items() if fid != newcomer_id]
        if old and sum(old) > 0:
            summary["fairness_ratio"] = fairness_ratio(rates[newcomer_id], old)
    summary["newcomer_id"] = newcomer_id
    for f in built.flows:
        summary[f"base_rtt.{f.flow_id}"] = f.base_rtt if math.isfinite(f.base_rtt) else math.nan
        summary[f"true_base_rtt.{f.flow_id}"] = built.true_base_rtt[f.flow_id]
    mine = [p for p in probe_rows if p["flow_id"] == newcomer_id]
    summary["probe_count"] = len(mine)
    if mine:
        last = mine[-1]
        for key in ("status", "theta", "delta_r", "n_hat", "n_rounded", "c_hat", "d_corrected",
                    "w_reset"):
            summary[f"probe.{key}"] = last[key]
        summary["probe.first_n_hat"] = mine[0]["n_hat"]
        summary["probe.first_status"] = mine[0]["status"]
    drops = {name: link.drops for name, link in net.links.items() if link.drops}
    summary["drops"] = sum(drops.values())
    summary["conservation_ok"] = bool(net.check_conservation()
                                      and sampler.conservation_failures == 0)
    if spec.metrics.trace:
        ok = True
        for name in built.monitored:
            link = net.links[name]
            report = check_trace(link.trace, link.rate_bps, link.capacity,
                                 times, queue[name])
            ok = ok and report["ok"]
        summary["trace_ok"] = ok
    summary["events_dispatched"] = sim.dispatched

    events = sorted((ev for f in built.flows for ev in f.events),
                    key=lambda e: (e["time"], str(e["flow_id"])))
    return MetricsLog(tsec, throughput, cwnd, base, queue, probe_rows, events, drops, summary)


def run_mapping(mapping: dict) -> MetricsLog:
    return run_scenario(ScenarioSpec.from_mapping(mapping))


# ---------------------------------------------------------------- trace checker

def check_trace(trace, rate_bps: float, capacity: int, sample_times=None,
                sampled_queue=None) -> dict:
    """Replay a link's (arrival, start, size) trace with an independent FIFO server.

    Checks that every recorded transmission start equals the replayed one,
    that drops happened only with a full buffer, that departures never exceed
    the line rate, and (when samples are given) that the sampled occupancy
    equals arrivals minus departures minus drops at each sample instant.
    """
    problems = []
    free = 0
    waiting_starts: list[int] = []  # starts of accepted packets, nondecreasing
    head = 0
    arrivals, starts = [], []
    prev_arr = -1
    for arr, start, size in trace:
        if arr < prev_arr:
            problems.append(f"arrival out of order at {arr}")
        prev_arr = arr
        while head < len(waiting_starts) and waiting_starts[head] <= arr:
            head += 1
        queued = len(waiting_starts) - head
        if start < 0:
            if not capacity or queued < capacity:
                problems.append(f"drop at {arr} with {queued} queued")
            continue
        expect = max(arr, free)
        if start != expect:
            problems.append(f"start {start} != replayed {expect}")
        if capacity and queued >= capacity:
            problems.append(f"accepted at {arr} with full buffer")
        free = expect + int(round(size * 8 * NS / rate_bps))
        if expect > arr:
            waiting_starts.append(expect)
        arrivals.append(arr)
        starts.append(expect)
    mismatches = 0
    if sample_times is not None and sampled_queue is not None:
        arr_np = np.asarray(arrivals, dtype=np.int64)
        st_np = np.asarray(starts, dtype=np.int64)
        waited = st_np > arr_np
        arr_w, st_w = arr_np[waited], st_np[waited]
        s = np.asarray(sample_times, dtype=np.int64)
        replay = np.searchsorted(arr_w, s, side="right") - np.searchsorted(st_w, s, side="right")
        ties = np.isin(s, arr_np)
        bad = (replay != np.asarray(sampled_queue)) & ~ties
        mismatches = int(bad.sum())
        if mismatches:
            problems.append(f"{mismatches} occupancy samples disagree with the replay")
    return {"ok": not problems, "problems": problems[:10], "packets": len(arrivals),
            "mismatches": mismatches}


# ---------------------------------------------------------------- sweeps

@dataclass
class SweepPoint:
    axis: str
    value: float
    repeat: int
    seed: int
    summary: dict
    probes: list


def _resolve_axis(axis: str) -> str:
    key = AXIS_ALIASES.get(axis, axis)
    conv = TOP_KEYS.get(key, (None,))[0]
    if conv is None:
        parts = key.split(".")
        if parts[0] in ("flows", "newcomer") and len(parts) >= 2:
            rest = ".".join(parts[1:])
            if rest.startswith("remedy.") and rest[7:] in REMEDY_KEYS:
                conv = REMEDY_KEYS[rest[7:]]
            else:
                conv = FLOW_KEYS.get(rest, (None,))[0]
    if conv not in (float, int, _opt_float):
        raise ScenarioError(f"sweep axis {axis!r} is not a numeric scenario key")
    return key


def _sweep_job(args):
    mapping, axis, value, repeat, seed = args
    logres = run_mapping(mapping)
    return SweepPoint(axis, value, repeat, seed, logres.summary, logres.probes)


def sweep(mapping: dict, axis: str, values, jobs: int = 1, repeats: int = 1) -> list:
    """One run per (value, repeat); run seeds are ``seed + index``; results in axis order."""
    key = _resolve_axis(axis)
    base_seed = int(mapping.get("seed", TOP_KEYS["seed"][1]))
    tasks = []
    index = 0
    for value in values:
        for r in range(repeats):
            m = dict(mapping)
            m[key] = value
            if key != "seed":
                m["seed"] = base_seed + index
            seed = int(m["seed"])
            ScenarioSpec.from_mapping(m)  # fail fast on a bad value
            tasks.append((m, axis, value, r, seed))
            index += 1
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(_sweep_job, tasks))
    return [_sweep_job(t) for t in tasks]


# ---------------------------------------------------------------- experiment library

def two_flow(alpha: float = 50.0, seed: int = 1, duration: float = 30.0) -> dict:
    return {"name": f"two_flow_a{alpha:g}", "seed": seed, "duration": duration,
            "flows.count": 2, "flows.alpha": alpha, "flows.interval": 2.0,
            "flows.start_jitter": 1.0}


def sequential(n: int, alpha: float = 50.0, seed: int = 1, gap: float = 2.0,
               tail: float = 20.0) -> dict:
    return {"name": f"sequential_n{n}", "seed": seed,
            "duration": (n - 1) * (gap + 1.0) + tail + 10.0,
            "flows.count": n, "flows.alpha": alpha, "flows.interval": gap,
            "flows.start_jitter": 1.0}


def stable_arrival(n: int, remedy: str = "none", seed: int = 1, bottleneck_delay: float = 0.005,
                   duration: float | None = None, jitter: float = 0.0,
                   **remedy_params) -> dict:
    """Newcomer joining ``n`` settled incumbents that know their true base RTT.

    ``jitter`` adds U(0, jitter) s to each incumbent's start gap; the join is
    pushed back by the largest possible spread so incumbents are always settled.
    """
    rtt = 2 * (bottleneck_delay + 0.002)
    settle = max(3.0, 60 * rtt)
    join = settle + (n - 1) * jitter
    if duration is None:
        duration = join + max(20.0, 300 * rtt)
    m = {"name": f"stable_n{n}_{remedy}", "seed": seed, "duration": duration,
         "topology.bottleneck_delay": bottleneck_delay,
         "flows.count": n, "flows.oracle_base_rtt": True, "flows.start_jitter": jitter,
         "newcomer.enabled": True, "newcomer.start_time": join,
         "newcomer.oracle_base_rtt": False, "newcomer.remedy": remedy}
    for k, v in remedy_params.items():
        m[f"newcomer.remedy.{k}"] = v
    return m


def staggered(remedy: str = "none", n: int = 5, gap: float = 20.0, seed: int = 1) -> dict:
    return {"name": f"staggered_{remedy}", "seed": seed, "duration": n * gap + 20.0,
            "flows.count": n, "flows.interval": gap, "flows.remedy": remedy,
            "flow.1.remedy": "none", "metrics.tail_start": (n - 1) * gap + 20.0}


def parking_lot_noise(peak_rate: float, remedy: str = "none", seed: int = 1,
                      duration: float = 60.0) -> dict:
    return {"name": f"parking_lot_{remedy}_{peak_rate:g}", "seed": seed, "duration": duration,
            "topology.kind": "parking_lot",
            "flows.count": 4, "flows.interval": 2.0, "flows.oracle_base_rtt": True,
            "newcomer.enabled": True, "newcomer.start_time": 10.0, "newcomer.remedy": remedy,
            "newcomer.oracle_base_rtt": False,
            "background.count": 1, "background.shape": 1.25, "background.mean_burst": 0.1,
            "background.mean_idle": 0.1, "background.peak_rate": peak_rate}


EXPERIMENTS = {
    "two_flow": two_flow,
    "sequential": sequential,
    "stable_arrival": stable_arrival,
    "staggered": staggered,
    "parking_lot_noise": parking_lot_noise,
}
