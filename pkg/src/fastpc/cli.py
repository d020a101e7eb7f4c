"""Command-line front end.

Exit codes: 0 success, 2 bad arguments, 3 scenario or file problem,
4 numerical failure. Errors are reported as one line on stderr.
"""

from __future__ import annotations

import argparse
import csv
import logging
import math
import os
import sys
from pathlib import Path

from . import model, scenarios as S
from .model import ModelDomainError, ProbeEstimationError, SolverError

EXIT_USAGE, EXIT_SCENARIO, EXIT_NUMERIC = 2, 3, 4
OUT_ENV = "FASTPC_OUT"


class CliError(Exception):
    def __init__(self, code: int, kind: str, message: str):
        super().__init__(message)
        self.code = code
        self.kind = kind


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise CliError(EXIT_USAGE, "usage", message)


def _positive_int(text):
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {v}")
    return v


def _positive_float(text):
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None
    if not v > 0 or math.isinf(v):
        raise argparse.ArgumentTypeError(f"must be a finite number > 0, got {text}")
    return v


def _assignment(text):
    if "=" not in text:
        raise argparse.ArgumentTypeError(f"expected key=value, got {text!r}")
    k, v = text.split("=", 1)
    return k.strip(), v.strip()


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="fastpc", description="FAST-TCP persistent-congestion model and simulator")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    q = sub.add_parser("model-seq", help="backlog vector and shares for sequential arrivals")
    q.add_argument("--n", type=_positive_int, required=True)
    q.add_argument("--alpha", type=_positive_float, default=None,
                   help="also print the predicted queue in packets")
    q.add_argument("--digits", type=int, default=4)

    q = sub.add_parser("model-stable", help="one flow joining n fairly settled flows")
    q.add_argument("--n", type=_positive_int, required=True)
    q.add_argument("--alpha", type=_positive_float, default=50.0)
    q.add_argument("--digits", type=int, default=4)

    q = sub.add_parser("model-bound", help="minimum round-trip delay for rate reduction")
    q.add_argument("--n", type=_positive_int, required=True)
    q.add_argument("--alpha", type=_positive_float, default=50.0)
    q.add_argument("--capacity", type=_positive_float, default=None, help="packets/second")
    q.add_argument("--rate", type=_positive_float, default=None,
                   help="bits/second (alternative to --capacity)")
    q.add_argument("--packet-size", type=_positive_int, default=1000, help="bytes")

    def scenario_args(q, out=True):
        q.add_argument("scenario", help="scenario file (key = value lines)")
        q.add_argument("--seed", type=int, default=None)
        q.add_argument("--set", dest="overrides", type=_assignment, action="append", default=[],
                       metavar="KEY=VALUE", help="override a scenario key (repeatable)")
        if out:
            q.add_argument("--out", default=None,
                           help=f"output directory (default under ${OUT_ENV} or ./fastpc-out)")

    q = sub.add_parser("run", help="run one scenario and write CSVs and a summary")
    scenario_args(q)

    q = sub.add_parser("sweep", help="run a scenario once per value of one numeric key")
    scenario_args(q)
    q.add_argument("--axis", required=True,
                   help="scenario key or alias (" + ", ".join(sorted(S.AXIS_ALIASES)) + ")")
    q.add_argument("--values", required=True, help="comma-separated values")
    q.add_argument("--repeats", type=_positive_int, default=1)
    q.add_argument("--jobs", type=_positive_int, default=1)

    q = sub.add_parser("compare", help="run a scenario and report model vs simulation")
    scenario_args(q)

    q = sub.add_parser("example", help="print a library scenario as a scenario file")
    q.add_argument("name", choices=sorted(S.EXPERIMENTS))
    q.add_argument("--param", dest="params", type=_assignment, action="append", default=[],
                   metavar="NAME=VALUE", help="builder argument (repeatable)")
    return p


# ---------------------------------------------------------------- model commands

def cmd_model_seq(args) -> int:
    d = args.digits
    vec = model.sequential_backlog(args.n)
    shares = model.sequential_shares(args.n)
    print(f"n={args.n}")
    for i, a in enumerate(vec.a, 1):
        print(f"a_{i}={a:.{d}f}")
    print("shares=" + "/".join(f"{s:.{d}f}" for s in shares))
    print(f"queue_factor={args.n + vec.total:.{d}f}")
    if args.alpha is not None:
        print(f"queue={model.sequential_queue_length(args.n, args.alpha):.{d}f} pkt")
    return 0


def cmd_model_stable(args) -> int:
    d = args.digits
    sol = model.stable_arrival(args.n, args.alpha)
    print(f"n={sol.n}")
    print(f"a={sol.a:.{d}f}")
    print(f"share_old={sol.share_old:.{d}f}")
    print(f"share_new={sol.share_new:.{d}f}")
    print(f"newcomer_backlog={sol.newcomer_backlog:.{d}f} pkt")
    print(f"unfairness={sol.unfairness:.{d}f}")
    return 0


def cmd_model_bound(args) -> int:
    if args.capacity is not None and args.rate is not None:
        raise CliError(EXIT_USAGE, "usage", "give either --capacity or --rate, not both")
    if args.rate is not None:
        cap = args.rate / (8.0 * args.packet_size)
        logging.getLogger(__name__).info("rate %g b/s = %g pkt/s at %d B", args.rate, cap,
                                         args.packet_size)
    else:
        cap = args.capacity if args.capacity is not None else 12500.0
    bound = model.rate_reduction_min_delay(args.n, args.alpha, cap)
    print(f"min_delay={bound * 1e3:.2f} ms")
    return 0


# ---------------------------------------------------------------- scenario commands

def _load(args) -> dict:
    mapping = S.load_scenario(args.scenario)
    for k, v in args.overrides:
        mapping[k] = v
    if args.seed is not None:
        mapping["seed"] = str(args.seed)
    S.ScenarioSpec.from_mapping(mapping)
    return mapping


def _out_dir(args, mapping, suffix="") -> Path:
    if args.out:
        return Path(args.out)
    root = Path(os.environ.get(OUT_ENV) or "fastpc-out")
    stem = Path(args.scenario).stem
    return root / f"{stem}{suffix}-seed{mapping.get('seed', S.TOP_KEYS['seed'][1])}"


def _write_run(out: Path, mapping: dict, log) -> None:
    out.mkdir(parents=True, exist_ok=True)
    (out / "scenario.scn").write_text(S.dump_scenario(mapping))
    log.write_csvs(out)
    log.write_summary(out / "summary.txt")


def cmd_run(args) -> int:
    mapping = _load(args)
    log = S.run_mapping(mapping)
    out = _out_dir(args, mapping)
    _write_run(out, mapping, log)
    s = log.summary
    print(f"out={out}")
    for key in ("end_time", "fairness_ratio", "queue_mean", "total_rate", "probe.status",
                "probe.n_hat", "conservation_ok"):
        if key in s:
            print(f"{key}={S._cell(s[key])}")
    return 0


def cmd_sweep(args) -> int:
    mapping = _load(args)
    try:
        values = [float(v) for v in args.values.split(",") if v.strip()]
    except ValueError:
        raise CliError(EXIT_USAGE, "usage", f"--values: not a number list: {args.values!r}")
    if not values:
        raise CliError(EXIT_USAGE, "usage", "--values is empty")
    points = S.sweep(mapping, args.axis, values, jobs=args.jobs, repeats=args.repeats)
    out = _out_dir(args, mapping, suffix=f"-sweep-{args.axis}")
    out.mkdir(parents=True, exist_ok=True)
    (out / "scenario.scn").write_text(S.dump_scenario(mapping))
    keys = []
    for p in points:
        keys.extend(k for k in p.summary if k not in keys)
    with open(out / "sweep.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([args.axis, "repeat", "seed"] + keys)
        for p in points:
            w.writerow([repr(p.value), p.repeat, p.seed] + [S._cell(p.summary.get(k))
                                                             for k in keys])
    with open(out / "probes.csv", "w", newline="") as fh:
        cols = ["time", "flow_id", "attempt", "status", "theta", "t_eps", "delta_r", "n_hat",
                "n_rounded", "c_hat", "d_corrected", "w_reset"]
        w = csv.writer(fh)
        w.writerow([args.axis, "repeat"] + cols)
        for p in points:
            for row in p.probes:
                w.writerow([repr(p.value), p.repeat] + [S._cell(row.get(c)) for c in cols])
    print(f"out={out}")
    for p in points:
        fr = p.summary.get("fairness_ratio")
        extra = f" fairness_ratio={fr:.4f}" if fr is not None else ""
        nh = p.summary.get("probe.first_n_hat")
        if nh is not None:
            extra += f" n_hat={nh:.4f}"
        print(f"{args.axis}={p.value:g} repeat={p.repeat}{extra}")
    return 0


def predictions(spec: S.ScenarioSpec) -> tuple[str, dict, float]:
    """Pick the matching model; return its name, share per flow id, and queue."""
    flows = sorted(spec.flows, key=lambda f: (f.start_time, f.flow_id))
    n = len(flows)
    alpha = flows[0].alpha
    if any(f.alpha != alpha for f in flows):
        raise CliError(EXIT_SCENARIO, "scenario", "compare needs every flow to use the same alpha")
    remedied = [f for f in flows if f.remedy != "none"]
    newcomer = spec.newcomer
    olds = [f for f in flows if f is not newcomer]
    if not remedied and newcomer.newcomer and olds and all(f.oracle_base_rtt for f in olds) \
            and not newcomer.oracle_base_rtt:
        sol = model.stable_arrival(len(olds), alpha)
        shares = {f.flow_id: sol.share_old for f in olds}
        shares[newcomer.flow_id] = sol.share_new
        return "stable_arrival", shares, alpha * (len(olds) + 1 + sol.a)
    if not remedied and not any(f.oracle_base_rtt for f in flows[1:]):
        sh = model.sequential_shares(n)
        return ("sequential", {f.flow_id: float(s) for f, s in zip(flows, sh)},
                model.sequential_queue_length(n, alpha))
    return "fair_share", {f.flow_id: 1.0 / n for f in flows}, n * alpha


def cmd_compare(args) -> int:
    mapping = _load(args)
    spec = S.ScenarioSpec.from_mapping(mapping)
    name, shares, queue = predictions(spec)
    log = S.run_mapping(mapping)
    out = _out_dir(args, mapping, suffix="-compare")
    _write_run(out, mapping, log)
    s = log.summary
    rows = []
    for fid, share in shares.items():
        sim = s.get(f"share.{fid}", math.nan)
        rows.append(("share", fid, share, sim))
    rows.append(("queue", "bottleneck", queue, s.get("queue_mean", math.nan)))
    with open(out / "compare.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["quantity", "id", "model", "sim", "deviation"])
        for qty, key, m, v in rows:
            w.writerow([qty, key, repr(float(m)), repr(float(v)), repr(abs(v - m) / m)])
    print(f"model={name} out={out}")
    print(f"{'quantity':<8} {'id':>10} {'model':>12} {'sim':>12} {'deviation':>10}")
    for qty, key, m, v in rows:
        print(f"{qty:<8} {key!s:>10} {m:12.4f} {v:12.4f} {abs(v - m) / m:10.4f}")
    return 0


def cmd_example(args) -> int:
    builder = S.EXPERIMENTS[args.name]
    kwargs = {}
    for k, v in args.params:
        try:
            kwargs[k] = int(v)
        except ValueError:
            try:
                kwargs[k] = float(v)
            except ValueError:
                kwargs[k] = v
    try:
        mapping = builder(**kwargs)
    except TypeError as exc:
        raise CliError(EXIT_USAGE, "usage", str(exc)) from None
    sys.stdout.write(S.dump_scenario(mapping))
    return 0


COMMANDS = {
    "model-seq": cmd_model_seq,
    "model-stable": cmd_model_stable,
    "model-bound": cmd_model_bound,
    "run": cmd_run,
    "sweep": cmd_sweep,
    "compare": cmd_compare,
    "example": cmd_example,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        return COMMANDS[args.command](args)
    except CliError as exc:
        code, kind, msg = exc.code, exc.kind, str(exc)
    except S.ScenarioError as exc:
        code, kind, msg = EXIT_SCENARIO, "scenario", str(exc)
    except ModelDomainError as exc:
        code, kind, msg = EXIT_USAGE, "domain", str(exc)
    except (SolverError, ProbeEstimationError, ArithmeticError) as exc:
        code, kind, msg = EXIT_NUMERIC, "numeric", str(exc)
    except OSError as exc:
        code, kind, msg = EXIT_SCENARIO, "io", f"{exc.filename or ''}: {exc.strerror or exc}"
    msg = " ".join(msg.split())
    print(f"fastpc: error[{code}] {kind}: {msg}", file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
