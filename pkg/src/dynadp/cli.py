"""Command-line entry point: ``dynadp gen | run | bench``.

Exit codes: 0 success, 2 configuration error, 3 invalid stream.
"""
from __future__ import annotations

import argparse
import json
import sys

from .core import Domain, read_stream, validate_stream, write_stream
from .errors import ConfigError, GenerationError, InvalidStreamError
from .harness import KINDS, MECHANISMS, MechanismConfig, WorkloadSpec, emit_report, gen_stream, run_experiment
from .static import STATIC

EXIT_OK, EXIT_CONFIG, EXIT_STREAM = 0, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def _mech_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--mechanism", choices=MECHANISMS, default="fd")
    p.add_argument("--static", choices=sorted(STATIC), default="laplace")
    p.add_argument("--epsilon", type=float, default=1.0)
    p.add_argument("--delta", type=float, default=1e-6)
    p.add_argument("--beta", type=float, default=0.05)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--noiseless", action="store_true", help="suppress all noise (testing)")
    p.add_argument("--trials", type=int, default=1)
    p.add_argument("--queries", default="count", help="'count' or 'random:K'")
    p.add_argument("--stride", type=int, default=1, help="btm/hybrid: report every k-th timestamp")
    p.add_argument("--domain", type=int, default=None, help="domain size (default: largest item + 1)")


def _workload_args(p: argparse.ArgumentParser, seed_flag: str = "--seed") -> None:
    p.add_argument("--kind", choices=KINDS, default="fully_dynamic_churn")
    p.add_argument("--horizon", type=int, default=10_000)
    p.add_argument("--n-target", type=int, default=64)
    p.add_argument("--domain-size", type=int, default=64)
    p.add_argument(seed_flag, type=int, default=0, dest="workload_seed")


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="dynadp", description="Private continual release over update streams.")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen", help="write a synthetic workload stream")
    _workload_args(g)
    g.add_argument("--out", required=True)

    r = sub.add_parser("run", help="run a mechanism on a stream file and write a CSV report")
    r.add_argument("stream")
    _mech_args(r)
    r.add_argument("--out", default=None, help="report CSV path (summary only if omitted)")
    r.add_argument("--explain-budget", action="store_true", help="print the privacy ledger")
    r.add_argument("--dump-tree", action="store_true", help="print per-node state (fd only)")

    b = sub.add_parser("bench", help="generate a workload and compare mechanisms")
    _workload_args(b, "--workload-seed")
    _mech_args(b)
    b.add_argument("--compare", default=None,
                   help="comma-separated mechanisms to run instead of --mechanism")
    b.add_argument("--explain-budget", action="store_true")
    return ap


def _config(ns) -> MechanismConfig:
    return MechanismConfig(mechanism=ns.mechanism, static=ns.static, epsilon=ns.epsilon, delta=ns.delta,
                           beta=ns.beta, seed=ns.seed, noiseless=ns.noiseless, queries=ns.queries,
                           stride=ns.stride)


def _cmd_gen(ns) -> int:
    spec = WorkloadSpec(ns.kind, ns.horizon, ns.n_target, ns.domain_size, ns.workload_seed)
    events = gen_stream(spec)
    write_stream(events, ns.out)
    stats = validate_stream(events, Domain(ns.domain_size))
    print(f"wrote {len(events)} events to {ns.out} (N_T={stats.N_t}, n_T={stats.n_t})")
    return EXIT_OK


def _domain(ns, events) -> Domain | None:
    if ns.domain is None:
        return None
    if ns.domain < 1:
        raise ConfigError("domain", "domain size must be >= 1")
    return Domain(ns.domain)


def _cmd_run(ns) -> int:
    cfg = _config(ns)
    cfg.validate()
    if ns.dump_tree and cfg.mechanism != "fd":
        raise ConfigError("dump_tree", "--dump-tree needs --mechanism fd")
    try:
        events = read_stream(ns.stream)
    except OSError as exc:
        raise ConfigError("stream", str(exc)) from None
    domain = _domain(ns, events)
    if domain is not None:
        validate_stream(events, domain)
    report = run_experiment(events, cfg, domain, ns.trials, keep_rows=ns.out is not None,
                            dump_tree=ns.dump_tree)
    if ns.out:
        emit_report(report, ns.out)
        print(f"wrote {len(report.rows)} rows to {ns.out}")
    print(json.dumps(report.summary(), indent=2))
    if ns.explain_budget:
        print(report.ledger)
    if ns.dump_tree:
        print(report.tree)
    return EXIT_OK


def _cmd_bench(ns) -> int:
    spec = WorkloadSpec(ns.kind, ns.horizon, ns.n_target, ns.domain_size, ns.workload_seed)
    events = gen_stream(spec)
    names = ns.compare.split(",") if ns.compare else [ns.mechanism]
    domain = Domain(ns.domain or ns.domain_size)
    base = _config(ns)
    print(f"{'mechanism':<12} {'trials':>6} {'final med':>11} {'final p95':>11} {'max p95':>11}")
    for name in names:
        cfg = MechanismConfig(**{**base.__dict__, "mechanism": name.strip()})
        report = run_experiment(events, cfg, domain, ns.trials, keep_rows=False)
        s = report.summary()
        print(f"{cfg.mechanism:<12} {ns.trials:>6} {s['final_error']['median']:>11.2f} "
              f"{s['final_error']['p95']:>11.2f} {s['max_error_per_trial']['p95']:>11.2f}")
        if ns.explain_budget:
            print(report.ledger)
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    ns = build_parser().parse_args(argv)
    try:
        if ns.command == "gen":
            return _cmd_gen(ns)
        if ns.command == "run":
            return _cmd_run(ns)
        return _cmd_bench(ns)
    except (ConfigError, GenerationError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except InvalidStreamError as exc:
        print(f"invalid stream: {exc}", file=sys.stderr)
        return EXIT_STREAM


if __name__ == "__main__":
    sys.exit(main())
