"""Workload generation, mechanism runs against the exact oracle, CSV reports."""
from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np

from .core import Domain, ExactTracker, Op, QueryClass, UpdateEvent
from .dynamic import FullyDynamicMechanism, TwoStreamBaseline
from .errors import ConfigError, DomainError, GenerationError, InvalidStreamError
from .insertion import BinaryTreeMechanism, HybridMechanism, InsertionOnlyMechanism
from .ledger import Budget
from .noise import NoiseSource
from .static import STATIC, make_static

HEADER = ("t", "N_t", "n_t", "query_id", "estimate", "exact", "abs_error", "theory_bound")
KINDS = ("dense_insert", "sparse_insert", "fully_dynamic_churn", "adversarial_burst")
MECHANISMS = ("btm", "hybrid", "insonly", "fd", "fd-baseline")
INSERTION_ONLY = ("btm", "hybrid", "insonly")


@dataclass(frozen=True)
class WorkloadSpec:
    kind: str
    horizon: int
    n_target: int = 64  # churn: live-size target; sparse/burst: number of insertions
    domain_size: int = 64
    seed: int = 0
    band: float = 0.2  # churn: allowed relative deviation from n_target

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError("kind", f"unknown workload {self.kind!r}; choose from {', '.join(KINDS)}")
        if self.horizon < 1:
            raise ConfigError("horizon", "horizon must be >= 1")
        if self.domain_size < 1:
            raise ConfigError("domain_size", "domain size must be >= 1")
        if self.n_target < 0:
            raise ConfigError("n_target", "target must be non-negative")


def _dense(spec: WorkloadSpec, rng: np.random.Generator) -> list[UpdateEvent]:
    items = rng.integers(spec.domain_size, size=spec.horizon)
    return [UpdateEvent.ins(t, int(x)) for t, x in enumerate(items, 1)]


def _sparse(spec: WorkloadSpec, rng: np.random.Generator) -> list[UpdateEvent]:
    if spec.n_target > spec.horizon:
        raise GenerationError(f"{spec.n_target} insertions do not fit in horizon {spec.horizon}")
    times = set((rng.choice(spec.horizon, size=spec.n_target, replace=False) + 1).tolist())
    items = iter(rng.integers(spec.domain_size, size=spec.n_target).tolist())
    return [UpdateEvent.ins(t, next(items)) if t in times else UpdateEvent.noop(t)
            for t in range(1, spec.horizon + 1)]


def _churn(spec: WorkloadSpec, rng: np.random.Generator) -> list[UpdateEvent]:
    n = spec.n_target
    if n < 1:
        raise GenerationError("churn needs a positive live-size target")
    lo = max(0, math.ceil(n * (1 - spec.band)))
    hi = math.floor(n * (1 + spec.band))
    if spec.horizon < lo:
        raise GenerationError(f"horizon {spec.horizon} too short to reach {lo} live items")
    u = rng.random(spec.horizon)
    picks = rng.random(spec.horizon)
    items = rng.integers(spec.domain_size, size=spec.horizon)
    live: list[int] = []
    out = []
    for t in range(1, spec.horizon + 1):
        k = len(live)
        if k < lo:
            insert = True
        elif k >= hi:
            insert = False
        else:
            insert = u[t - 1] < 0.5 + 0.4 * (n - k) / max(n, 1)
        if insert:
            x = int(items[t - 1])
            live.append(x)
            out.append(UpdateEvent.ins(t, x))
        else:
            pos = int(picks[t - 1] * k)
            live[pos], live[-1] = live[-1], live[pos]
            out.append(UpdateEvent.delete(t, live.pop()))
    return out


def _burst(spec: WorkloadSpec, rng: np.random.Generator) -> list[UpdateEvent]:
    """Long silences broken by back-to-back insertions at geometrically spaced times."""
    if spec.n_target > spec.horizon:
        raise GenerationError(f"{spec.n_target} insertions do not fit in horizon {spec.horizon}")
    out = [UpdateEvent.noop(t) for t in range(1, spec.horizon + 1)]
    left = spec.n_target
    start = 1
    size = 1
    while left > 0:
        if start > spec.horizon:
            raise GenerationError("bursts overflow the horizon")
        take = min(size, left, spec.horizon - start + 1)
        for t in range(start, start + take):
            out[t - 1] = UpdateEvent.ins(t, int(rng.integers(spec.domain_size)))
        left -= take
        start = max(start + take, 2 * start)
        size *= 2
    return out


_GEN = {"dense_insert": _dense, "sparse_insert": _sparse, "fully_dynamic_churn": _churn,
        "adversarial_burst": _burst}


def gen_stream(spec: WorkloadSpec) -> list[UpdateEvent]:
    rng = np.random.default_rng(spec.seed)
    return _GEN[spec.kind](spec, rng)


@dataclass(frozen=True)
class MechanismConfig:
    mechanism: str = "fd"
    static: str = "laplace"
    epsilon: float = 1.0
    delta: float = 1e-6
    beta: float = 0.05
    seed: int = 0
    noiseless: bool = False
    queries: str = "count"  # "count" or "random:K"
    stride: int = 1  # btm/hybrid: report every stride-th timestamp (plus the last)

    def validate(self) -> None:
        if self.mechanism not in MECHANISMS:
            raise ConfigError("mechanism", f"unknown mechanism {self.mechanism!r}")
        if self.static not in STATIC:
            raise ConfigError("static", f"unknown static mechanism {self.static!r}")
        if not (self.epsilon > 0 and math.isfinite(self.epsilon)):
            raise ConfigError("epsilon", "epsilon must be a positive finite number")
        if not 0 <= self.delta < 1:
            raise ConfigError("delta", "delta must lie in [0, 1)")
        if self.static in ("gaussian",) and self.delta == 0:
            raise ConfigError("delta", "the Gaussian mechanism needs delta > 0")
        if not 0 < self.beta < 1:
            raise ConfigError("beta", "beta must lie in (0, 1)")
        if self.stride < 1:
            raise ConfigError("stride", "stride must be >= 1")
        parse_queries(self.queries, Domain(1), 0)

    @property
    def budget(self) -> Budget:
        return Budget(self.epsilon, self.delta)


def parse_queries(spec: str, domain: Domain, seed: int) -> QueryClass:
    if spec == "count":
        return QueryClass.counting(domain)
    kind, _, k = spec.partition(":")
    if kind == "random" and k.isdigit() and int(k) >= 1:
        return QueryClass.random(domain, int(k), np.random.default_rng(seed))
    raise ConfigError("queries", f"expected 'count' or 'random:K', got {spec!r}")


def build_mechanism(cfg: MechanismConfig, queries: QueryClass, horizon: int, src: NoiseSource):
    static = make_static(cfg.static, queries)
    if cfg.mechanism == "btm":
        return BinaryTreeMechanism(static, max(horizon, 1), cfg.budget, src)
    if cfg.mechanism == "hybrid":
        return HybridMechanism(static, cfg.budget, src)
    if cfg.mechanism == "insonly":
        return InsertionOnlyMechanism(static, cfg.budget, cfg.beta, src)
    if cfg.mechanism == "fd":
        return FullyDynamicMechanism(static, cfg.budget, cfg.beta, src)
    return TwoStreamBaseline(static, cfg.budget, cfg.beta, src)


class Row(NamedTuple):
    t: int
    N_t: int
    n_t: int
    query_id: int
    estimate: float
    exact: float
    abs_error: float
    theory_bound: float


@dataclass
class TrialSummary:
    trial: int
    rows: int
    max_error: float
    final_error: float
    final_t: int


@dataclass
class RunReport:
    rows: list[Row] = field(default_factory=list)
    config: dict = field(default_factory=dict)
    trials: list[TrialSummary] = field(default_factory=list)
    ledger: str = ""
    tree: str = ""

    def errors(self) -> np.ndarray:
        return np.array([r.abs_error for r in self.rows])

    def summary(self) -> dict:
        err = self.errors()
        finals = np.array([s.final_error for s in self.trials]) if self.trials else np.zeros(0)
        maxes = np.array([s.max_error for s in self.trials]) if self.trials else np.zeros(0)

        def stats(a: np.ndarray) -> dict:
            if a.size == 0:
                return {"median": None, "p95": None, "max": None}
            return {"median": float(np.median(a)), "p95": float(np.percentile(a, 95)), "max": float(a.max())}

        return {"rows": len(self.rows), "all_rows": stats(err), "final_error": stats(finals),
                "max_error_per_trial": stats(maxes)}


def _boundary(mech, cfg: MechanismConfig, closed) -> bool:
    if cfg.mechanism in ("btm", "hybrid"):
        return True
    return bool(closed)


def _estimate(mech, cfg: MechanismConfig, qi: int, t: int) -> float:
    if cfg.mechanism == "fd":
        return mech.query(qi)
    return mech.query(qi, t)


def _bound(mech, cfg: MechanismConfig, t: int, data_size: int) -> float:
    if cfg.mechanism in ("btm", "hybrid"):
        return mech.error_bound(t, cfg.beta, max(data_size, 1))
    if cfg.mechanism == "insonly":
        return mech.error_bound(t, cfg.beta, max(data_size, 1))
    return mech.error_bound(cfg.beta)


def run_trial(stream: Sequence[UpdateEvent], cfg: MechanismConfig, queries: QueryClass, trial: int,
              rows: list[Row] | None = None):
    """Run one mechanism instance over the stream; returns (mechanism, TrialSummary)."""
    domain = queries.domain
    src = NoiseSource(cfg.seed + trial, suppress=cfg.noiseless)
    mech = build_mechanism(cfg, queries, len(stream), src)
    tracker = ExactTracker(domain)
    insertion_only = cfg.mechanism in INSERTION_ONLY
    stride = cfg.stride if cfg.mechanism in ("btm", "hybrid") else 1
    last = len(stream)
    count = 0
    max_err = 0.0
    final_err = 0.0
    final_t = 0
    skipped = 0  # btm/hybrid: empty timestamps not yet handed to the mechanism
    for ev in stream:
        if insertion_only and ev.op is Op.DELETE:
            raise InvalidStreamError(f"t={ev.t}: {cfg.mechanism} accepts insertion-only streams")
        tracker.feed(ev)
        if stride > 1 and ev.op is Op.NOOP and ev.t % stride and ev.t != last:
            skipped += 1
            continue
        if skipped:
            mech.advance(skipped)
            skipped = 0
        closed = mech.feed(ev)
        if not _boundary(mech, cfg, closed):
            continue
        if stride > 1 and ev.t % stride and ev.t != last:
            continue
        exact = queries.evaluate_all(tracker.dataset)
        n_t = tracker.dataset.total
        bound = _bound(mech, cfg, ev.t, n_t)
        for qi in range(len(queries)):
            est = _estimate(mech, cfg, qi, ev.t)
            err = float(abs(est - exact[qi]))
            max_err = max(max_err, err)
            final_err = err if qi == 0 else max(final_err, err)
            if rows is not None:
                rows.append(Row(ev.t, tracker.N, n_t, qi, est, float(exact[qi]), err, bound))
        count += 1
        final_t = ev.t
    return mech, TrialSummary(trial, count * len(queries), max_err, final_err, final_t)


def run_experiment(stream: Sequence[UpdateEvent], cfg: MechanismConfig, domain: Domain | None = None,
                   trials: int = 1, keep_rows: bool = True, dump_tree: bool = False) -> RunReport:
    cfg.validate()
    if trials < 1:
        raise ConfigError("trials", "trials must be >= 1")
    if domain is None:
        top = max((ev.item for ev in stream if ev.item is not None), default=0)
        domain = Domain(top + 1)
    queries = parse_queries(cfg.queries, domain, cfg.seed)
    report = RunReport(config={**asdict(cfg), "trials": trials, "domain_size": domain.size,
                               "stream_length": len(stream)})
    mech = None
    for trial in range(trials):
        mech, summary = run_trial(stream, cfg, queries, trial, report.rows if keep_rows else None)
        report.trials.append(summary)
    report.ledger = mech.ledger().dump()
    if dump_tree:
        if cfg.mechanism != "fd":
            raise ConfigError("dump_tree", "--dump-tree needs --mechanism fd")
        report.tree = mech.dump_tree()
    return report


def _fmt(x: float) -> str:
    return repr(float(x))


def emit_report(report: RunReport, path: str | Path) -> None:
    path = Path(path)
    try:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(HEADER)
            for r in report.rows:
                w.writerow([r.t, r.N_t, r.n_t, r.query_id, _fmt(r.estimate), _fmt(r.exact),
                            _fmt(r.abs_error), _fmt(r.theory_bound)])
        meta = {"config": report.config, "summary": report.summary(),
                "trials": [asdict(s) for s in report.trials], "ledger": report.ledger}
        if report.tree:
            meta["tree"] = report.tree
        Path(str(path) + ".meta.json").write_text(json.dumps(meta, indent=2) + "\n")
    except OSError as exc:
        raise OSError(f"cannot write report to {path}: {exc}") from exc


def parse_report(path: str | Path) -> RunReport:
    path = Path(path)
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        head = next(reader, None)
        if tuple(head or ()) != HEADER:
            raise DomainError(f"{path}: unexpected header {head}")
        rows = [Row(int(a), int(b), int(c), int(d), float(e), float(f), float(g), float(h))
                for a, b, c, d, e, f, g, h in reader]
    report = RunReport(rows=rows)
    meta = Path(str(path) + ".meta.json")
    if meta.exists():
        data = json.loads(meta.read_text())
        report.config = data.get("config", {})
        report.trials = [TrialSummary(**s) for s in data.get("trials", [])]
        report.ledger = data.get("ledger", "")
        report.tree = data.get("tree", "")
    return report
