"""Data model: domains, multisets, linear queries, update streams, exact replay.

Everything here is non-private. The exact evaluators double as the oracle the
tests and the harness compare mechanisms against.
"""
from __future__ import annotations

import enum
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator, Mapping, NamedTuple, Sequence

import numpy as np

from .errors import DimensionError, DomainError, InvalidStreamError, UnderflowError


@dataclass(frozen=True)
class Domain:
    size: int

    def __post_init__(self):
        if int(self.size) != self.size or self.size < 1:
            raise DomainError(f"domain size must be a positive integer, got {self.size!r}")

    def check(self, item: int) -> int:
        if not 0 <= item < self.size:
            raise DimensionError(f"item {item} outside domain of size {self.size}")
        return item


class Dataset:
    """Multiset over a finite domain of integer item ids.

    Single-writer: ``add``/``remove`` mutate in place, everything else returns
    new objects.
    """

    __slots__ = ("domain", "_counts", "_total")

    def __init__(self, domain: Domain, counts: Mapping[int, int] | Iterable[int] = ()):
        self.domain = domain
        self._counts: dict[int, int] = {}
        self._total = 0
        if type(counts) in (tuple, list, dict) and not counts:
            return
        items = counts.items() if isinstance(counts, (dict, Mapping)) else Counter(counts).items()
        for item, mult in items:
            self.add(item, mult)

    @property
    def counts(self) -> Mapping[int, int]:
        return self._counts

    @property
    def total(self) -> int:
        return self._total

    def __len__(self) -> int:
        return self._total

    def __iter__(self) -> Iterator[int]:
        for item, mult in self._counts.items():
            for _ in range(mult):
                yield item

    def multiplicity(self, item: int) -> int:
        return self._counts.get(item, 0)

    def add(self, item: int, mult: int = 1) -> None:
        if mult < 0:
            raise DomainError("multiplicity must be non-negative")
        if mult == 0:
            return
        if not 0 <= item < self.domain.size:
            self.domain.check(item)
        self._counts[item] = self._counts.get(item, 0) + mult
        self._total += mult

    def remove(self, item: int, mult: int = 1) -> None:
        have = self._counts.get(item, 0)
        if mult > have:
            raise UnderflowError(f"cannot remove {mult} copies of item {item}; only {have} present")
        if mult == have:
            self._counts.pop(item, None)
        else:
            self._counts[item] = have - mult
        self._total -= mult

    def copy(self) -> "Dataset":
        out = Dataset(self.domain)
        out._counts = dict(self._counts)
        out._total = self._total
        return out

    def to_vector(self) -> np.ndarray:
        vec = np.zeros(self.domain.size, dtype=np.float64)
        for item, mult in self._counts.items():
            vec[item] = mult
        return vec

    def __eq__(self, other) -> bool:
        if not isinstance(other, Dataset):
            return NotImplemented
        return self.domain == other.domain and self._counts == other._counts

    def __repr__(self) -> str:
        inner = ", ".join(f"{k}:{v}" for k, v in sorted(self._counts.items()))
        return f"Dataset(|X|={self.domain.size}, {{{inner}}})"


class LinearQuery:
    """A function X -> [0, 1] given by its weight vector."""

    __slots__ = ("weights", "name")

    def __init__(self, weights: Sequence[float] | np.ndarray, name: str | None = None):
        w = np.asarray(weights, dtype=np.float64)
        if w.ndim != 1 or w.size == 0:
            raise DomainError("weights must be a non-empty 1-d sequence")
        if np.any(w < 0.0) or np.any(w > 1.0) or not np.all(np.isfinite(w)):
            raise DomainError("query weights must lie in [0, 1]")
        w.setflags(write=False)
        self.weights = w
        self.name = name

    @classmethod
    def counting(cls, domain: Domain) -> "LinearQuery":
        return cls(np.ones(domain.size), name="count")

    @property
    def domain(self) -> Domain:
        return Domain(self.weights.size)

    def __eq__(self, other) -> bool:
        if not isinstance(other, LinearQuery):
            return NotImplemented
        return self.weights.shape == other.weights.shape and bool(np.array_equal(self.weights, other.weights))

    def __hash__(self) -> int:
        return hash(self.weights.tobytes())

    def __repr__(self) -> str:
        return f"LinearQuery({self.name or 'anon'}, |X|={self.weights.size})"


class QueryClass:
    """Ordered, non-empty set of linear queries over one domain."""

    def __init__(self, queries: Sequence[LinearQuery]):
        queries = list(queries)
        if not queries:
            raise DomainError("query class must be non-empty")
        size = queries[0].weights.size
        if any(q.weights.size != size for q in queries):
            raise DimensionError("all queries must share a domain")
        self.queries = queries
        self.domain = Domain(size)
        self.matrix = np.vstack([q.weights for q in queries])
        self.matrix.setflags(write=False)
        self._all_ones = bool(np.all(self.matrix == 1.0))
        self._index = {}
        for i, q in enumerate(queries):
            self._index.setdefault(q, i)

    @classmethod
    def counting(cls, domain: Domain) -> "QueryClass":
        return cls([LinearQuery.counting(domain)])

    @classmethod
    def random(cls, domain: Domain, k: int, rng: np.random.Generator) -> "QueryClass":
        return cls([LinearQuery(rng.random(domain.size), name=f"q{i}") for i in range(k)])

    def __len__(self) -> int:
        return len(self.queries)

    def __getitem__(self, i: int) -> LinearQuery:
        return self.queries[i]

    def index(self, q: LinearQuery | int) -> int:
        if isinstance(q, (int, np.integer)):
            if not 0 <= q < len(self.queries):
                raise DomainError(f"query index {q} out of range")
            return int(q)
        try:
            return self._index[q]
        except KeyError:
            raise DomainError(f"{q!r} is not in the query class") from None

    def evaluate_all(self, data: Dataset) -> np.ndarray:
        if data.domain != self.domain:
            raise DimensionError("dataset and query class domains differ")
        if data.total == 0:
            return np.zeros(len(self.queries))
        if len(self.queries) == 1 and self._all_ones:
            return np.array([float(data.total)])
        counts = data.counts
        return self.matrix[:, list(counts)] @ np.fromiter(counts.values(), np.float64, len(counts))


def evaluate_query(q: LinearQuery, data: Dataset) -> float:
    """Weighted count sum_x q(x) * mult(x)."""
    if q.weights.size != data.domain.size:
        raise DimensionError(f"query over |X|={q.weights.size} applied to dataset over |X|={data.domain.size}")
    w = q.weights
    return float(sum(w[item] * mult for item, mult in data.counts.items()))


def combine(d1: Dataset, d2: Dataset, mode: str = "union") -> Dataset:
    if d1.domain != d2.domain:
        raise DimensionError("datasets live on different domains")
    out = d1.copy()
    if mode == "union":
        for item, mult in d2.counts.items():
            out.add(item, mult)
    elif mode == "subtract":
        for item, mult in d2.counts.items():
            out.remove(item, mult)
    else:
        raise DomainError(f"unknown combine mode {mode!r}")
    return out


class Op(str, enum.Enum):
    INSERT = "ins"
    DELETE = "del"
    NOOP = "noop"


class UpdateEvent(NamedTuple):
    t: int
    op: Op
    item: int | None = None

    @classmethod
    def ins(cls, t: int, item: int) -> "UpdateEvent":
        return cls(t, Op.INSERT, item)

    @classmethod
    def delete(cls, t: int, item: int) -> "UpdateEvent":
        return cls(t, Op.DELETE, item)

    @classmethod
    def noop(cls, t: int) -> "UpdateEvent":
        return cls(t, Op.NOOP, None)

    @property
    def is_update(self) -> bool:
        return self.op is not Op.NOOP


@dataclass(frozen=True)
class StreamStats:
    N_t: int  # non-noop updates so far
    n_t: int  # current dataset size


def replay_exact(stream: Iterable[UpdateEvent], t: int, domain: Domain) -> Dataset:
    """D_t = (all insertions up to t) minus (all deletions up to t).

    Deletions are validated against the running dataset, so a stream that
    deletes an absent item fails even if a later insertion would balance it.
    """
    data = Dataset(domain)
    prev = 0
    for ev in stream:
        if ev.t <= prev:
            raise InvalidStreamError(f"timestamps must increase: {ev.t} after {prev}")
        prev = ev.t
        if ev.t > t:
            break
        if ev.op is Op.INSERT:
            data.add(ev.item)
        elif ev.op is Op.DELETE:
            if data.multiplicity(ev.item) == 0:
                raise InvalidStreamError(f"t={ev.t}: delete of absent item {ev.item}")
            data.remove(ev.item)
    return data


class ExactTracker:
    """Incremental exact state of a stream: D_t, N_t, n_t."""

    def __init__(self, domain: Domain):
        self.domain = domain
        self.dataset = Dataset(domain)
        self.t = 0
        self.N = 0

    def feed(self, ev: UpdateEvent) -> None:
        if ev.t != self.t + 1:
            raise InvalidStreamError(f"expected timestamp {self.t + 1}, got {ev.t}")
        self.t = ev.t
        if ev.op is Op.INSERT:
            self.dataset.add(ev.item)
            self.N += 1
        elif ev.op is Op.DELETE:
            if self.dataset.multiplicity(ev.item) == 0:
                raise InvalidStreamError(f"t={ev.t}: delete of absent item {ev.item}")
            self.dataset.remove(ev.item)
            self.N += 1

    @property
    def stats(self) -> StreamStats:
        return StreamStats(self.N, self.dataset.total)


def validate_stream(stream: Sequence[UpdateEvent], domain: Domain) -> StreamStats:
    tracker = ExactTracker(domain)
    for ev in stream:
        if ev.op is not Op.NOOP:
            domain.check(ev.item)
        tracker.feed(ev)
    return tracker.stats


def write_stream(stream: Iterable[UpdateEvent], path: str | Path) -> None:
    with open(path, "w") as fh:
        for ev in stream:
            item = "" if ev.item is None else str(ev.item)
            fh.write(f"{ev.t},{ev.op.value},{item}\n")


def parse_stream(lines: Iterable[str]) -> list[UpdateEvent]:
    events = []
    for lineno, raw in enumerate(lines, 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split(",")
        if len(parts) != 3:
            raise InvalidStreamError(f"line {lineno}: expected 't,op,item', got {line!r}")
        try:
            t = int(parts[0])
            op = Op(parts[1].strip())
        except ValueError:
            raise InvalidStreamError(f"line {lineno}: bad timestamp or op in {line!r}") from None
        item_s = parts[2].strip()
        if op is Op.NOOP:
            if item_s:
                raise InvalidStreamError(f"line {lineno}: noop carries an item")
            item = None
        else:
            try:
                item = int(item_s)
            except ValueError:
                raise InvalidStreamError(f"line {lineno}: bad item {item_s!r}") from None
        if t != len(events) + 1:
            raise InvalidStreamError(f"line {lineno}: timestamps must be 1,2,3,... (got {t})")
        events.append(UpdateEvent(t, op, item))
    return events


def read_stream(path: str | Path) -> list[UpdateEvent]:
    with open(path) as fh:
        return parse_stream(fh)
