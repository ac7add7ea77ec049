"""Continual release over insertion-only streams.

Three layers, each usable on its own:

* :class:`BinaryTreeMechanism` - finite horizon, one static release per
  dyadic node, levels composed sequentially.
* :class:`HybridMechanism` - infinite horizon; ranges [2^i, 2^(i+1)) each get
  a whole-range release plus a binary tree over the range. Accepts batches,
  so one call to :meth:`HybridMechanism.feed_batch` is one super-timestamp.
* :class:`PrivatePartitioner` + :class:`InsertionOnlyMechanism` - SVT-driven
  segmentation with squaring deadlines, each closed segment fed to a hybrid
  mechanism as one batch.

Time inside the binary tree and hybrid mechanisms is the 1-based count of
feeds. Queries at time ``t`` answer for the prefix [1, t].
"""
from __future__ import annotations

import bisect
import math
from typing import Iterable, NamedTuple, Sequence

import numpy as np

from .core import Dataset, Domain, LinearQuery, Op, UpdateEvent
from .errors import DomainError, HorizonExceeded, InvalidStreamError
from .ledger import Budget, Declaration, LedgerNode, leaf
from .noise import KeyedSource, NoiseSource, mix_key
from .static import Release, StaticMechanism
from .svt import SvtInstance

PI2 = math.pi**2


def dyadic_cover(t: int, origin: int = 1, max_length: int | None = None) -> list[tuple[int, int]]:
    """Minimal disjoint cover of [origin, t] by intervals aligned to ``origin``.

    Each returned closed interval [a, b] has power-of-two length L with
    (a - origin) divisible by L. ``max_length`` caps L (a power of two).
    """
    if t < origin:
        raise DomainError(f"cover end {t} precedes origin {origin}")
    out = []
    a = origin
    while a <= t:
        off = a - origin
        length = off & -off if off else 1 << (t - origin + 1).bit_length()
        while a + length - 1 > t or (max_length is not None and length > max_length):
            length >>= 1
        out.append((a, a + length - 1))
        a += length
    return out


def _as_items(ev: UpdateEvent) -> tuple[int, ...]:
    if ev.op is Op.INSERT:
        return (ev.item,)
    if ev.op is Op.DELETE:
        raise InvalidStreamError(f"t={ev.t}: deletion fed to an insertion-only mechanism")
    return ()


class BinaryTreeMechanism:
    """Dyadic-interval releases over a known horizon.

    ``levels = ceil(log2 T)`` levels of lengths 1 .. 2^(levels-1), each with
    budget/levels; a prefix [1, t <= T] is covered by at most one node per
    level plus one.
    """

    def __init__(self, static: StaticMechanism, horizon: int, budget: Budget, src: NoiseSource,
                 label: str = "btm"):
        if horizon < 1:
            raise DomainError("horizon must be >= 1")
        self.static = static
        self.horizon = horizon
        self.levels = max(1, math.ceil(math.log2(horizon)))
        self.budget = budget
        self.level_budget = budget.split(self.levels)
        self.src = src
        self.label = label
        self.t = 0
        self._domain = static.queries.domain
        self._acc = [Dataset(self._domain) for _ in range(self.levels)]
        # releases of empty nodes are drawn on first read from a per-node keyed source
        self._releases: dict[tuple[int, int], Release] = {}
        self._lazy_key = int(src.uniform() * 2.0**53)

    @property
    def max_length(self) -> int:
        return 1 << (self.levels - 1)

    def feed(self, ev: UpdateEvent) -> None:
        self.feed_batch(_as_items(ev))

    def feed_batch(self, items: Iterable[int] = ()) -> None:
        if self.t >= self.horizon:
            raise HorizonExceeded(f"{self.label}: horizon {self.horizon} exhausted")
        self.t += 1
        t = self.t
        items = tuple(items)
        for lvl in range(self.levels):
            acc = self._acc[lvl]
            for x in items:
                acc.add(x)
            if t % (1 << lvl) == 0 and acc.total:
                self._releases[(lvl, t >> lvl)] = self.static.release(acc, self.level_budget, self.src)
                self._acc[lvl] = Dataset(self._domain)

    def advance(self, m: int) -> None:
        """Feed ``m`` empty timestamps at once."""
        if m <= 0:
            return
        if self.t + m > self.horizon:
            raise HorizonExceeded(f"{self.label}: horizon {self.horizon} exhausted")
        for lvl in range(self.levels):
            acc = self._acc[lvl]
            if acc.total:
                close = (self.t >> lvl) + 1 << lvl
                if close <= self.t + m:
                    self._releases[(lvl, close >> lvl)] = self.static.release(acc, self.level_budget, self.src)
                    self._acc[lvl] = Dataset(self._domain)
        self.t += m

    def _release(self, lvl: int, idx: int) -> Release:
        rel = self._releases.get((lvl, idx))
        if rel is None:
            src = KeyedSource(mix_key(self._lazy_key, lvl, idx), self.src.suppress)
            rel = self._releases[(lvl, idx)] = self.static.release(Dataset(self._domain), self.level_budget, src)
        return rel

    def cover(self, t: int) -> list[tuple[int, int]]:
        return dyadic_cover(t, 1, self.max_length)

    def query(self, q: LinearQuery | int, t: int | None = None) -> float:
        t = self.t if t is None else t
        if t > self.horizon:
            raise HorizonExceeded(f"{self.label}: t={t} beyond horizon {self.horizon}")
        if t > self.t:
            raise DomainError(f"{self.label}: t={t} not yet observed (now {self.t})")
        if t == 0:
            return 0.0
        total = 0.0
        for a, b in self.cover(t):
            lvl = (b - a + 1).bit_length() - 1
            total += self._release(lvl, b >> lvl).answer(q)
        return total

    def error_bound(self, t: int | None, beta: float, data_size: int = 1) -> float:
        t = self.t if t is None else t
        if t == 0:
            return 0.0
        return self.static.alpha(len(self.cover(t)), self.level_budget, beta, data_size)

    def ledger(self) -> LedgerNode:
        root = LedgerNode("sequential", self.label)
        for lvl in range(self.levels):
            node = root.add(LedgerNode("parallel", f"level {lvl} (length {1 << lvl})", uniform=self.level_budget))
            closed = self.t >> lvl
            if closed:
                node.add(leaf(f"{closed} disjoint intervals", self.level_budget))
        return root


class HybridMechanism:
    """Infinite-horizon continual release over batched timestamps.

    Range i = [2^i, 2^(i+1)) gets one whole-range release (budget/2, released
    once the range closes) and a binary tree with horizon 2^i (budget/2) used
    for the partial range. Range 0 has a single timestamp, so its partial
    part is never queried and it carries no tree.
    """

    def __init__(self, static: StaticMechanism, budget: Budget, src: NoiseSource, label: str = "hybrid"):
        self.static = static
        self.budget = budget
        self.half = budget.split(2)
        self.src = src
        self.label = label
        self.t = 0
        self._domain = static.queries.domain
        self._acc = Dataset(self._domain)
        self._whole: list[Release | None] = []  # None: empty range, drawn on first read
        self._trees: dict[int, BinaryTreeMechanism] = {}
        self._lazy_key = int(src.uniform() * 2.0**53)

    def feed(self, ev: UpdateEvent) -> None:
        self.feed_batch(_as_items(ev))

    def feed_batch(self, items: Iterable[int] = ()) -> None:
        self.t += 1
        t = self.t
        rng = t.bit_length() - 1
        items = tuple(items)
        if rng >= 1:
            self._tree(rng).feed_batch(items)
        acc = self._acc
        for x in items:
            acc.add(x)
        if (t + 1) & t == 0:  # t = 2^(rng+1) - 1 closes the range
            self._close_range()

    def _tree(self, rng: int) -> BinaryTreeMechanism:
        tree = self._trees.get(rng)
        if tree is None:
            tree = self._trees[rng] = BinaryTreeMechanism(
                self.static, 1 << rng, self.half, self.src, label=f"range {rng} tree")
        return tree

    def _close_range(self) -> None:
        acc = self._acc
        self._whole.append(self.static.release(acc, self.half, self.src) if acc.total else None)
        if acc.total:
            self._acc = Dataset(self._domain)

    def advance(self, m: int) -> None:
        """Feed ``m`` empty timestamps at once."""
        while m > 0:
            rng = (self.t + 1).bit_length() - 1
            end = (1 << (rng + 1)) - 1
            step = min(m, end - self.t)
            if rng >= 1:
                self._tree(rng).advance(step)
            self.t += step
            m -= step
            if self.t == end:
                self._close_range()

    def _whole_release(self, i: int) -> Release:
        rel = self._whole[i]
        if rel is None:
            src = KeyedSource(mix_key(self._lazy_key, 1 << 20, i), self.src.suppress)
            rel = self._whole[i] = self.static.release(Dataset(self._domain), self.half, src)
        return rel

    def parts(self, t: int) -> tuple[int, int]:
        """(closed whole ranges used, length of the partial-range prefix) at time t."""
        k = (t + 1).bit_length() - 1
        return k, t - (1 << k) + 1 if t >= (1 << k) else 0

    def query(self, q: LinearQuery | int, t: int | None = None) -> float:
        t = self.t if t is None else t
        if t > self.t:
            raise DomainError(f"{self.label}: t={t} not yet observed (now {self.t})")
        if t <= 0:
            return 0.0
        k, partial = self.parts(t)
        total = 0.0
        for i in range(k):
            total += self._whole_release(i).answer(q)
        if partial:
            total += self._trees[k].query(q, partial)
        return total

    def error_bound(self, t: int | None, beta: float, data_size: int = 1) -> float:
        t = self.t if t is None else t
        if t <= 0:
            return 0.0
        k, partial = self.parts(t)
        if not partial:
            return self.static.alpha(k, self.half, beta, data_size)
        levels = max(1, math.ceil(math.log2(1 << k)))
        tree_terms = len(dyadic_cover(partial, 1, 1 << (levels - 1)))
        return (self.static.alpha(k, self.half, beta / 2, data_size)
                + self.static.alpha(tree_terms, self.half.split(levels), beta / 2, data_size))

    def ledger(self) -> LedgerNode:
        root = LedgerNode("sequential", self.label)
        whole = root.add(LedgerNode("parallel", "whole-range releases", uniform=self.half))
        if self._whole:
            whole.add(leaf(f"{len(self._whole)} closed ranges", self.half))
        trees = root.add(LedgerNode("parallel", "range trees", uniform=self.half))
        for i in sorted(self._trees):
            trees.add(self._trees[i].ledger())
        return root


class Segment(NamedTuple):
    index: int
    first: int
    last: int
    insertion_count: int


class PrivatePartitioner:
    """Online segmentation of an update stream by chained SVT instances.

    Segment j runs SVT with threshold theta_j = (7/eps) ln(2 T_j / beta_j) on
    the running count of updates since the last boundary, and is forced
    closed at the deadline T_j. After a close at time t the next deadline is
    t^2 and beta_j = 6 beta / (pi^2 j^2).
    """

    def __init__(self, epsilon: float, beta: float, src: NoiseSource, budget: Budget | None = None):
        if not epsilon > 0:
            raise DomainError("partitioner epsilon must be positive")
        if not 0 < beta < 1:
            raise DomainError("beta must be in (0, 1)")
        self.epsilon = epsilon
        self.beta = beta
        self.src = src
        self.budget = budget if budget is not None else Budget(epsilon, 0.0)
        self.t = 0
        self.t_prev = 0
        self.count = 0
        self.segments: list[Segment] = []
        self.declarations: list[Declaration] = []
        self._start_segment(1, 2)

    def _start_segment(self, j: int, deadline: int) -> None:
        self.j = j
        self.T_j = deadline
        self.beta_j = 6.0 * self.beta / (PI2 * j * j)
        self.theta_j = 7.0 / self.epsilon * math.log(2.0 * deadline / self.beta_j)
        self.svt = SvtInstance(self.epsilon, self.theta_j, self.src, start=self.t + 1)

    def _close(self, halt) -> Segment:
        t = self.t
        seg = Segment(self.j, self.t_prev + 1, t, self.count)
        decl = halt.declaration if halt is not None else self.svt.close()
        self.segments.append(seg)
        self.declarations.append(decl)
        self.t_prev = t
        self.count = 0
        self._start_segment(self.j + 1, t * t)
        return seg

    def feed(self, event: UpdateEvent | bool) -> Segment | None:
        is_update = event.is_update if isinstance(event, UpdateEvent) else bool(event)
        self.t += 1
        self.count += is_update
        halt = self.svt.feed(self.count)
        if halt is not None or self.t >= self.T_j:
            return self._close(halt)
        return None

    def feed_many(self, indicators: Sequence[int] | np.ndarray) -> list[Segment]:
        """Same as calling :meth:`feed` once per indicator, vectorised per SVT window."""
        ind = np.asarray(indicators, dtype=np.int64)
        n = ind.size
        pos = 0
        closed = []
        while pos < n:
            width = min(n - pos, max(1, self.T_j - self.t))
            counts = self.count + np.cumsum(ind[pos:pos + width])
            before = self.svt.fed
            halt = self.svt.feed_many(counts)
            used = self.svt.fed - before
            self.t += used
            self.count = int(counts[used - 1])
            pos += used
            if halt is not None or self.t >= self.T_j:
                closed.append(self._close(halt))
        return closed

    @property
    def pending_count(self) -> int:
        """Updates in the open segment (exact, non-private; for the harness)."""
        return self.count

    def pending_bound(self) -> float:
        """Public high-probability cap on updates hiding in the open segment."""
        return self.theta_j + 6.0 / self.epsilon * math.log(2.0 / self.beta_j)

    def ledger(self) -> LedgerNode:
        node = LedgerNode("adaptive_parallel", "partitioner SVTs", uniform=self.budget)
        for seg, decl in zip(self.segments, self.declarations):
            node.add(leaf(f"svt {seg.index}", self.budget, declaration=decl))
        if self.svt.fed:
            node.add(leaf(f"svt {self.j} (open)", self.budget,
                          declaration=Declaration.closed(self.svt.start, self.svt.start + self.svt.fed - 1)))
        return node


def partition_feed(state: PrivatePartitioner, event: UpdateEvent) -> Segment | None:
    return state.feed(event)


class InsertionOnlyMechanism:
    """Partitioner in front of a hybrid mechanism.

    The budget is split ``split`` : ``1 - split`` in epsilon between the
    partitioner and the hybrid mechanism; all of delta goes to the hybrid
    mechanism since SVT is pure. Answers at time t reflect the segments
    closed by t.
    """

    def __init__(self, static: StaticMechanism, budget: Budget, beta: float, src: NoiseSource,
                 split: float = 0.5, label: str = "insonly"):
        self.static = static
        self.budget = budget
        self.beta = beta
        self.label = label
        part_budget = Budget(budget.epsilon * split, 0.0)
        self.partitioner = PrivatePartitioner(part_budget.epsilon, beta, src.spawn(), budget=part_budget)
        self.hybrid = HybridMechanism(static, Budget(budget.epsilon * (1 - split), budget.delta), src.spawn())
        self._open: list[int] = []
        self.boundaries: list[int] = []  # t_j of every closed segment
        self.t = 0

    def feed(self, ev: UpdateEvent) -> Segment | None:
        items = _as_items(ev)
        self.t = ev.t
        self._open.extend(items)
        seg = self.partitioner.feed(bool(items))
        if seg is not None:
            self._flush(seg)
        return seg

    def feed_many(self, events: Sequence[UpdateEvent]) -> list[Segment]:
        if not events:
            return []
        flags = [bool(_as_items(ev)) for ev in events]
        segs = self.partitioner.feed_many(flags)
        t0 = events[0].t
        cursor = 0
        for seg in segs:
            upto = seg.last - t0 + 1
            self._open.extend(ev.item for ev, f in zip(events[cursor:upto], flags[cursor:upto]) if f)
            cursor = upto
            self._flush(seg)
        self._open.extend(ev.item for ev, f in zip(events[cursor:], flags[cursor:]) if f)
        self.t = events[-1].t
        return segs

    def _flush(self, seg: Segment) -> None:
        self.hybrid.feed_batch(self._open)
        self._open = []
        self.boundaries.append(seg.last)

    def segments_closed_by(self, t: int) -> int:
        return bisect.bisect_right(self.boundaries, t)

    def query(self, q: LinearQuery | int, t: int | None = None) -> float:
        t = self.t if t is None else t
        return self.hybrid.query(q, self.segments_closed_by(t))

    def pending_bound(self) -> float:
        return self.partitioner.pending_bound()

    def error_bound(self, t: int | None, beta: float | None = None, data_size: int = 1) -> float:
        t = self.t if t is None else t
        beta = self.beta if beta is None else beta
        m = self.segments_closed_by(t)
        return self.hybrid.error_bound(m, beta, data_size) + self.pending_bound()

    def ledger(self) -> LedgerNode:
        root = LedgerNode("sequential", self.label)
        root.add(self.partitioner.ledger())
        root.add(self.hybrid.ledger())
        return root


def btm_query(mech: BinaryTreeMechanism, q, t: int) -> float:
    return mech.query(q, t)


def hybrid_query(mech: HybridMechanism, q, t: int) -> float:
    return mech.query(q, t)


def insonly_query(mech: InsertionOnlyMechanism, q, t: int) -> float:
    return mech.query(q, t)


def counting_domain_size(domain: Domain) -> int:
    return domain.size
