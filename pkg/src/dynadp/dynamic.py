"""Continual release over fully-dynamic streams.

Updates are cut into segments by a private partitioner; segment j becomes
node v_j of an online in-order binary tree. Node v_j stores the items that
are live at the end of segment j and were inserted after its closest left
ancestor, so a query after segment j reads each live item from exactly one
of the nodes on j's left-ancestor path.

Each node privately answers queries about the items it stores that have not
been deleted yet. It publishes one static release, follows the deletions with
two insertion-only mechanisms, and restarts on the survivors once more than
half of its items are gone.
"""
from __future__ import annotations

import math
from collections import Counter, deque
from typing import Callable, Iterator, Sequence

from .core import Dataset, Domain, LinearQuery, Op, QueryClass, UpdateEvent
from .errors import DomainError, InvalidStreamError
from .insertion import HybridMechanism, InsertionOnlyMechanism, PrivatePartitioner
from .ledger import Budget, BudgetSeries, LedgerNode, allocate_series, leaf
from .noise import NoiseSource
from .static import LaplaceMechanism, Release, StaticMechanism

PI2 = math.pi**2
_UNIT = Domain(1)
_UNIT_COUNT = QueryClass.counting(_UNIT)


def lowbit(i: int) -> int:
    return i & -i


def level(i: int) -> int:
    """Level of node i in the in-order tree; leaves (odd i) are level 1."""
    if i < 1:
        raise DomainError("node index must be >= 1")
    return lowbit(i).bit_length()


def query_node_set(j: int) -> list[int]:
    """Nodes read by a query after segment j: j with low set bits cleared one at a time."""
    if j < 1:
        raise DomainError("segment index must be >= 1")
    out = []
    while j:
        out.append(j)
        j -= lowbit(j)
    return out[::-1]


def holder_chain(s: int) -> Iterator[int]:
    """Node indices, increasing, whose stored set may hold an item inserted in segment s."""
    i = s
    while True:
        yield i
        i += lowbit(i)


def node_span(i: int) -> range:
    """Insertion segments whose live items node i picks up at construction."""
    return range(i - lowbit(i) + 1, i + 1)


class StoredItem:
    __slots__ = ("item", "deleted_at")

    def __init__(self, item: int, deleted_at: int | None = None):
        self.item = item
        self.deleted_at = deleted_at

    def __repr__(self) -> str:
        return f"StoredItem({self.item}, deleted_at={self.deleted_at})"


class NodeState:
    """One tree node running the restart-on-half-deleted scheme.

    Round r runs at (eps_r, delta_r) = (3 eps / (2 pi^2 r^2), 2 delta / (pi^2 r^2)):
    the noisy size, the static release and the two deletion trackers each take
    one share, so round r costs (4 eps_r, 3 delta_r) = 6/(pi^2 r^2) of the node
    budget.
    """

    def __init__(self, index: int, t_v: int, stored: dict[int, int], static: StaticMechanism,
                 budget: Budget, beta: float, src: NoiseSource):
        self.index = index
        self.level = level(index)
        self.t_v = t_v
        self.static = static
        self.budget = budget
        self.beta = beta
        self.src = src
        self.domain = static.queries.domain
        self.stored = {cid: StoredItem(item) for cid, item in stored.items()}
        self.live = len(self.stored)
        self.halted = False
        self.restarts = 0
        self.retired: dict[int, StoredItem] = {}  # previous round's stored set, fully augmented
        self._counter = LaplaceMechanism(_UNIT_COUNT)
        self._rounds: list[tuple] = []
        self.r = 0
        self._begin_round()

    def round_budget(self, r: int) -> Budget:
        return Budget(3.0 * self.budget.epsilon / (2.0 * PI2 * r * r), 2.0 * self.budget.delta / (PI2 * r * r))

    def round_beta(self, r: int) -> float:
        return self.beta / (PI2 * r * r)

    def _live_dataset(self) -> Dataset:
        return Dataset(self.domain, Counter(s.item for s in self.stored.values()))

    def _sample_size(self) -> float:
        return len(self.stored) + self.src.laplace(1.0 / self.eps_r.epsilon)

    def _begin_round(self) -> None:
        self.r += 1
        self.eps_r = self.round_budget(self.r)
        self.beta_r = self.round_beta(self.r)
        self.n_tilde = self._sample_size()
        self._start_trackers()

    def _start_trackers(self) -> None:
        b = self.eps_r
        self.release: Release = self.static.release(self._live_dataset(), b, self.src)
        self.q_ins = HybridMechanism(self.static, b, self.src, label="deleted-items queries")
        self.lap_ins = HybridMechanism(self._counter, b, self.src, label="deleted-items count")
        self._rounds.append((self.r, b, self.q_ins, self.lap_ins))

    def gamma(self) -> float:
        """Public (1 - beta_r) bound on the error of the noisy size and deletion count."""
        if self.src.suppress:
            return 0.0
        size_err = math.log(1.0 / self.beta_r) / self.eps_r.epsilon
        return max(size_err, self.lap_ins.error_bound(None, self.beta_r))

    def mark_deleted(self, cid: int, t: int) -> int | None:
        s = self.stored.get(cid)
        if s is None or s.deleted_at is not None:
            return None
        s.deleted_at = t
        self.live -= 1
        return s.item

    def step(self, deleted_items: Sequence[int]) -> bool:
        """Advance by one segment; returns True if the node restarted."""
        if self.halted:
            return False
        self.q_ins.feed_batch(deleted_items)
        self.lap_ins.feed_batch([0] * len(deleted_items))
        n_del = self.lap_ins.query(0)
        gamma = self.gamma()
        if not n_del > self.n_tilde / 2.0 + 2.0 * gamma:
            return False
        self.restarts += 1
        self.retired = self.stored
        self.stored = {cid: s for cid, s in self.stored.items() if s.deleted_at is None}
        self.r += 1
        self.eps_r = self.round_budget(self.r)
        self.beta_r = self.round_beta(self.r)
        self.n_tilde = self._sample_size()
        if self.n_tilde < 2.0 * gamma:
            self.halted = True
            self._rounds.append((self.r, self.eps_r, None, None))
            return True
        self._start_trackers()
        return True

    def query(self, q: LinearQuery | int) -> float:
        if self.halted:
            return 0.0
        return self.release.answer(q) - self.q_ins.query(q)

    def exact_live(self) -> Dataset:
        data = Dataset(self.domain)
        for s in self.stored.values():
            if s.deleted_at is None:
                data.add(s.item)
        return data

    def error_bound(self, beta: float) -> float:
        if self.halted:
            return 2.0 * self.gamma()
        return (self.static.alpha(1, self.eps_r, beta / 2.0, max(len(self.stored), 1))
                + self.q_ins.error_bound(None, beta / 2.0, max(len(self.stored), 1)))

    def ledger(self) -> LedgerNode:
        node = LedgerNode("sequential", f"node {self.index}", series=BudgetSeries(self.budget))
        for r, b, q_ins, lap_ins in self._rounds:
            rnd = node.add(LedgerNode("sequential", f"round {r}", index=r))
            rnd.add(leaf("noisy size", Budget(b.epsilon, 0.0)))
            if q_ins is None:
                rnd.label += " (halted)"
                continue
            rnd.add(leaf("static release", b))
            rnd.add(q_ins.ledger())
            rnd.add(lap_ins.ledger())
        return node


def node_step(node: NodeState, deleted_items: Sequence[int]) -> bool:
    return node.step(deleted_items)


def node_query(node: NodeState, q: LinearQuery | int) -> float:
    return node.query(q)


class FullyDynamicMechanism:
    """Partitioner + online interval tree of :class:`NodeState` objects.

    The partitioner gets (eps * split, 0) and the tree (eps * (1 - split),
    delta); tree level l gets 6/(pi^2 l^2) of the tree budget, and nodes on
    one level hold disjoint data.
    """

    def __init__(self, static: StaticMechanism, budget: Budget, beta: float, src: NoiseSource,
                 split: float = 0.5):
        self.static = static
        self.domain = static.queries.domain
        self.budget = budget
        self.beta = beta
        self.src = src
        part = Budget(budget.epsilon * split, 0.0)
        self.tree_budget = Budget(budget.epsilon * (1.0 - split), budget.delta)
        self.partitioner = PrivatePartitioner(part.epsilon, beta, src.spawn(), budget=part)
        self.t = 0
        self.j = 0
        self.boundaries: list[int] = []
        self.nodes: dict[int, NodeState] = {}
        self._active: list[int] = []
        self.discarded_pairs = 0
        self._next_cid = 0
        self._copies: dict[int, tuple[int, int]] = {}  # cid -> (item, insertion segment)
        self._live: dict[int, deque[int]] = {}  # item -> live cids, oldest first
        self._by_seg: dict[int, set[int]] = {}
        self._pending_ins: dict[int, int] = {}
        self._pending_del: list[int] = []

    def node_budget(self, i: int) -> Budget:
        return allocate_series(self.tree_budget, level(i))

    def _absorb(self, ev: UpdateEvent) -> bool:
        if ev.t != self.t + 1:
            raise InvalidStreamError(f"expected timestamp {self.t + 1}, got {ev.t}")
        self.t = ev.t
        if ev.op is Op.NOOP:
            return False
        x = self.domain.check(ev.item)
        if ev.op is Op.INSERT:
            self._pending_ins[x] = self._pending_ins.get(x, 0) + 1
            return True
        pend = self._pending_ins.get(x, 0)
        if pend:
            if pend == 1:
                del self._pending_ins[x]
            else:
                self._pending_ins[x] = pend - 1
            self.discarded_pairs += 1
            return True
        copies = self._live.get(x)
        if not copies:
            raise InvalidStreamError(f"t={ev.t}: delete of absent item {x}")
        cid = copies.popleft()
        if not copies:
            del self._live[x]
        self._by_seg[self._copies[cid][1]].discard(cid)
        self._pending_del.append(cid)
        return True

    def feed(self, ev: UpdateEvent) -> bool:
        """Feed one event; returns True when it closed a segment."""
        flag = self._absorb(ev)
        seg = self.partitioner.feed(flag)
        if seg is None:
            return False
        self._close_segment()
        return True

    def feed_many(self, events: Sequence[UpdateEvent],
                  on_close: Callable[["FullyDynamicMechanism"], None] | None = None) -> int:
        """Same as feeding the events one by one; returns the number of segments closed.

        ``on_close`` is called after every segment close, when the answers are fresh.
        """
        segs = self.partitioner.feed_many([ev.op is not Op.NOOP for ev in events])
        pos = 0
        for seg in segs:
            while self.t < seg.last:
                self._absorb(events[pos])
                pos += 1
            self._close_segment()
            if on_close is not None:
                on_close(self)
        for ev in events[pos:]:
            self._absorb(ev)
        return len(segs)

    def _close_segment(self) -> None:
        self.j += 1
        j, t = self.j, self.t
        self.boundaries.append(t)
        batches: dict[int, list[int]] = {}
        for cid in self._pending_del:
            item, s = self._copies.pop(cid)
            for i in holder_chain(s):
                if i >= j:
                    break
                node = self.nodes.get(i)
                if node is not None and not node.halted and node.mark_deleted(cid, t) is not None:
                    batches.setdefault(i, []).append(item)
        self._pending_del = []
        still = []
        for i in self._active:
            node = self.nodes[i]
            node.step(batches.get(i, ()))
            if not node.halted:
                still.append(i)
        self._active = still
        fresh = self._by_seg.setdefault(j, set())
        for x, mult in self._pending_ins.items():
            q = self._live.setdefault(x, deque())
            for _ in range(mult):
                cid = self._next_cid
                self._next_cid += 1
                self._copies[cid] = (x, j)
                q.append(cid)
                fresh.add(cid)
        self._pending_ins = {}
        self.construct_node(j, t)

    def construct_node(self, j: int, t: int) -> NodeState:
        stored = {}
        for s in node_span(j):
            for cid in sorted(self._by_seg.get(s, ())):
                stored[cid] = self._copies[cid][0]
        node = NodeState(j, t, stored, self.static, self.node_budget(j), self.beta, self.src.spawn())
        self.nodes[j] = node
        if not node.halted:
            self._active.append(j)
        return node

    def query(self, q: LinearQuery | int) -> float:
        """Answer as of the last closed segment; 0 before the first one."""
        if self.j == 0:
            return 0.0
        return sum(self.nodes[i].query(q) for i in query_node_set(self.j))

    def pending_bound(self) -> float:
        return self.partitioner.pending_bound()

    def error_bound(self, beta: float | None = None) -> float:
        beta = self.beta if beta is None else beta
        if self.j == 0:
            return self.pending_bound()
        path = query_node_set(self.j)
        return sum(self.nodes[i].error_bound(beta / len(path)) for i in path) + self.pending_bound()

    def ledger(self) -> LedgerNode:
        root = LedgerNode("sequential", "fully-dynamic")
        root.add(self.partitioner.ledger())
        tree = root.add(LedgerNode("sequential", "interval tree", series=BudgetSeries(self.tree_budget)))
        by_level: dict[int, list[int]] = {}
        for i in self.nodes:
            by_level.setdefault(level(i), []).append(i)
        for lv in sorted(by_level):
            lvl = tree.add(LedgerNode("parallel", f"level {lv}", index=lv,
                                      uniform=allocate_series(self.tree_budget, lv)))
            for i in sorted(by_level[lv]):
                lvl.add(self.nodes[i].ledger())
        return root

    def dump_tree(self) -> str:
        head = f"{'node':>6} {'level':>5} {'t_v':>8} {'round':>5} {'stored':>6} {'live':>6} {'halted':>6}  spent"
        rows = [head]
        for i in sorted(self.nodes):
            n = self.nodes[i]
            rows.append(f"{i:>6} {n.level:>5} {n.t_v:>8} {n.r:>5} {len(n.stored):>6} {n.live:>6} "
                        f"{str(n.halted):>6}  {n.ledger().spent()}")
        return "\n".join(rows)

    def live_holders(self) -> dict[int, list[int]]:
        """cid -> nodes currently storing it undeleted (diagnostics and tests)."""
        out: dict[int, list[int]] = {}
        for i, node in self.nodes.items():
            for cid, s in node.stored.items():
                if s.deleted_at is None:
                    out.setdefault(cid, []).append(i)
        return out


def fd_feed(mech: FullyDynamicMechanism, event: UpdateEvent) -> bool:
    return mech.feed(event)


def fd_query(mech: FullyDynamicMechanism, q: LinearQuery | int) -> float:
    return mech.query(q)


class TwoStreamBaseline:
    """Insertions and deletions tracked by two independent insertion-only mechanisms.

    Each update lands in exactly one of the two streams, so both run at the
    full budget. Error grows with the number of updates rather than the
    current size.
    """

    def __init__(self, static: StaticMechanism, budget: Budget, beta: float, src: NoiseSource):
        self.budget = budget
        self.ins = InsertionOnlyMechanism(static, budget, beta, src.spawn(), label="insertions")
        self.dels = InsertionOnlyMechanism(static, budget, beta, src.spawn(), label="deletions")
        self.t = 0

    @staticmethod
    def _split(ev: UpdateEvent) -> tuple[UpdateEvent, UpdateEvent]:
        if ev.op is Op.INSERT:
            return ev, UpdateEvent.noop(ev.t)
        if ev.op is Op.DELETE:
            return UpdateEvent.noop(ev.t), UpdateEvent.ins(ev.t, ev.item)
        return ev, ev

    def feed(self, ev: UpdateEvent) -> bool:
        """Feed one event; True when either half closed a segment."""
        a, b = self._split(ev)
        closed_a = self.ins.feed(a) is not None
        closed_b = self.dels.feed(b) is not None
        self.t = ev.t
        return closed_a or closed_b

    def feed_many(self, events: Sequence[UpdateEvent]) -> None:
        if not events:
            return
        pairs = [self._split(ev) for ev in events]
        self.ins.feed_many([a for a, _ in pairs])
        self.dels.feed_many([b for _, b in pairs])
        self.t = events[-1].t

    @property
    def synced(self) -> bool:
        """Both halves have flushed everything (non-private; harness use only)."""
        return not self.ins._open and not self.dels._open

    def query(self, q: LinearQuery | int, t: int | None = None) -> float:
        return self.ins.query(q, t) - self.dels.query(q, t)

    def pending_bound(self) -> float:
        return self.ins.pending_bound() + self.dels.pending_bound()

    def error_bound(self, beta: float | None = None) -> float:
        return self.ins.error_bound(None, beta) + self.dels.error_bound(None, beta)

    def ledger(self) -> LedgerNode:
        root = LedgerNode("parallel", "two-stream baseline")
        root.add(self.ins.ledger())
        root.add(self.dels.ledger())
        return root

