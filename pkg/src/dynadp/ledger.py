"""(epsilon, delta) accounting: sequential, parallel and adaptive parallel
composition, and the 6/(pi^2 i^2) series allocator.

The ledger does not prove anything about the mechanisms. Leaves trust their
mechanism; the tree exists so that a mis-allocation fails loudly.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from scipy.special import zeta

from .errors import AccountingError, DisjointnessViolation, DomainError

TOL = 1e-9
SERIES_WEIGHT = 6.0 / math.pi**2


@dataclass(frozen=True)
class Budget:
    epsilon: float
    delta: float = 0.0

    def __post_init__(self):
        if not self.epsilon >= 0 or math.isinf(self.epsilon):
            raise DomainError(f"epsilon must be finite and >= 0, got {self.epsilon}")
        if not 0.0 <= self.delta <= 1.0:
            raise DomainError(f"delta must be in [0, 1], got {self.delta}")

    def __add__(self, other: "Budget") -> "Budget":
        return Budget(self.epsilon + other.epsilon, min(1.0, self.delta + other.delta))

    def scale(self, factor: float) -> "Budget":
        return Budget(self.epsilon * factor, self.delta * factor)

    def split(self, parts: int) -> "Budget":
        return self.scale(1.0 / parts)

    def close_to(self, other: "Budget", tol: float = TOL) -> bool:
        return abs(self.epsilon - other.epsilon) <= tol and abs(self.delta - other.delta) <= tol

    def fits_in(self, other: "Budget", tol: float = TOL) -> bool:
        return self.epsilon <= other.epsilon + tol and self.delta <= other.delta + tol

    def __str__(self) -> str:
        return f"(eps={self.epsilon:.6g}, delta={self.delta:.6g})"


ZERO = Budget(0.0, 0.0)


@dataclass(frozen=True)
class Declaration:
    """Half-open timestamp interval [start, stop) a mechanism certifies it read."""

    start: int
    stop: int

    def __post_init__(self):
        if self.stop <= self.start:
            raise DomainError(f"empty declaration [{self.start}, {self.stop})")

    @classmethod
    def closed(cls, first: int, last: int) -> "Declaration":
        return cls(first, last + 1)

    def overlaps(self, other: "Declaration") -> bool:
        return self.start < other.stop and other.start < self.stop

    def __str__(self) -> str:
        return f"[{self.start}, {self.stop - 1}]"


@dataclass(frozen=True)
class BudgetSeries:
    """Infinite family budget_i = total * coef / i**power, i = 1, 2, ..."""

    total: Budget
    coef: float = SERIES_WEIGHT
    power: float = 2.0

    def __getitem__(self, index: int) -> Budget:
        if index < 1:
            raise DomainError(f"series index must be >= 1, got {index}")
        return self.total.scale(self.coef / index**self.power)

    def limit(self) -> Budget:
        if self.power <= 1.0:
            raise AccountingError(f"series with power {self.power} diverges")
        s = self.coef * float(zeta(self.power, 1))
        return Budget(self.total.epsilon * s, min(1.0, self.total.delta * s))


def allocate_series(total: Budget, index: int) -> Budget:
    """Share 6/(pi^2 index^2) of ``total``; the shares over index >= 1 sum to ``total``."""
    return BudgetSeries(total)[index]


def compose_sequential(budgets: Sequence[Budget] | BudgetSeries) -> Budget:
    if isinstance(budgets, BudgetSeries):
        return budgets.limit()
    if not isinstance(budgets, Sequence):
        raise AccountingError("sequential composition needs a finite sequence or a BudgetSeries")
    eps = math.fsum(b.epsilon for b in budgets)
    delta = math.fsum(b.delta for b in budgets)
    return Budget(eps, min(1.0, delta))


def check_disjoint(declarations: Iterable[Declaration]) -> None:
    ordered = sorted(declarations, key=lambda d: (d.start, d.stop))
    for a, b in zip(ordered, ordered[1:]):
        if a.overlaps(b):
            raise DisjointnessViolation(f"declarations {a} and {b} overlap")


def compose_parallel(
    budgets: Sequence[Budget],
    declarations: Sequence[Declaration] | None = None,
    adaptive: bool = False,
) -> Budget:
    if adaptive:
        if declarations is None or len(declarations) != len(budgets):
            raise AccountingError("adaptive parallel composition needs one declaration per budget")
        check_disjoint(declarations)
    if not budgets:
        return ZERO
    return Budget(max(b.epsilon for b in budgets), max(b.delta for b in budgets))


KINDS = ("leaf", "sequential", "parallel", "adaptive_parallel")


@dataclass
class LedgerNode:
    """One node of a composition tree.

    ``series`` stands for the not-yet-materialised tail of an infinite
    sequential composition; ``uniform`` does the same for an infinite parallel
    family whose members all get the same allocation. Materialised children
    must agree with those templates.
    """

    kind: str
    label: str = ""
    budget: Budget | None = None
    children: list["LedgerNode"] = field(default_factory=list)
    series: BudgetSeries | None = None
    uniform: Budget | None = None
    declaration: Declaration | None = None
    index: int | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise DomainError(f"unknown ledger node kind {self.kind!r}")
        if self.kind == "leaf" and self.budget is None:
            raise DomainError("leaf needs a budget")

    def add(self, child: "LedgerNode") -> "LedgerNode":
        self.children.append(child)
        return child

    def total(self) -> Budget:
        """Allocated budget, including unmaterialised infinite tails."""
        if self.kind == "leaf":
            return self.budget
        kids = [c.total() for c in self.children]
        if self.kind == "sequential":
            if self.series is None:
                return compose_sequential(kids)
            for pos, (child, got) in enumerate(zip(self.children, kids), 1):
                want = self.series[child.index or pos]
                if not got.fits_in(want):
                    raise AccountingError(f"{self.label}: child {child.label} holds {got} > series share {want}")
            return compose_sequential(self.series)
        if self.uniform is not None:
            for child, got in zip(self.children, kids):
                if not got.fits_in(self.uniform):
                    raise AccountingError(f"{self.label}: child {child.label} holds {got} > {self.uniform}")
            kids = kids + [self.uniform]
        decls = None
        if self.kind == "adaptive_parallel":
            decls = [c.declaration for c in self.children]
            if any(d is None for d in decls):
                raise AccountingError(f"{self.label}: adaptive child without declaration")
            check_disjoint(decls)
            return compose_parallel(kids)
        return compose_parallel(kids, decls)

    def spent(self) -> Budget:
        """Budget of the materialised leaves only."""
        if self.kind == "leaf":
            return self.budget
        kids = [c.spent() for c in self.children]
        if self.kind == "sequential":
            return compose_sequential(kids)
        return compose_parallel(kids)

    def dump(self, max_children: int = 6, _depth: int = 0) -> str:
        pad = "  " * _depth
        head = f"{pad}{self.kind:<17} {self.label}"
        if self.declaration is not None:
            head += f" decl={self.declaration}"
        head += f"  alloc={self.total()}"
        if self.kind != "leaf":
            head += f" spent={self.spent()}"
        if self.series is not None:
            head += f"  [series {self.series.coef:.4g}/i^{self.series.power:g} of {self.series.total}]"
        if self.uniform is not None:
            head += f"  [each {self.uniform}]"
        lines = [head]
        shown = self.children[:max_children]
        for child in shown:
            lines.append(child.dump(max_children, _depth + 1))
        if len(self.children) > len(shown):
            lines.append(f"{pad}  ... {len(self.children) - len(shown)} more")
        return "\n".join(lines)


def leaf(label: str, budget: Budget, **kw) -> LedgerNode:
    return LedgerNode("leaf", label, budget=budget, **kw)
