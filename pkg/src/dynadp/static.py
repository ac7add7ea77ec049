"""Static mechanisms behind the black-box contract, and their error functions.

A static mechanism turns a dataset into a :class:`Release` from which any
query of its class can be answered. The dynamic constructions only ever call
``release`` and ``alpha``.

Error-function constants
------------------------
===============  =========================================================
laplace          k=1: exact tail ``b ln(|Q|/beta)``;
                 k>1: ``min(k b ln(k|Q|/beta), b max(sqrt(8k L), 2 sqrt2 L))``
                 with ``L = ln(2|Q|/beta)``, from the Chernoff bound on the
                 Laplace MGF (valid, no hidden constant)
gaussian         ``sigma sqrt(k) sqrt(2 ln(2|Q|/beta))`` (exact sub-gaussian tail)
pmw_pure         ``PMW_CONSTANT * |D|^(2/3) (ln|X| ln(|Q|/beta) / eps)^(1/3)``
pmw_approx       ``PMW_CONSTANT * |D|^(1/2) (sqrt(ln|X| ln(1/delta)) ln(|Q|/beta) / eps)^(1/2)``
pmw, k>1         union bound ``k * alpha(eps, delta, beta/k)``
===============  =========================================================
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .core import Dataset, LinearQuery, QueryClass
from .errors import DimensionError, DomainError
from .ledger import Budget
from .noise import NoiseSource

PMW_CONSTANT = 1.0

PER_QUERY = "per_query_noisy"
HISTOGRAM = "synthetic_histogram"


@dataclass
class Release:
    kind: str
    values: np.ndarray  # per-query answers, or histogram over X
    budget: Budget
    queries: QueryClass

    def __post_init__(self):
        if self.kind == HISTOGRAM and np.any(self.values < 0):
            raise DomainError("synthetic histogram has negative mass")

    def answer(self, q: LinearQuery | int) -> float:
        if self.kind == PER_QUERY:
            if type(q) is int and 0 <= q < self.values.size:
                return float(self.values[q])
            return float(self.values[self.queries.index(q)])
        w = self.queries[q].weights if isinstance(q, (int, np.integer)) else q.weights
        return float(w @ self.values)

    def answers(self) -> np.ndarray:
        if self.kind == PER_QUERY:
            return self.values
        return self.queries.matrix @ self.values

    @property
    def total(self) -> float:
        return float(self.values.sum()) if self.kind == HISTOGRAM else float("nan")

    def to_lines(self) -> list[str]:
        if self.kind == PER_QUERY:
            return [f"{i},{v!r}" for i, v in enumerate(self.values.tolist())]
        return [f"{x},{v!r}" for x, v in enumerate(self.values.tolist()) if v != 0.0]


def laplace_sum_bound(k: int, scale: float, beta: float) -> float:
    """Two-sided (1 - beta) bound on |sum of k iid Lap(scale)|."""
    if k < 1:
        raise DomainError("k must be >= 1")
    union = k * scale * math.log(k / beta)
    log_term = math.log(2.0 / beta)
    chernoff = scale * max(math.sqrt(8.0 * k * log_term), 2.0 * math.sqrt(2.0) * log_term)
    return min(union, chernoff)


def gaussian_sigma(epsilon: float, delta: float, num_queries: int) -> float:
    """Per-query sigma giving (epsilon, delta)-DP for |Q| sensitivity-1 queries.

    One query: the classical calibration. Several: the smaller of basic
    composition over the classical calibration and the zCDP conversion.
    """
    if not delta > 0:
        raise DomainError("Gaussian mechanism requires delta > 0")
    if not epsilon > 0:
        raise DomainError("Gaussian mechanism requires epsilon > 0")
    if num_queries == 1:
        return math.sqrt(2.0 * math.log(1.25 / delta)) / epsilon
    basic = math.sqrt(2.0 * math.log(1.25 * num_queries / delta)) * num_queries / epsilon
    lg = math.log(1.0 / delta)
    root_rho = -math.sqrt(lg) + math.sqrt(lg + epsilon)
    rho = root_rho * root_rho
    return min(basic, math.sqrt(num_queries / (2.0 * rho)))


class StaticMechanism:
    name = "abstract"

    def __init__(self, queries: QueryClass):
        self.queries = queries

    def release(self, data: Dataset, budget: Budget, src: NoiseSource) -> Release:
        raise NotImplementedError

    def alpha(self, k: int, budget: Budget, beta: float, data_size: int = 1) -> float:
        raise NotImplementedError

    def _check(self, data: Dataset) -> None:
        if data.domain != self.queries.domain:
            raise DimensionError("dataset and query class domains differ")


class LaplaceMechanism(StaticMechanism):
    name = "laplace"

    def scale(self, budget: Budget) -> float:
        if not budget.epsilon > 0:
            raise DomainError("Laplace mechanism requires epsilon > 0")
        return len(self.queries) / budget.epsilon

    def release(self, data, budget, src):
        self._check(data)
        scale = self.scale(budget)
        exact = self.queries.evaluate_all(data)
        return Release(PER_QUERY, exact + src.laplace_array(scale, exact.size), budget, self.queries)

    def alpha(self, k, budget, beta, data_size=1):
        nq = len(self.queries)
        return laplace_sum_bound(k, self.scale(budget), beta / nq)


class GaussianMechanism(StaticMechanism):
    name = "gaussian"

    def sigma(self, budget: Budget) -> float:
        return gaussian_sigma(budget.epsilon, budget.delta, len(self.queries))

    def release(self, data, budget, src):
        self._check(data)
        sigma = self.sigma(budget)
        exact = self.queries.evaluate_all(data)
        return Release(PER_QUERY, exact + src.gaussian_array(sigma, exact.size), budget, self.queries)

    def alpha(self, k, budget, beta, data_size=1):
        nq = len(self.queries)
        return self.sigma(budget) * math.sqrt(k) * math.sqrt(2.0 * math.log(2.0 * nq / beta))


def pmw_alpha(epsilon, delta, beta, data_size, num_queries, domain_size) -> float:
    n = max(data_size, 1)
    log_x = math.log(max(domain_size, 2))
    log_q = math.log(num_queries / beta)
    if delta == 0:
        return PMW_CONSTANT * n ** (2 / 3) * (log_x * log_q / epsilon) ** (1 / 3)
    return PMW_CONSTANT * n**0.5 * (math.sqrt(log_x * math.log(1.0 / delta)) * log_q / epsilon) ** 0.5


class PMWMechanism(StaticMechanism):
    """Private multiplicative weights over a synthetic histogram.

    A ``total_share`` of epsilon privatises |D|; the rest is split evenly over
    ``rounds`` rounds, each spending half on report-noisy-max selection of the
    worst-answered query and half on a Laplace measurement of it, followed by
    a multiplicative-weights update. ``rounds=None`` picks
    ``(n eps sqrt(ln|X|) / ln|Q|)^(2/3)`` capped at ``max_rounds``. In
    noiseless mode the loop runs until every query is within ``tolerance``
    (or ``max_rounds``).
    """

    name = "pmw"

    def __init__(self, queries: QueryClass, rounds: int | None = None, total_share: float = 0.25,
                 max_rounds: int = 400, tolerance: float = 0.5, learning_rate: float = 1.0,
                 noiseless_rounds: int = 20000):
        super().__init__(queries)
        if not 0 < total_share < 1:
            raise DomainError("total_share must be in (0, 1)")
        self.rounds = rounds
        self.total_share = total_share
        self.max_rounds = max_rounds
        self.tolerance = tolerance
        self.learning_rate = learning_rate
        self.noiseless_rounds = noiseless_rounds

    def _rounds(self, n_est: float, epsilon: float) -> int:
        if self.rounds is not None:
            return self.rounds
        nq = len(self.queries)
        logx = math.log(max(self.queries.domain.size, 2))
        raw = (max(n_est, 1.0) * epsilon * math.sqrt(logx) / math.log(nq + 1)) ** (2 / 3)
        return int(min(self.max_rounds, max(1, round(raw))))

    def release(self, data, budget, src):
        self._check(data)
        if not budget.epsilon > 0:
            raise DomainError("PMW requires epsilon > 0")
        Q = self.queries.matrix
        size_x = Q.shape[1]
        eps_total = budget.epsilon * self.total_share
        n_tilde = max(data.total + src.laplace(1.0 / eps_total), 0.0)
        exact = Q @ data.to_vector()
        hist = np.full(size_x, n_tilde / size_x)
        if n_tilde == 0.0:
            return Release(HISTOGRAM, hist, budget, self.queries)
        if src.suppress:
            rounds = self.rounds if self.rounds is not None else self.noiseless_rounds
        else:
            rounds = self._rounds(n_tilde, budget.epsilon)
        eps_round = budget.epsilon * (1.0 - self.total_share) / max(rounds, 1)
        for _ in range(rounds):
            err = exact - Q @ hist
            if src.suppress:
                i = int(np.argmax(np.abs(err)))
                if abs(err[i]) <= self.tolerance:
                    break
                measured = exact[i]
            else:
                scores = np.abs(err) + src.laplace_array(4.0 / eps_round, err.size)
                i = int(np.argmax(scores))
                measured = exact[i] + src.laplace(2.0 / eps_round)
            q = Q[i]
            hist = hist * np.exp(self.learning_rate * q * (measured - q @ hist) / (2.0 * n_tilde))
            hist *= n_tilde / hist.sum()
        return Release(HISTOGRAM, hist, budget, self.queries)

    def alpha(self, k, budget, beta, data_size=1):
        one = pmw_alpha(budget.epsilon, budget.delta, beta / k, data_size, len(self.queries),
                        self.queries.domain.size)
        return k * one if k > 1 else one


@dataclass(frozen=True)
class ErrorParams:
    epsilon: float
    delta: float = 0.0
    beta: float = 0.05
    k: int = 1
    data_size: int = 1
    num_queries: int = 1
    domain_size: int = 1

    def __post_init__(self):
        if not 0 < self.beta < 1:
            raise DomainError("beta must be in (0, 1)")
        if self.k < 1:
            raise DomainError("k must be >= 1")
        if not self.epsilon > 0:
            raise DomainError("epsilon must be > 0")


def error_bound(params: ErrorParams, mech: str) -> float:
    """alpha^(k) for the named mechanism family (see the module table)."""
    p = params
    if mech == "laplace":
        return laplace_sum_bound(p.k, p.num_queries / p.epsilon, p.beta / p.num_queries)
    if mech == "gaussian":
        sigma = gaussian_sigma(p.epsilon, p.delta, p.num_queries)
        return sigma * math.sqrt(p.k) * math.sqrt(2.0 * math.log(2.0 * p.num_queries / p.beta))
    if mech in ("pmw_pure", "pmw_approx"):
        delta = 0.0 if mech == "pmw_pure" else p.delta
        if mech == "pmw_approx" and not delta > 0:
            raise DomainError("pmw_approx needs delta > 0")
        one = pmw_alpha(p.epsilon, delta, p.beta / p.k, p.data_size, p.num_queries, p.domain_size)
        return p.k * one if p.k > 1 else one
    raise DomainError(f"unknown mechanism {mech!r}")


def release_laplace(data: Dataset, queries: QueryClass, budget: Budget, src: NoiseSource) -> Release:
    return LaplaceMechanism(queries).release(data, budget, src)


def release_gaussian(data: Dataset, queries: QueryClass, budget: Budget, src: NoiseSource) -> Release:
    return GaussianMechanism(queries).release(data, budget, src)


def release_pmw(data: Dataset, queries: QueryClass, budget: Budget, src: NoiseSource, **opts) -> Release:
    return PMWMechanism(queries, **opts).release(data, budget, src)


STATIC = {"laplace": LaplaceMechanism, "gaussian": GaussianMechanism, "pmw": PMWMechanism}


def make_static(name: str, queries: QueryClass, **opts) -> StaticMechanism:
    try:
        cls = STATIC[name]
    except KeyError:
        raise DomainError(f"unknown static mechanism {name!r}; choose from {sorted(STATIC)}") from None
    return cls(queries, **opts)


def serialize_release(release: Release) -> str:
    return "\n".join(release.to_lines()) + "\n"


def parse_release_lines(lines: Iterable[str]) -> dict[int, float]:
    out = {}
    for line in lines:
        line = line.strip()
        if line:
            k, v = line.split(",")
            out[int(k)] = float(v)
    return out
