"""Sparse vector technique as a streaming object that declares what it read."""
from __future__ import annotations

from typing import NamedTuple, Sequence

import numpy as np

from .errors import DomainError, StateError
from .ledger import Declaration
from .noise import NoiseSource, laplace_from_uniform


class Halt(NamedTuple):
    index: int  # 1-based position of the query that crossed the threshold
    declaration: Declaration


class SvtInstance:
    """Above-threshold with threshold noise Lap(2/eps) and query noise Lap(4/eps).

    The i-th fed value is taken to be the query evaluated over timestamps
    ``start .. start + i - 1``; the declaration on halt is that range. A
    noisy value exactly equal to the noisy threshold does not cross.
    """

    def __init__(self, epsilon: float, theta: float, src: NoiseSource, start: int = 1):
        if not epsilon > 0:
            raise DomainError("SVT epsilon must be positive")
        self.epsilon = epsilon
        self.theta = theta
        self.src = src
        self.start = start
        self.fed = 0
        self.halted = False
        self._query_scale = 4.0 / epsilon
        self.theta_hat = theta + src.laplace(2.0 / epsilon)

    def feed(self, value: float) -> Halt | None:
        if self.halted:
            raise StateError("SVT instance already halted")
        self.fed += 1
        if value + self.src.laplace(self._query_scale) > self.theta_hat:
            self.halted = True
            return Halt(self.fed, Declaration.closed(self.start, self.start + self.fed - 1))
        return None

    def feed_many(self, values: Sequence[float] | np.ndarray) -> Halt | None:
        """Feed values in order, stopping at the first crossing.

        Consumes exactly the noise that repeated :meth:`feed` calls would.
        """
        if self.halted:
            raise StateError("SVT instance already halted")
        values = np.asarray(values, dtype=np.float64)
        n = values.size
        if n == 0:
            return None
        if self.src.suppress:
            hits = np.flatnonzero(values > self.theta_hat)
        else:
            noisy = values + laplace_from_uniform(self.src.uniforms(n), self._query_scale)
            hits = np.flatnonzero(noisy > self.theta_hat)
        used = int(hits[0]) + 1 if hits.size else n
        if self.src.suppress:
            self.src.samples += used
        else:
            self.src.advance(used)
        self.fed += used
        if hits.size:
            self.halted = True
            return Halt(self.fed, Declaration.closed(self.start, self.start + self.fed - 1))
        return None

    def close(self) -> Declaration:
        """Stop without a crossing; declares everything fed so far."""
        if self.fed == 0:
            raise StateError("cannot close an SVT instance that saw no query")
        self.halted = True
        return Declaration.closed(self.start, self.start + self.fed - 1)


def svt_feed(inst: SvtInstance, value: float) -> Halt | None:
    return inst.feed(value)
