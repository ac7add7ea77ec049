"""Seeded noise source shared by all mechanisms.

Samples come from inverse-CDF transforms of a buffered stream of 64-bit
uniforms, so a run is reproducible from its seed and batched draws consume
exactly the same uniforms as one-at-a-time draws.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtri

from .errors import DomainError

_BLOCK = 4096
_INV_2_53 = 2.0**-53


@dataclass(frozen=True)
class Laplace:
    scale: float


@dataclass(frozen=True)
class Gaussian:
    sigma: float


class NoiseSource:
    def __init__(self, seed: int = 0, suppress: bool = False):
        self.seed = int(seed) & 0xFFFF_FFFF_FFFF_FFFF
        self.suppress = suppress
        self.samples = 0  # draws handed out, including suppressed ones
        self._rng = np.random.Generator(np.random.PCG64(self.seed))
        self._buf = np.empty(0)
        self._pos = 0
        self._children = 0

    def spawn(self) -> "NoiseSource":
        """Independent child source; the k-th child of a seed is always the same."""
        self._children += 1
        ss = np.random.SeedSequence(entropy=self.seed, spawn_key=(self._children,))
        return NoiseSource(int(ss.generate_state(1, np.uint64)[0]), self.suppress)

    def _refill(self, need: int) -> None:
        rest = self._buf[self._pos:]
        n = max(_BLOCK, need - rest.size)
        bits = self._rng.integers(0, 2**64, size=n, dtype=np.uint64, endpoint=False)
        fresh = ((bits >> np.uint64(11)).astype(np.float64) + 0.5) * _INV_2_53
        self._buf = np.concatenate([rest, fresh])
        self._pos = 0

    def uniforms(self, n: int) -> np.ndarray:
        """Next ``n`` uniforms in (0, 1) without consuming them."""
        if self._pos + n > self._buf.size:
            self._refill(n)
        return self._buf[self._pos:self._pos + n]

    def advance(self, n: int) -> None:
        if self._pos + n > self._buf.size:
            self._refill(n)
        self._pos += n
        self.samples += n

    def uniform(self) -> float:
        if self._pos >= self._buf.size:
            self._refill(1)
        u = float(self._buf[self._pos])
        self._pos += 1
        self.samples += 1
        return u

    def laplace(self, scale: float) -> float:
        if not scale > 0:
            raise DomainError(f"Laplace scale must be positive, got {scale}")
        if self.suppress:
            self.samples += 1
            return 0.0
        u = self.uniform()
        if u < 0.5:
            return scale * math.log(2.0 * u)
        return -scale * math.log(2.0 * (1.0 - u))

    def laplace_array(self, scale: float, n: int) -> np.ndarray:
        if not scale > 0:
            raise DomainError(f"Laplace scale must be positive, got {scale}")
        if self.suppress:
            self.samples += n
            return np.zeros(n)
        if n == 1:
            return np.array([self.laplace(scale)])
        u = self.uniforms(n)
        out = laplace_from_uniform(u, scale)
        self.advance(n)
        return out

    def gaussian(self, sigma: float) -> float:
        if not sigma > 0:
            raise DomainError(f"Gaussian sigma must be positive, got {sigma}")
        if self.suppress:
            self.samples += 1
            return 0.0
        return sigma * float(ndtri(self.uniform()))

    def gaussian_array(self, sigma: float, n: int) -> np.ndarray:
        if not sigma > 0:
            raise DomainError(f"Gaussian sigma must be positive, got {sigma}")
        if self.suppress:
            self.samples += n
            return np.zeros(n)
        out = sigma * ndtri(self.uniforms(n))
        self.advance(n)
        return out


def laplace_from_uniform(u: np.ndarray, scale: float) -> np.ndarray:
    lo = u < 0.5
    return np.where(lo, scale * np.log(2.0 * np.where(lo, u, 0.25)),
                    -scale * np.log(2.0 * (1.0 - np.where(lo, 0.75, u))))


def sample_noise(src: NoiseSource, dist: Laplace | Gaussian) -> float:
    if isinstance(dist, Laplace):
        return src.laplace(dist.scale)
    if isinstance(dist, Gaussian):
        return src.gaussian(dist.sigma)
    raise DomainError(f"unknown distribution {dist!r}")


_MASK = 0xFFFF_FFFF_FFFF_FFFF
_GOLDEN = 0x9E3779B97F4A7C15


def _splitmix(x: int) -> int:
    z = (x + _GOLDEN) & _MASK
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return z ^ (z >> 31)


def mix_key(*parts: int) -> int:
    """Hash integers into a 64-bit key (splitmix64 chain)."""
    h = 0
    for p in parts:
        h = _splitmix(h ^ (p & _MASK))
    return h


class KeyedSource(NoiseSource):
    """Cheap source whose uniforms are a fixed function of ``key``.

    Used to draw noise for releases that are only materialised when first
    read; construction costs a few microseconds instead of a PCG64 setup.
    """

    def __init__(self, key: int, suppress: bool = False):
        self.seed = key & _MASK
        self.suppress = suppress
        self.samples = 0
        self._buf = np.empty(0)
        self._pos = 0
        self._children = 0
        self._counter = self.seed

    def _refill(self, need: int) -> None:
        rest = self._buf[self._pos:]
        n = need - rest.size
        fresh = np.empty(n)
        c = self._counter
        for i in range(n):
            c = (c + _GOLDEN) & _MASK
            fresh[i] = ((_splitmix(c) >> 11) + 0.5) * _INV_2_53
        self._counter = c
        self._buf = np.concatenate([rest, fresh]) if rest.size else fresh
        self._pos = 0
