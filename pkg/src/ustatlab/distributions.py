"""Sampling laws, counter-based random substreams, and exact expectations.

Substreams follow a counter-based discipline: the generator handed to a
consumer is keyed by (master seed, substream id), so the k-th draw of any
substream is a pure function of (master seed, substream id, k). Replicas
seeded this way give identical results no matter how work is scheduled
across threads.
"""

from __future__ import annotations

import hashlib
import itertools
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .hilbert import HilbertSpace

__all__ = [
    "FiniteDistribution",
    "SamplerSpec",
    "EnumerationBudgetError",
    "substream",
    "mix_ids",
    "draw_iid",
    "exact_expectation",
]

ENUMERATION_BUDGET = 10**7


class EnumerationBudgetError(RuntimeError):
    """Exact enumeration would exceed the configured term budget."""


@dataclass(frozen=True, eq=False)
class FiniteDistribution:
    """A law with finitely many atoms.

    atoms: shape (A,) for scalar laws or (A, dim) for vector-valued laws.
    probs: nonnegative, sums to 1 within 1e-12.
    """

    atoms: np.ndarray
    probs: np.ndarray

    def __post_init__(self) -> None:
        atoms = np.array(self.atoms, dtype=np.float64, copy=True)
        probs = np.array(self.probs, dtype=np.float64, copy=True)
        if atoms.ndim not in (1, 2) or atoms.shape[0] < 1:
            raise ValueError("atoms must be a nonempty 1-d or 2-d array")
        if probs.shape != (atoms.shape[0],):
            raise ValueError("probs must have one entry per atom")
        if np.any(probs < 0.0) or not np.all(np.isfinite(probs)):
            raise ValueError("probs must be finite and nonnegative")
        if abs(probs.sum() - 1.0) > 1e-12:
            raise ValueError(f"probs sum to {probs.sum()!r}, expected 1 within 1e-12")
        flat = atoms.reshape(atoms.shape[0], -1)
        if len(np.unique(flat, axis=0)) != atoms.shape[0]:
            raise ValueError("atoms must be distinct")
        atoms.setflags(write=False)
        probs.setflags(write=False)
        object.__setattr__(self, "atoms", atoms)
        object.__setattr__(self, "probs", probs)

    @property
    def size(self) -> int:
        return self.atoms.shape[0]

    def atom(self, i: int):
        """The i-th atom, as a scalar for 1-d laws or a coordinate row."""
        return float(self.atoms[i]) if self.atoms.ndim == 1 else self.atoms[i]

    def cache_token(self) -> bytes:
        """Stable content digest, used to memoize derived quantities."""
        h = hashlib.sha256()
        h.update(str(self.atoms.shape).encode())
        h.update(self.atoms.tobytes())
        h.update(self.probs.tobytes())
        return h.digest()

    @classmethod
    def rademacher(cls) -> "FiniteDistribution":
        return cls(np.array([-1.0, 1.0]), np.array([0.5, 0.5]))

    @classmethod
    def uniform_grid(cls, k: int) -> "FiniteDistribution":
        """Uniform law on k evenly spaced points of [-1, 1] (k >= 2)."""
        if k < 2:
            raise ValueError("uniform-grid needs at least 2 points")
        return cls(np.linspace(-1.0, 1.0, k), np.full(k, 1.0 / k))


@dataclass(frozen=True)
class SamplerSpec:
    """What to sample and from which seed stream.

    kind: one of "finite", "rademacher", "uniform-grid", "discretized-gaussian".
    dist: required for kind="finite".
    grid_points: required for kind="uniform-grid".
    space: required for kind="discretized-gaussian"; coordinates are i.i.d.
        standard normals scaled by weights**0.5 (sampling only, no finite
        support, so exact enumeration is unavailable).
    seed_stream: 64-bit base id; draws are deterministic given
        (seed_stream, substream).
    """

    kind: str
    seed_stream: int = 0
    dist: FiniteDistribution | None = None
    grid_points: int | None = None
    space: HilbertSpace | None = None

    def __post_init__(self) -> None:
        if self.kind not in ("finite", "rademacher", "uniform-grid", "discretized-gaussian"):
            raise ValueError(f"unknown sampler kind {self.kind!r}")
        if self.kind == "finite" and self.dist is None:
            raise ValueError("finite sampler needs dist")
        if self.kind == "uniform-grid" and (self.grid_points is None or self.grid_points < 2):
            raise ValueError("uniform-grid sampler needs grid_points >= 2")
        if self.kind == "discretized-gaussian" and self.space is None:
            raise ValueError("discretized-gaussian sampler needs space")
        if not 0 <= int(self.seed_stream) < 2**64:
            raise ValueError("seed_stream must fit in 64 bits")

    def finite_support(self) -> FiniteDistribution | None:
        """The finite law backing this sampler, if it has one."""
        if self.kind == "finite":
            return self.dist
        if self.kind == "rademacher":
            return FiniteDistribution.rademacher()
        if self.kind == "uniform-grid":
            return FiniteDistribution.uniform_grid(self.grid_points)
        return None


def mix_ids(*ids: int) -> int:
    """Fold integers into one 64-bit word (splitmix64-style rounds)."""
    acc = 0x9E3779B97F4A7C15
    for value in ids:
        acc = (acc ^ (int(value) & 0xFFFFFFFFFFFFFFFF)) * 0xBF58476D1CE4E5B9 % 2**64
        acc = (acc ^ (acc >> 31)) * 0x94D049BB133111EB % 2**64
        acc ^= acc >> 29
    return acc


def substream(master_seed: int, *ids: int) -> np.random.Generator:
    """A generator whose state is a pure function of (master_seed, ids, draw index)."""
    key = np.array([int(master_seed) % 2**64, mix_ids(*ids)], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def draw_iid(spec: SamplerSpec, n: int, stream: int) -> np.ndarray:
    """n i.i.d. draws from spec on substream `stream`.

    Returns shape (n,) for scalar laws, (n, dim) for vector laws. The result
    depends only on (spec.seed_stream, stream, spec contents).
    """
    if n < 0:
        raise ValueError("n must be nonnegative")
    rng = substream(spec.seed_stream, stream)
    if spec.kind == "rademacher":
        return rng.integers(0, 2, size=n).astype(np.float64) * 2.0 - 1.0
    if spec.kind == "uniform-grid":
        return np.linspace(-1.0, 1.0, spec.grid_points)[rng.integers(0, spec.grid_points, size=n)]
    if spec.kind == "discretized-gaussian":
        scale = np.sqrt(spec.space.weights)
        return rng.standard_normal((n, spec.space.dim)) * scale
    idx = rng.choice(spec.dist.size, size=n, p=spec.dist.probs)
    return np.array(spec.dist.atoms[idx], dtype=np.float64)


def exact_expectation(
    f: Callable[..., object],
    dist: FiniteDistribution,
    j: int,
    budget: int = ENUMERATION_BUDGET,
):
    """E[f(xi_1, ..., xi_j)] by full enumeration over the j-fold support.

    Errors out (rather than silently truncating) when size**j exceeds the
    budget. Returns whatever scalar/array type f produces.
    """
    if j < 0:
        raise ValueError("j must be nonnegative")
    terms = dist.size**j
    if terms > budget:
        raise EnumerationBudgetError(
            f"enumeration needs {terms} terms, budget is {budget}"
        )
    acc = None
    for combo in itertools.product(range(dist.size), repeat=j):
        p = 1.0
        for i in combo:
            p *= dist.probs[i]
        value = f(*(dist.atom(i) for i in combo))
        term = np.asarray(value, dtype=np.float64) * p
        acc = term if acc is None else acc + term
    if acc is None:  # unreachable: product(..., repeat=0) yields one empty tuple
        raise AssertionError("empty enumeration")
    return float(acc) if acc.ndim == 0 else acc
