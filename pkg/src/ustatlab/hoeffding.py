"""Exact projections of symmetric kernels and the degeneracy ladder.

The order-k projection of a symmetric kernel h of arity m under a law P is

    h_k(s_1, ..., s_k) = sum_{j=0}^{k} (-1)^(k-j)
        sum_{u in Inc^j_k} E[ h(s_{u_1}, ..., s_{u_j}, xi_{j+1}, ..., xi_m) ],

an inclusion-exclusion over which arguments stay pinned. Each h_k is fully
degenerate: integrating out any single argument gives zero. The complete
U-statistic then decomposes as

    U_{m,n}(h) = sum_{k=0}^{m} binom(m, k) * [binom(n, m)/binom(n, k)] * U_{k,n}(h_k),

which `decomposition_check` verifies term by term on a concrete sample.
Expectations are exact enumerations over finite supports; a Monte Carlo
plug-in variant covers laws without enumerable support.
"""

from __future__ import annotations

import itertools
import math
import warnings
from dataclasses import dataclass

import numpy as np

from .distributions import FiniteDistribution, SamplerSpec, draw_iid, exact_expectation, mix_ids
from .hilbert import row_norms
from .kernels import KernelSpec, _as_row

__all__ = [
    "ProjectedKernel",
    "DegeneracyReport",
    "DecompositionCheck",
    "project",
    "project_mc",
    "degeneracy_order",
    "decomposition_check",
]

DEGENERACY_TOL = 1e-9


def _arg_key(value) -> bytes:
    arr = np.asarray(value, dtype=np.float64)
    return arr.tobytes()


def _canonical_key(args) -> tuple[bytes, ...]:
    # symmetric kernels let us sort pinned arguments for better cache reuse
    return tuple(sorted(_arg_key(a) for a in args))


class _ExactPartials:
    """Memoized E[h(fixed, xi, ..., xi)] with the tail enumerated exactly."""

    def __init__(self, base: KernelSpec, dist: FiniteDistribution):
        self.base = base
        self.dist = dist
        self.table: dict = {}

    def mean(self, fixed: tuple) -> np.ndarray:
        key = _canonical_key(fixed)
        hit = self.table.get(key)
        if hit is not None:
            return hit
        dim = self.base.codomain.dim
        tail = self.base.arity - len(fixed)
        value = exact_expectation(
            lambda *rest: _as_row(self.base.eval_one(*fixed, *rest), dim),
            self.dist,
            tail,
        )
        value = np.asarray(value, dtype=np.float64).reshape(dim)
        self.table[key] = value
        return value


class _PlugInPartials:
    """Tail expectations replaced by a fixed Monte Carlo sample mean."""

    def __init__(self, base: KernelSpec, sampler: SamplerSpec, draws: int, stream: int):
        self.base = base
        self.draws = draws
        self.table: dict = {}
        # one shared tail sample per tail length keeps h_k a consistent
        # functional of the same empirical measure
        self.tails = {
            t: np.stack(
                [draw_iid(sampler, draws, mix_ids(stream, 9100 + t, pos)) for pos in range(t)],
                axis=1,
            )
            if t > 0
            else None
            for t in range(base.arity + 1)
        }

    def mean(self, fixed: tuple) -> np.ndarray:
        key = _canonical_key(fixed)
        hit = self.table.get(key)
        if hit is not None:
            return hit
        dim = self.base.codomain.dim
        tail = self.base.arity - len(fixed)
        if tail == 0:
            value = _as_row(self.base.eval_one(*fixed), dim)
        else:
            rows = self.tails[tail]
            acc = np.zeros(dim)
            for r in range(self.draws):
                acc += _as_row(self.base.eval_one(*fixed, *rows[r]), dim)
            value = acc / self.draws
        self.table[key] = value
        return value


@dataclass(frozen=True, eq=False)
class ProjectedKernel:
    """The order-k projection h_k of a symmetric base kernel."""

    base: KernelSpec
    order: int
    partials: object

    def eval(self, *args) -> np.ndarray:
        if len(args) != self.order:
            raise ValueError(f"projection has order {self.order}, got {len(args)} arguments")
        dim = self.base.codomain.dim
        acc = np.zeros(dim)
        for j in range(self.order + 1):
            sign = -1.0 if (self.order - j) % 2 else 1.0
            for u in itertools.combinations(range(self.order), j):
                acc += sign * self.partials.mean(tuple(args[i] for i in u))
        return acc

    def as_kernel(self) -> KernelSpec:
        """Repackage as a kernel of arity k for use in U-statistics."""
        if self.order < 1:
            raise ValueError("order-0 projection is a constant, not a kernel")
        return KernelSpec(
            arity=self.order,
            codomain=self.base.codomain,
            eval_one=self.eval,
            symmetric=True,
            name=f"proj{self.order}({self.base.name})",
        )


def project(base: KernelSpec, dist: FiniteDistribution, k: int) -> ProjectedKernel:
    """Exact order-k projection of a symmetric kernel under a finite law.

    Results are memoized per (base, dist, k); repeated calls share the
    underlying table of partial expectations.
    """
    if not base.symmetric:
        raise ValueError("projection requires a symmetric kernel; call symmetrize first")
    if not 0 <= k <= base.arity:
        raise ValueError(f"projection order must lie in [0, {base.arity}], got {k}")
    token = dist.cache_token()
    partials = base._cache.get(("partials", token))
    if partials is None:
        partials = _ExactPartials(base, dist)
        base._cache[("partials", token)] = partials
    proj = base._cache.get(("proj", token, k))
    if proj is None:
        proj = ProjectedKernel(base=base, order=k, partials=partials)
        base._cache[("proj", token, k)] = proj
    return proj


def project_mc(
    base: KernelSpec,
    sampler: SamplerSpec,
    k: int,
    draws: int = 10_000,
    stream: int = 0,
) -> ProjectedKernel:
    """Plug-in projection for laws without enumerable support.

    Tail expectations use a Monte Carlo sample mean over `draws` points, so
    values carry O(draws**-0.5) error; compare against the exact mode with a
    4-standard-error tolerance when the law is actually finite.
    """
    if not base.symmetric:
        raise ValueError("projection requires a symmetric kernel; call symmetrize first")
    if not 0 <= k <= base.arity:
        raise ValueError(f"projection order must lie in [0, {base.arity}], got {k}")
    if draws < 2:
        raise ValueError("draws must be at least 2")
    return ProjectedKernel(base=base, order=k, partials=_PlugInPartials(base, sampler, draws, stream))


@dataclass(frozen=True)
class DegeneracyReport:
    """Projection residuals over the support and the resulting order."""

    order: int
    residuals: tuple[float, ...]  # max ||h_k|| over support^k, k = 1..arity
    mean_norm: float  # ||h_0||
    tol: float
    declared: int | None
    declared_matches: bool | None

    @property
    def fully_degenerate(self) -> bool:
        """All projections below the arity vanish and the kernel is centered."""
        arity = len(self.residuals)
        return self.order == arity and self.mean_norm <= self.tol


def degeneracy_order(
    base: KernelSpec, dist: FiniteDistribution, tol: float = DEGENERACY_TOL
) -> DegeneracyReport:
    """Smallest k >= 1 whose projection survives on the support.

    Returns order m (the arity) when every lower projection vanishes. The
    mean ||h_0|| is reported separately: the tail-scan normalization
    additionally requires a centered kernel.
    """
    m = base.arity
    space = base.codomain
    h0 = project(base, dist, 0).eval()
    residuals = []
    order = None
    for k in range(1, m + 1):
        proj = project(base, dist, k)
        worst = 0.0
        for combo in itertools.combinations_with_replacement(range(dist.size), k):
            args = tuple(dist.atom(i) for i in combo)
            worst = max(worst, float(row_norms(space, proj.eval(*args))))
        residuals.append(worst)
        if order is None and worst > tol:
            order = k
    if order is None:
        order = m
    declared = base.declared_degeneracy
    matches = None if declared is None else (declared == order)
    if matches is False:
        warnings.warn(
            f"kernel {base.name!r} declares degeneracy {declared} but the computed "
            f"order under this law is {order}",
            stacklevel=2,
        )
    return DegeneracyReport(
        order=order,
        residuals=tuple(residuals),
        mean_norm=float(row_norms(space, h0)),
        tol=tol,
        declared=declared,
        declared_matches=matches,
    )


@dataclass(frozen=True)
class DecompositionCheck:
    """Deviation between a complete U-statistic and its projection expansion."""

    deviation: float
    lhs_norm: float
    per_order_norms: tuple[float, ...]  # ||binom-scaled U_{k,n}(h_k)||, k = 0..m

    def within(self, rel_tol: float = 1e-10) -> bool:
        return self.deviation <= rel_tol * (1.0 + self.lhs_norm)


def decomposition_check(
    base: KernelSpec, dist: FiniteDistribution, sample: np.ndarray
) -> DecompositionCheck:
    """Verify U_{m,n}(h) = sum_k binom(m,k) [binom(n,m)/binom(n,k)] U_{k,n}(h_k).

    The left side is a direct sum over increasing index tuples; the right
    side evaluates every projection exactly. The sample must be drawn from
    the support of dist (projections are exact only there).
    """
    sample = np.asarray(sample, dtype=np.float64)
    n = sample.shape[0]
    m = base.arity
    if n < m:
        raise ValueError(f"sample of size {n} cannot feed an arity-{m} kernel")
    dim = base.codomain.dim

    lhs = np.zeros(dim)
    for combo in itertools.combinations(range(n), m):
        lhs += _as_row(base.eval_one(*(sample[i] for i in combo)), dim)

    rhs = np.zeros(dim)
    per_order = []
    for k in range(m + 1):
        proj = project(base, dist, k)
        if k == 0:
            u_k = proj.eval()
        else:
            u_k = np.zeros(dim)
            for combo in itertools.combinations(range(n), k):
                u_k += proj.eval(*(sample[i] for i in combo))
        scaled = (math.comb(m, k) * math.comb(n, m) / math.comb(n, k)) * u_k
        per_order.append(float(row_norms(base.codomain, scaled)))
        rhs += scaled

    return DecompositionCheck(
        deviation=float(row_norms(base.codomain, lhs - rhs)),
        lhs_norm=float(row_norms(base.codomain, lhs)),
        per_order_norms=tuple(per_order),
    )
