"""Empirical checks of maximal inequalities for martingale difference arrays.

Each check estimates both sides of a deviation bound on simulated paths and
flags a violation only when the 95% lower confidence bound of the left side
exceeds the 95% upper bound of the right side, so Monte Carlo noise cannot
manufacture failures. The bounds under test, for increments D_j with
partial sums S_k:

  real case:      P(max_k |S_k| > x) <= 2 exp(-x^2/y^2)
                      + P(sum_j (D_j^2 + E[D_j^2 | F_{j-1}]) > y^2/2)

  variant A2:     P(max_k ||S_k|| > x) <= 4 exp(-x^2/y^2)
                      + 2 P(sum_j (||D_j||^2 + E[||D_j||^2 | F_{j-1}]) > y^2/8)

  variant A3:     P(max_k ||S_k|| > x) <= 4 exp(-x^2/y^2)
                      + 4 * integral_1^inf u * P(sqrt(sum_j ||D_j||^2) > y u / 8) du,
                  requiring E[||D_j||^2 | F_{j-1}] = E[||D_j||^2 | F_0];

  convex tail:    X convex-dominated by Y implies
                  P(X > t) <= integral_1^inf P(Y > t v / 4) dv
                            = E[ max(0, 4 Y / t - 1) ].

Tail integrals over empirical step functions are computed exactly,
piecewise, rather than by sampled quadrature.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .confidence import mean_interval, wilson_interval
from .distributions import mix_ids, substream
from .hilbert import HilbertSpace, row_norms

__all__ = [
    "MartingalePath",
    "InequalityEntry",
    "InequalityCheckReport",
    "simulate_mds",
    "simulate_ensemble",
    "check_real_inequality",
    "check_hilbert_inequality",
    "check_conv_tail_lemma",
    "conv_pair_from_paths",
    "verify_pairs",
    "verify_grid",
    "verify_conv_grid",
]

GENERATORS = ("bounded-signs", "gaussian-coords", "f0-randomized-scale")


@dataclass(frozen=True, eq=False)
class MartingalePath:
    """One simulated difference array with its conditional second moments."""

    increments: np.ndarray  # (steps, dim)
    cond_second_moments: np.ndarray  # (steps,), E[||D_j||^2 | F_{j-1}]
    f0_measurable: bool  # moments known at time zero
    space: HilbertSpace

    def __post_init__(self) -> None:
        inc = np.asarray(self.increments, dtype=np.float64)
        if inc.ndim == 1:
            inc = inc[:, None]
        if inc.ndim != 2 or inc.shape[1] != self.space.dim:
            raise ValueError(f"increments must have shape (steps, {self.space.dim})")
        moments = np.asarray(self.cond_second_moments, dtype=np.float64)
        if moments.shape != (inc.shape[0],):
            raise ValueError("need one conditional second moment per step")
        object.__setattr__(self, "increments", inc)
        object.__setattr__(self, "cond_second_moments", moments)


def simulate_mds(kind: str, steps: int, space: HilbertSpace, rng: np.random.Generator) -> MartingalePath:
    """One martingale difference path.

    bounded-signs: scalar increments +-1, conditional second moment 1.
    gaussian-coords: i.i.d. standard normal coordinates.
    f0-randomized-scale: gaussian coordinates times a scale drawn once at
        time zero (uniform on [0.5, 1.5]), so the conditional second
        moments are random but F_0-measurable.
    """
    if steps < 1:
        raise ValueError("steps must be positive")
    if kind == "bounded-signs":
        if space.dim != 1:
            raise ValueError("bounded-signs paths are real-valued; use a dim-1 space")
        inc = rng.integers(0, 2, size=steps).astype(np.float64) * 2.0 - 1.0
        return MartingalePath(inc[:, None], np.ones(steps), True, space)
    base_moment = float(np.add.reduce(space.weights))
    if kind == "gaussian-coords":
        inc = rng.standard_normal((steps, space.dim))
        return MartingalePath(inc, np.full(steps, base_moment), True, space)
    if kind == "f0-randomized-scale":
        scale = float(rng.uniform(0.5, 1.5))
        inc = scale * rng.standard_normal((steps, space.dim))
        return MartingalePath(inc, np.full(steps, scale * scale * base_moment), True, space)
    raise ValueError(f"unknown generator {kind!r}; choose from {GENERATORS}")


def simulate_ensemble(
    kind: str,
    steps: int,
    space: HilbertSpace,
    master_seed: int,
    count: int,
    base_stream: int = 0,
) -> list[MartingalePath]:
    """count independent paths, one counter-based substream per path."""
    return [
        simulate_mds(kind, steps, space, substream(master_seed, mix_ids(base_stream, r)))
        for r in range(count)
    ]


@dataclass(frozen=True)
class _Summaries:
    max_partial_norm: np.ndarray  # (R,)
    quad_plus_cond: np.ndarray  # (R,), sum(||D||^2 + E[||D||^2 | F])
    sqrt_quad: np.ndarray  # (R,), sqrt(sum ||D||^2)
    real_valued: bool
    f0_all: bool


def _summarize(paths: list[MartingalePath]) -> _Summaries:
    if not paths:
        raise ValueError("need at least one path")
    space = paths[0].space
    if any(p.space != space for p in paths):
        raise ValueError("paths live in different spaces")
    max_norm = np.empty(len(paths))
    quad_plus = np.empty(len(paths))
    sqrt_quad = np.empty(len(paths))
    for i, p in enumerate(paths):
        norms2 = row_norms(space, p.increments) ** 2
        partial = np.cumsum(p.increments, axis=0)
        max_norm[i] = row_norms(space, partial).max()
        quad_plus[i] = norms2.sum() + p.cond_second_moments.sum()
        sqrt_quad[i] = np.sqrt(norms2.sum())
    return _Summaries(
        max_partial_norm=max_norm,
        quad_plus_cond=quad_plus,
        sqrt_quad=sqrt_quad,
        real_valued=(space.dim == 1),
        f0_all=all(p.f0_measurable for p in paths),
    )


@dataclass(frozen=True)
class InequalityEntry:
    """Both sides of one grid cell with 95% bands."""

    x: float
    y: float
    lhs: float
    lhs_lo: float
    lhs_hi: float
    rhs: float
    rhs_lo: float
    rhs_hi: float
    violated: bool


@dataclass(frozen=True)
class InequalityCheckReport:
    variant: str
    replicas: int
    entries: tuple[InequalityEntry, ...]
    violations: int


def _entry(x, y, lhs_triple, rhs_triple) -> InequalityEntry:
    lhs, lhs_lo, lhs_hi = lhs_triple
    rhs, rhs_lo, rhs_hi = rhs_triple
    return InequalityEntry(
        x=float(x),
        y=float(y),
        lhs=lhs,
        lhs_lo=lhs_lo,
        lhs_hi=lhs_hi,
        rhs=rhs,
        rhs_lo=rhs_lo,
        rhs_hi=rhs_hi,
        violated=bool(lhs_lo > rhs_hi),
    )


def _tail_triple(values: np.ndarray, threshold: float) -> tuple[float, float, float]:
    count = int(np.count_nonzero(values > threshold))
    lo, hi = wilson_interval(count, values.size)
    return count / values.size, lo, hi


def _step_tail_integral(
    samples: np.ndarray, scale: float, u_max: float, weight_counts: bool = False
) -> tuple[float, float, float]:
    """Exact (integral, lower, upper) of int_1^{u_max} u * P(sample > scale*u) du.

    The empirical tail is a step function of u with breakpoints at
    sample/scale; each constant piece integrates to p * (b^2 - a^2)/2.
    Lower/upper use Wilson bands of the per-piece counts.
    """
    R = samples.size
    points = np.unique(np.clip(np.asarray(samples, dtype=np.float64) / scale, 1.0, u_max))
    edges = np.concatenate([[1.0], points[(points > 1.0) & (points < u_max)], [u_max]])
    sorted_samples = np.sort(samples)
    total = lo_total = hi_total = 0.0
    for a, b in zip(edges[:-1], edges[1:]):
        if b <= a:
            continue
        count = R - int(np.searchsorted(sorted_samples, scale * a, side="right"))
        piece = (b * b - a * a) / 2.0
        w_lo, w_hi = wilson_interval(count, R)
        total += (count / R) * piece
        lo_total += w_lo * piece
        hi_total += w_hi * piece
    return total, lo_total, hi_total


def check_real_inequality(paths: list[MartingalePath], x: float, y: float) -> InequalityEntry:
    """Real-valued maximal inequality at one (x, y)."""
    s = _summarize(paths)
    if not s.real_valued:
        raise ValueError("real-case check needs real-valued paths (dim-1 space)")
    return _real_entry(s, x, y)


def _real_entry(s: _Summaries, x: float, y: float) -> InequalityEntry:
    lhs = _tail_triple(s.max_partial_norm, x)
    exp_term = 2.0 * np.exp(-(x * x) / (y * y))
    tail, tail_lo, tail_hi = _tail_triple(s.quad_plus_cond, y * y / 2.0)
    rhs = (exp_term + tail, exp_term + tail_lo, exp_term + tail_hi)
    return _entry(x, y, lhs, rhs)


def check_hilbert_inequality(
    paths: list[MartingalePath], x: float, y: float, variant: str = "A2"
) -> InequalityEntry:
    """Coordinate-space maximal inequality at one (x, y), variant A2 or A3."""
    s = _summarize(paths)
    if variant == "A2":
        return _hilbert_a2_entry(s, x, y)
    if variant == "A3":
        if not s.f0_all:
            raise ValueError(
                "variant A3 requires conditional second moments measurable at time zero"
            )
        return _hilbert_a3_entry(s, x, y)
    raise ValueError(f"unknown variant {variant!r}; choose A2 or A3")


def _hilbert_a2_entry(s: _Summaries, x: float, y: float) -> InequalityEntry:
    lhs = _tail_triple(s.max_partial_norm, x)
    exp_term = 4.0 * np.exp(-(x * x) / (y * y))
    tail, tail_lo, tail_hi = _tail_triple(s.quad_plus_cond, y * y / 8.0)
    rhs = (exp_term + 2.0 * tail, exp_term + 2.0 * tail_lo, exp_term + 2.0 * tail_hi)
    return _entry(x, y, lhs, rhs)


def _hilbert_a3_entry(s: _Summaries, x: float, y: float) -> InequalityEntry:
    lhs = _tail_triple(s.max_partial_norm, x)
    exp_term = 4.0 * np.exp(-(x * x) / (y * y))
    scale = y / 8.0
    # the integrand dies at u = 8*max/y; doubling that caps the Wilson band
    u_max = max(2.0, 2.0 * float(s.sqrt_quad.max()) / scale)
    integral, integral_lo, integral_hi = _step_tail_integral(s.sqrt_quad, scale, u_max)
    rhs = (
        exp_term + 4.0 * integral,
        exp_term + 4.0 * integral_lo,
        exp_term + 4.0 * integral_hi,
    )
    return _entry(x, y, lhs, rhs)


def conv_pair_from_paths(paths: list[MartingalePath]) -> tuple[np.ndarray, np.ndarray]:
    """The convex-domination pair: X = sum(||D||^2 + cond), Y = 2 sum ||D||^2."""
    s = _summarize(paths)
    return s.quad_plus_cond, 2.0 * s.sqrt_quad**2


def check_conv_tail_lemma(
    x_samples: np.ndarray, y_samples: np.ndarray, t: float
) -> InequalityEntry:
    """Convex-order tail transfer at one threshold t.

    The right side integral has the closed form E[max(0, 4Y/t - 1)], so it
    is estimated as a plain mean with a normal-approximation band.
    """
    if t <= 0:
        raise ValueError("t must be positive")
    x_samples = np.asarray(x_samples, dtype=np.float64)
    y_samples = np.asarray(y_samples, dtype=np.float64)
    lhs = _tail_triple(x_samples, t)
    vals = np.maximum(0.0, 4.0 * y_samples / t - 1.0)
    mean, lo, hi = mean_interval(vals)
    return _entry(t, float("nan"), lhs, (mean, max(0.0, lo), hi))


def verify_pairs(
    paths: list[MartingalePath],
    pairs: Sequence[tuple[float, float]],
    variant: str,
) -> InequalityCheckReport:
    """Evaluate one inequality variant at explicit (x, y) pairs.

    The ensemble is summarized once and shared across all pairs.
    """
    s = _summarize(paths)
    if variant == "real" and not s.real_valued:
        raise ValueError("real-case check needs real-valued paths (dim-1 space)")
    if variant == "A3" and not s.f0_all:
        raise ValueError("variant A3 requires conditional second moments measurable at time zero")
    entry_fn = {"real": _real_entry, "A2": _hilbert_a2_entry, "A3": _hilbert_a3_entry}.get(variant)
    if entry_fn is None:
        raise ValueError(f"unknown variant {variant!r}; choose real, A2, A3 or conv")
    entries = [entry_fn(s, float(x), float(y)) for x, y in pairs]
    return InequalityCheckReport(
        variant=variant,
        replicas=len(paths),
        entries=tuple(entries),
        violations=sum(e.violated for e in entries),
    )


def verify_grid(
    paths: list[MartingalePath],
    xs: np.ndarray,
    ys: np.ndarray,
    variant: str,
) -> InequalityCheckReport:
    """Evaluate one inequality variant over the full (x, y) grid."""
    return verify_pairs(paths, [(float(x), float(y)) for x in xs for y in ys], variant)


def verify_conv_grid(paths: list[MartingalePath], t_grid: np.ndarray) -> InequalityCheckReport:
    """Convex-order tail lemma on its canonical pair over a t grid."""
    x_samples, y_samples = conv_pair_from_paths(paths)
    entries = [check_conv_tail_lemma(x_samples, y_samples, float(t)) for t in t_grid]
    return InequalityCheckReport(
        variant="conv",
        replicas=len(paths),
        entries=tuple(entries),
        violations=sum(e.violated for e in entries),
    )
