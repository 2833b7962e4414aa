"""Truncation region: the set of z satisfying every selection inequality.

The region is a finite union of closed intervals (endpoints may be infinite). It is
computed in closed form: each inequality forbids at most two open intervals, and the
region is the complement of the union of everything forbidden.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .events import Inequalities, QuadIneq
from .exceptions import InvariantViolation

TOL = 1e-9

_INF = np.inf


@dataclass(frozen=True)
class IntervalUnion:
    """Sorted, disjoint intervals ``(lo, hi)`` with ``lo < hi``; closed where finite."""

    intervals: tuple[tuple[float, float], ...] = ()

    @classmethod
    def full(cls) -> "IntervalUnion":
        return cls(((-_INF, _INF),))

    @classmethod
    def from_pairs(cls, pairs: Iterable, tol: float = TOL) -> "IntervalUnion":
        return cls(_normalize(pairs, tol))

    def __len__(self) -> int:
        return len(self.intervals)

    def __iter__(self):
        return iter(self.intervals)

    @property
    def is_empty(self) -> bool:
        return not self.intervals

    def contains(self, z, tol: float = 0.0):
        """Membership; vectorized over ``z``."""
        z = np.asarray(z, dtype=float)
        out = np.zeros(z.shape, dtype=bool)
        for lo, hi in self.intervals:
            out |= (z >= lo - tol) & (z <= hi + tol)
        return bool(out) if out.ndim == 0 else out

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        if not self.intervals:
            return np.zeros(0), np.zeros(0)
        arr = np.asarray(self.intervals, dtype=float)
        return arr[:, 0], arr[:, 1]

    def intersect(self, other: "IntervalUnion") -> "IntervalUnion":
        return intersect_all([self, other])

    def endpoints(self) -> np.ndarray:
        lo, hi = self.bounds()
        pts = np.concatenate([lo, hi])
        return np.sort(pts[np.isfinite(pts)])

    def scaled(self, c: float) -> "IntervalUnion":
        if c <= 0:
            raise ValueError("scale must be positive")
        return IntervalUnion(tuple((lo * c, hi * c) for lo, hi in self.intervals))

    def to_list(self) -> list[list[float | None]]:
        """JSON-friendly form; infinite endpoints become None."""
        conv = lambda v: None if not np.isfinite(v) else float(v)  # noqa: E731
        return [[conv(lo), conv(hi)] for lo, hi in self.intervals]

    def __repr__(self):
        body = " U ".join(f"[{lo:.6g}, {hi:.6g}]" for lo, hi in self.intervals) or "{}"
        return f"IntervalUnion({body})"


def _normalize(pairs, tol: float) -> tuple[tuple[float, float], ...]:
    """Sort, drop empty pieces, and merge pieces whose gap is below ``tol``."""
    arr = np.asarray(list(pairs), dtype=float).reshape(-1, 2)
    arr = arr[arr[:, 0] < arr[:, 1]]
    if arr.shape[0] == 0:
        return ()
    arr = arr[np.argsort(arr[:, 0], kind="stable")]
    merged = [list(arr[0])]
    for lo, hi in arr[1:]:
        if lo <= merged[-1][1] + tol:
            merged[-1][1] = max(merged[-1][1], hi)
        else:
            merged.append([lo, hi])
    return tuple((float(lo), float(hi)) for lo, hi in merged)


def quad_roots(alpha, beta, gamma):
    """Real roots (r1 <= r2) of alpha z^2 + beta z + gamma, avoiding cancellation.

    Vectorized; entries with a negative discriminant give NaN. ``alpha`` must be nonzero.
    """
    alpha, beta, gamma = (np.asarray(v, dtype=float) for v in (alpha, beta, gamma))
    disc = beta * beta - 4.0 * alpha * gamma
    sq = np.sqrt(np.where(disc >= 0, disc, np.nan))
    q = -0.5 * (beta + np.where(beta >= 0, 1.0, -1.0) * sq)
    with np.errstate(divide="ignore", invalid="ignore"):
        r1 = q / alpha
        r2 = np.where(q != 0, gamma / q, r1)
    return np.minimum(r1, r2), np.maximum(r1, r2)


def solve_quad(q: QuadIneq, tol: float = TOL) -> IntervalUnion:
    """Solution set of alpha z^2 + beta z + gamma <= 0."""
    alpha, beta, gamma = float(q.alpha), float(q.beta), float(q.gamma)
    if abs(alpha) <= tol:
        if abs(beta) <= tol:
            return IntervalUnion.full() if gamma <= tol else IntervalUnion()
        root = -gamma / beta
        return IntervalUnion(((-_INF, root),)) if beta > 0 else IntervalUnion(((root, _INF),))
    r1, r2 = (float(v) for v in quad_roots(alpha, beta, gamma))
    if alpha > 0:
        if np.isnan(r1):
            return IntervalUnion()
        return IntervalUnion.from_pairs([(r1, r2)], tol=0.0) if r1 < r2 else IntervalUnion()
    if np.isnan(r1):
        return IntervalUnion.full()
    return IntervalUnion.from_pairs([(-_INF, r1), (r2, _INF)], tol=0.0)


def intersect_all(unions: Iterable[IntervalUnion], tol: float = TOL) -> IntervalUnion:
    """Sweep over all endpoints, keeping points covered by every union."""
    unions = list(unions)
    if not unions:
        return IntervalUnion.full()
    if any(u.is_empty for u in unions):
        return IntervalUnion()
    events = []
    for u in unions:
        for lo, hi in u.intervals:
            events.append((lo, 0, +1))  # starts sort before ends at equal coordinates
            events.append((hi, 1, -1))
    events.sort()
    need = len(unions)
    depth = 0
    out = []
    start = None
    for x, _, step in events:
        depth += step
        if step > 0 and depth == need:
            start = x
        elif step < 0 and depth == need - 1 and start is not None:
            out.append((start, x))
            start = None
    return IntervalUnion.from_pairs(out, tol)


def region(ineqs: Inequalities, tol: float = TOL) -> IntervalUnion:
    """Closed-form intersection of all solution sets (no observed point required)."""
    a, b, c = ineqs.alpha, ineqs.beta, ineqs.gamma
    lo_bound, hi_bound = -_INF, _INF
    holes = []

    const = (np.abs(a) <= tol) & (np.abs(b) <= tol)
    if np.any(const & (c > tol)):
        return IntervalUnion()

    lin = (np.abs(a) <= tol) & ~const
    if np.any(lin):
        roots = -c[lin] / b[lin]
        up = b[lin] > 0  # beta z + gamma <= 0  ->  z <= root
        if np.any(up):
            hi_bound = min(hi_bound, float(np.min(roots[up])))
        if np.any(~up):
            lo_bound = max(lo_bound, float(np.max(roots[~up])))

    quad = np.abs(a) > tol
    if np.any(quad):
        r1, r2 = quad_roots(a[quad], b[quad], c[quad])
        pos = a[quad] > 0
        real = ~np.isnan(r1)
        if np.any(pos & ~real):
            return IntervalUnion()
        cup = pos & real  # allowed [r1, r2]
        if np.any(cup):
            lo_bound = max(lo_bound, float(np.max(r1[cup])))
            hi_bound = min(hi_bound, float(np.min(r2[cup])))
        cap = ~pos & real  # forbidden (r1, r2)
        if np.any(cap):
            holes = np.stack([r1[cap], r2[cap]], axis=1)

    if not lo_bound <= hi_bound:
        return IntervalUnion()
    if len(holes) == 0:
        return IntervalUnion.from_pairs([(lo_bound, hi_bound)], tol)

    holes = holes[(holes[:, 1] > lo_bound) & (holes[:, 0] < hi_bound)]
    holes = holes[np.argsort(holes[:, 0], kind="stable")]
    pieces = []
    cursor = lo_bound
    for h_lo, h_hi in holes:
        if h_lo > cursor:
            pieces.append((cursor, h_lo))
        cursor = max(cursor, h_hi)
        if cursor >= hi_bound:
            break
    if cursor < hi_bound:
        pieces.append((cursor, hi_bound))
    return IntervalUnion.from_pairs(pieces, tol)


def compute_Z(ineqs: Inequalities, z_obs: float, tol: float = TOL) -> IntervalUnion:
    """Truncation region; raises if the observed statistic falls outside it."""
    Z = region(ineqs, tol)
    slack = tol * max(1.0, abs(z_obs))
    if not Z.contains(z_obs, slack):
        worst = float(np.max(ineqs.evaluate(z_obs))) if len(ineqs) else float("nan")
        raise InvariantViolation(
            f"observed statistic {z_obs:.6g} lies outside its truncation region {Z!r} "
            f"(max constraint value {worst:.3g})"
        )
    return Z


def single_interval(Z: IntervalUnion, z_obs: float, tol: float = TOL) -> IntervalUnion:
    """The maximal interval of Z that contains the observed statistic."""
    slack = tol * max(1.0, abs(z_obs))
    for lo, hi in Z.intervals:
        if lo - slack <= z_obs <= hi + slack:
            return IntervalUnion(((lo, hi),))
    raise InvariantViolation(f"{z_obs:.6g} is not in {Z!r}")
