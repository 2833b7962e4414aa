"""Selection events as quadratic inequalities in the scalar z along Y(z) = a + b z.

Every constraint has the form ``alpha * z**2 + beta * z + gamma <= 0``. Constraints are
kept columnar (:class:`Inequalities`) because a single instance can produce thousands.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Iterator, NamedTuple

import numpy as np

from .exceptions import ConfigError
from .model import LineParam, SelectionOutcome, StatKind


class Tag(enum.IntEnum):
    SE1 = 0
    SE2_ORDER = 1
    SE2_THRESHOLD = 2
    SE3_SIGN = 3
    KSELECT = 4
    DNN_POLYTOPE = 5
    STAT_SIGN = 6


KNNAD_TAGS = frozenset({Tag.SE1, Tag.SE2_ORDER, Tag.SE2_THRESHOLD, Tag.SE3_SIGN, Tag.KSELECT})


class QuadIneq(NamedTuple):
    alpha: float
    beta: float
    gamma: float
    tag: Tag

    def __call__(self, z):
        return (self.alpha * z + self.beta) * z + self.gamma


@dataclass(frozen=True)
class Inequalities:
    alpha: np.ndarray
    beta: np.ndarray
    gamma: np.ndarray
    tags: np.ndarray

    @classmethod
    def empty(cls) -> "Inequalities":
        e = np.zeros(0)
        return cls(e, e, e, np.zeros(0, dtype=np.int8))

    @classmethod
    def of(cls, alpha, beta, gamma, tag: Tag) -> "Inequalities":
        alpha, beta, gamma = np.broadcast_arrays(
            np.atleast_1d(np.asarray(alpha, dtype=float)),
            np.atleast_1d(np.asarray(beta, dtype=float)),
            np.atleast_1d(np.asarray(gamma, dtype=float)),
        )
        if not (np.all(np.isfinite(alpha)) and np.all(np.isfinite(beta)) and np.all(np.isfinite(gamma))):
            raise ValueError("inequality coefficients must be finite")
        tags = np.full(alpha.shape, int(tag), dtype=np.int8)
        return cls(alpha.copy(), beta.copy(), gamma.copy(), tags)

    @classmethod
    def from_list(cls, items) -> "Inequalities":
        items = list(items)
        if not items:
            return cls.empty()
        parts = [cls.of(q.alpha, q.beta, q.gamma, q.tag) for q in items]
        return assemble(*parts, dedup=False)

    def __len__(self) -> int:
        return self.alpha.shape[0]

    def __iter__(self) -> Iterator[QuadIneq]:
        for a, b, c, t in zip(self.alpha, self.beta, self.gamma, self.tags):
            yield QuadIneq(float(a), float(b), float(c), Tag(int(t)))

    def __getitem__(self, i) -> QuadIneq:
        return QuadIneq(float(self.alpha[i]), float(self.beta[i]), float(self.gamma[i]), Tag(int(self.tags[i])))

    def evaluate(self, z) -> np.ndarray:
        """Constraint values at z (rows: constraints; extra trailing axis if z is an array)."""
        z = np.asarray(z, dtype=float)
        if z.ndim == 0:
            return (self.alpha * z + self.beta) * z + self.gamma
        return (self.alpha[:, None] * z + self.beta[:, None]) * z + self.gamma[:, None]

    def select(self, mask) -> "Inequalities":
        return Inequalities(self.alpha[mask], self.beta[mask], self.gamma[mask], self.tags[mask])

    def without(self, tags) -> "Inequalities":
        drop = np.isin(self.tags, [int(t) for t in tags])
        return self.select(~drop)

    def counts(self) -> dict[str, int]:
        return {t.name: int(np.sum(self.tags == int(t))) for t in Tag if np.any(self.tags == int(t))}


@dataclass(frozen=True)
class DistanceQuadratic:
    """D_i(z) = alpha_i z^2 + beta_i z + gamma_i, the squared distance test-to-i along the line."""

    alpha: np.ndarray
    beta: np.ndarray
    gamma: np.ndarray

    def __call__(self, z) -> np.ndarray:
        return (self.alpha * z + self.beta) * z + self.gamma


def quadratics_from_blocks(offsets: np.ndarray, directions: np.ndarray) -> DistanceQuadratic:
    """Distance quadratics from per-instance offsets/directions (row 0 is the test)."""
    da = offsets[0] - offsets[1:]
    db = directions[0] - directions[1:]
    return DistanceQuadratic(
        alpha=np.einsum("ij,ij->i", db, db),
        beta=2.0 * np.einsum("ij,ij->i", da, db),
        gamma=np.einsum("ij,ij->i", da, da),
    )


def distance_quadratics(line: LineParam) -> DistanceQuadratic:
    return quadratics_from_blocks(*line.blocks())


def _pair_differences(dq: DistanceQuadratic, left, right, tag: Tag) -> Inequalities:
    """D_left - D_right <= 0 for matched index arrays."""
    return Inequalities.of(
        dq.alpha[left] - dq.alpha[right],
        dq.beta[left] - dq.beta[right],
        dq.gamma[left] - dq.gamma[right],
        tag,
    )


def se1_events(dq: DistanceQuadratic, outcome: SelectionOutcome) -> Inequalities:
    """Every selected neighbor stays at least as close as every non-neighbor."""
    n = dq.alpha.shape[0]
    inside = np.asarray(outcome.neighbors, dtype=int)
    outside = np.setdiff1d(np.arange(n), inside)
    left = np.repeat(inside, outside.size)
    right = np.tile(outside, inside.size)
    return _pair_differences(dq, left, right, Tag.SE1)


def order_events(dq: DistanceQuadratic, order, k: int, tag: Tag = Tag.SE2_ORDER) -> Inequalities:
    """Pin the observed k-th nearest instance: ranks < k stay closer, ranks > k stay farther."""
    order = np.asarray(order, dtype=int)
    m = order[k - 1]
    before = order[: k - 1]
    after = order[k:]
    return assemble(
        _pair_differences(dq, before, np.full(before.size, m), tag),
        _pair_differences(dq, np.full(after.size, m), after, tag),
        dedup=False,
    )


def threshold_constant(theta: float, k: int, d: int) -> float:
    """Squared-distance threshold equivalent to score >= theta: exp(2 theta) k^(2/d)."""
    return float(np.exp(2.0 * theta + 2.0 * np.log(k) / d))


def se2_events(dq: DistanceQuadratic, outcome: SelectionOutcome, theta: float, d: int) -> Inequalities:
    """The k-th neighbor's identity plus the screening threshold on its distance."""
    order = np.asarray(outcome.order, dtype=int)
    k = outcome.k_star
    m = order[k - 1]
    c = threshold_constant(theta, k, d)
    if not np.isfinite(c):
        raise ConfigError(f"threshold theta={theta} is too large to represent")
    return assemble(
        order_events(dq, order, k),
        Inequalities.of(-dq.alpha[m], -dq.beta[m], c - dq.gamma[m], Tag.SE2_THRESHOLD),
        dedup=False,
    )


def se3_events(line: LineParam, outcome: SelectionOutcome, kind=StatKind.L1) -> Inequalities:
    """Fix sgn(x_test - mean of neighbors) coordinatewise; nothing for the image-mean statistic."""
    if StatKind(kind) is StatKind.IMAGE_MEAN:
        return Inequalities.empty()
    a, b = line.blocks()
    nb = 1 + np.asarray(outcome.neighbors, dtype=int)
    da = a[0] - a[nb].mean(axis=0)
    db = b[0] - b[nb].mean(axis=0)
    s = outcome.signs
    return Inequalities.of(0.0, -s * db, -s * da, Tag.SE3_SIGN)


def kselect_events(dq: DistanceQuadratic, outcome: SelectionOutcome, d: int) -> Inequalities:
    """Data-driven k: k_star's score beats every other candidate's.

    Also pins the identity of each candidate's k_t-th neighbor with ordering
    constraints, which the score comparison relies on.
    """
    order = np.asarray(outcome.order, dtype=int)
    candidates = outcome.candidates
    k_star = outcome.k_star
    n = dq.alpha.shape[0]
    if candidates and max(candidates) > n:
        raise ConfigError(f"candidate k={max(candidates)} exceeds n={n}")
    parts = []
    m_star = order[k_star - 1]
    for k_t in candidates:
        if k_t == k_star:
            continue
        m_t = order[k_t - 1]
        c_t = (k_star / k_t) ** (2.0 / d)
        parts.append(order_events(dq, order, k_t, Tag.KSELECT))
        parts.append(
            Inequalities.of(
                c_t * dq.alpha[m_t] - dq.alpha[m_star],
                c_t * dq.beta[m_t] - dq.beta[m_star],
                c_t * dq.gamma[m_t] - dq.gamma[m_star],
                Tag.KSELECT,
            )
        )
    return assemble(*parts, dedup=False) if parts else Inequalities.empty()


def stat_sign_event() -> Inequalities:
    """z >= 0, used when a sign-indefinite statistic is made one-sided."""
    return Inequalities.of(0.0, -1.0, 0.0, Tag.STAT_SIGN)


def assemble(*parts: Inequalities, dedup: bool = True) -> Inequalities:
    """Concatenate event lists; with ``dedup`` exact duplicate triples keep their first tag."""
    parts = [p for p in parts if len(p)]
    if not parts:
        return Inequalities.empty()
    out = Inequalities(
        np.concatenate([p.alpha for p in parts]),
        np.concatenate([p.beta for p in parts]),
        np.concatenate([p.gamma for p in parts]),
        np.concatenate([p.tags for p in parts]),
    )
    if not dedup:
        return out
    coeffs = np.stack([out.alpha, out.beta, out.gamma], axis=1)
    _, first = np.unique(coeffs, axis=0, return_index=True)
    return out.select(np.sort(first))
