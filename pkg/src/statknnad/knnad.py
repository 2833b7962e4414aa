"""k-NN anomaly screening: neighbor ranking, the log-distance score and data-driven k."""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .exceptions import ConfigError, DataError
from .model import SelectionOutcome, observed_signs


class Metric(str, enum.Enum):
    SQUARED_L2 = "squared-l2"


@dataclass(frozen=True)
class ScreeningConfig:
    """``k`` is either a fixed neighbor count or a strictly increasing tuple of candidates."""

    k: int | tuple[int, ...] = 1
    theta: float = 0.0
    metric: Metric = Metric.SQUARED_L2

    def __post_init__(self):
        k = self.k
        if isinstance(k, (list, tuple, np.ndarray)):
            k = tuple(int(v) for v in k)
            if len(k) == 0:
                raise ConfigError("candidate list is empty")
            if any(b <= a for a, b in zip(k, k[1:])):
                raise ConfigError(f"k candidates must be strictly increasing, got {k}")
            if len(k) == 1:
                k = k[0]
        else:
            k = int(k)
        object.__setattr__(self, "k", k)
        if min(self.candidates) < 1:
            raise ConfigError("k must be positive")
        object.__setattr__(self, "metric", Metric(self.metric))

    @property
    def adaptive(self) -> bool:
        return isinstance(self.k, tuple)

    @property
    def candidates(self) -> tuple[int, ...]:
        return self.k if isinstance(self.k, tuple) else (self.k,)

    def validate(self, n: int) -> None:
        if max(self.candidates) > n:
            raise ConfigError(f"k={max(self.candidates)} exceeds the {n} training instances")


@dataclass(frozen=True)
class ScreeningResult:
    outcome: SelectionOutcome
    score: float
    selected: bool
    distances: np.ndarray  # squared distances, ascending
    order: np.ndarray  # training indices matching ``distances``
    candidate_scores: tuple[float, ...] = ()


def rank_neighbors(test, train, metric=Metric.SQUARED_L2) -> tuple[np.ndarray, np.ndarray]:
    """Squared distances in ascending order and the matching training indices.

    Ties keep ascending training index (stable sort).
    """
    Metric(metric)
    diff = np.asarray(train, dtype=float) - np.asarray(test, dtype=float)
    dist = np.einsum("ij,ij->i", diff, diff)
    order = np.argsort(dist, kind="stable")
    return dist[order], order


def anomaly_score(dist_k, k, d):
    """log(dist_k) - log(k)/d, with ``dist_k`` the metric (not squared) distance.

    Works elementwise on arrays; a zero distance scores -inf.
    """
    dist_k = np.asarray(dist_k, dtype=float)
    with np.errstate(divide="ignore"):
        score = np.log(dist_k) - np.log(k) / d
    return float(score) if score.ndim == 0 else score


def _scores_from_sorted(sq_sorted: np.ndarray, candidates, d: int) -> np.ndarray:
    ks = np.asarray(candidates)
    return anomaly_score(np.sqrt(sq_sorted[..., ks - 1]), ks, d)


def screen(test, train, config: ScreeningConfig, stat_test=None, stat_train=None) -> ScreeningResult:
    """Rank neighbors, pick k (fixed or score-maximizing) and compare the score to theta.

    Signs of the L1 statistic are taken from ``stat_test``/``stat_train`` when given
    (latent-space search with an input-space statistic), otherwise from the inputs.
    """
    train = np.atleast_2d(np.asarray(train, dtype=float))
    test = np.asarray(test, dtype=float).ravel()
    n, d = train.shape
    config.validate(n)
    sq, order = rank_neighbors(test, train, config.metric)
    scores = np.atleast_1d(_scores_from_sorted(sq, config.candidates, d))
    best = int(np.argmax(scores))  # first maximum -> smallest k on ties
    k_star = config.candidates[best]
    score = float(scores[best])
    neighbors = tuple(int(i) for i in order[:k_star])
    if stat_test is None:
        signs = observed_signs(test, train, neighbors)
    else:
        signs = observed_signs(stat_test, stat_train, neighbors)
    outcome = SelectionOutcome(
        neighbors=neighbors,
        signs=signs,
        k_star=k_star,
        candidates=config.candidates if config.adaptive else (),
        order=order,
    )
    return ScreeningResult(
        outcome=outcome,
        score=score,
        selected=bool(score >= config.theta),
        distances=sq,
        order=order,
        candidate_scores=tuple(float(s) for s in scores),
    )


def loo_scores(train, config: ScreeningConfig) -> np.ndarray:
    """Leave-one-out anomaly score of every training row against the other n - 1."""
    train = np.atleast_2d(np.asarray(train, dtype=float))
    n, d = train.shape
    if max(config.candidates) > n - 1:
        raise ConfigError("leave-one-out needs every k candidate <= n - 1")
    sqn = np.einsum("ij,ij->i", train, train)
    sq = sqn[:, None] + sqn[None, :] - 2.0 * train @ train.T
    np.maximum(sq, 0.0, out=sq)
    np.fill_diagonal(sq, np.inf)
    kmax = max(config.candidates)
    part = np.sort(np.partition(sq, kmax - 1, axis=1)[:, :kmax], axis=1)
    return _scores_from_sorted(part, config.candidates, d).max(axis=1)


def choose_theta(train, config: ScreeningConfig, quantile: float = 0.95) -> float:
    """Empirical quantile of the leave-one-out scores of normal training data."""
    if not 0.0 <= quantile <= 1.0:
        raise ConfigError("quantile must lie in [0, 1]")
    train = np.atleast_2d(np.asarray(train, dtype=float))
    if train.shape[0] < 2:
        raise DataError("need at least 2 training rows")
    if np.all(train == train[0]):
        raise DataError("all training rows are identical; scores are degenerate")
    scores = loo_scores(train, config)
    finite = scores[np.isfinite(scores)]
    if finite.size == 0:
        raise DataError("every leave-one-out score is -inf (duplicated rows)")
    with np.errstate(invalid="ignore"):
        theta = np.quantile(scores, quantile)
    if not np.isfinite(theta):
        # linear interpolation against a -inf score; use the order statistic instead
        theta = np.quantile(scores, quantile, method="lower")
    return float(theta)
