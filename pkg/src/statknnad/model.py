"""Data model: datasets, stacked vectors, the statistic direction and the line parameterization.

All arrays are float64. The stacked vector ``y`` has ``(1 + n) * d`` entries; block 0 is
the test instance and block ``i + 1`` is training instance ``i`` (0-based training indices).
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .exceptions import DataError, DimensionError, NumericalError


class StatKind(str, enum.Enum):
    L1 = "l1"
    IMAGE_MEAN = "image-mean"


@dataclass(frozen=True)
class Dataset:
    """Training features plus the known noise covariance.

    ``mean`` and ``scale`` record the standardization applied at ingestion (if any) so
    that test instances can be mapped into the same coordinates.
    """

    train: np.ndarray
    sigma: np.ndarray
    columns: tuple[str, ...] = ()
    mean: np.ndarray | None = None
    scale: np.ndarray | None = None

    def __post_init__(self):
        train = np.atleast_2d(np.asarray(self.train, dtype=float))
        sigma = np.atleast_2d(np.asarray(self.sigma, dtype=float))
        object.__setattr__(self, "train", train)
        object.__setattr__(self, "sigma", sigma)
        n, d = train.shape
        if n < 2:
            raise DataError(f"need at least 2 training instances, got {n}")
        check_covariance(sigma, d)

    @property
    def n(self) -> int:
        return self.train.shape[0]

    @property
    def d(self) -> int:
        return self.train.shape[1]

    def transform(self, x) -> np.ndarray:
        """Apply the ingestion-time standardization to new instances."""
        x = np.asarray(x, dtype=float)
        if self.mean is None:
            return x
        return (x - self.mean) / self.scale


def check_covariance(sigma: np.ndarray, d: int) -> None:
    if sigma.shape != (d, d):
        raise DimensionError(f"covariance must be {d}x{d}, got {sigma.shape}")
    if not np.all(np.isfinite(sigma)):
        raise DataError("covariance has non-finite entries")
    if np.max(np.abs(sigma - sigma.T)) > 1e-10:
        raise DataError("covariance is not symmetric")
    try:
        np.linalg.cholesky(sigma)
    except np.linalg.LinAlgError:
        raise DataError("covariance is not positive definite") from None


@dataclass(frozen=True)
class ConcatVector:
    data: np.ndarray
    n: int
    d: int

    def __post_init__(self):
        if self.data.shape != ((1 + self.n) * self.d,):
            raise DimensionError("stacked vector length must be (1 + n) * d")

    def blocks(self) -> np.ndarray:
        return self.data.reshape(1 + self.n, self.d)


def concat(test, train) -> ConcatVector:
    test = np.asarray(test, dtype=float).ravel()
    train = np.atleast_2d(np.asarray(train, dtype=float))
    if train.shape[1] != test.shape[0]:
        raise DimensionError(
            f"test has {test.shape[0]} features but training rows have {train.shape[1]}"
        )
    data = np.concatenate([test, train.ravel()])
    return ConcatVector(data, train.shape[0], train.shape[1])


def split(y: ConcatVector) -> tuple[np.ndarray, np.ndarray]:
    blocks = y.blocks()
    return blocks[0].copy(), blocks[1:].copy()


@dataclass(frozen=True)
class SelectionOutcome:
    """What the screening stage selected for one test instance.

    ``order`` is the full observed neighbor ranking (all n training indices); the
    selection events need it to pin down which instance sits at each rank.
    """

    neighbors: tuple[int, ...]
    signs: np.ndarray
    k_star: int
    candidates: tuple[int, ...] = ()
    order: np.ndarray | None = None

    def __post_init__(self):
        if len(self.neighbors) != self.k_star:
            raise DimensionError("number of neighbors must equal k_star")
        signs = np.asarray(self.signs, dtype=float)
        if not np.all(np.abs(signs) == 1.0):
            raise ValueError("signs must be +1 or -1")
        object.__setattr__(self, "signs", signs)

    @property
    def kth_index(self) -> int:
        return self.neighbors[-1]


def observed_signs(test, train, neighbors) -> np.ndarray:
    """sgn(x_test - mean of neighbors) per coordinate; exact zeros map to +1."""
    diff = np.asarray(test, dtype=float) - np.asarray(train)[list(neighbors)].mean(axis=0)
    return np.where(diff < 0, -1.0, 1.0)


@dataclass(frozen=True)
class StatisticDirection:
    eta: np.ndarray
    kind: StatKind
    n: int
    d: int

    def blocks(self) -> np.ndarray:
        return self.eta.reshape(1 + self.n, self.d)


def build_eta(outcome: SelectionOutcome, n: int, d: int, kind=StatKind.L1) -> StatisticDirection:
    kind = StatKind(kind)
    nb = np.asarray(outcome.neighbors, dtype=int)
    if nb.size == 0 or nb.min() < 0 or nb.max() >= n:
        raise IndexError(f"neighbor indices must lie in [0, {n})")
    k = nb.size
    eta = np.zeros((1 + n, d))
    if kind is StatKind.L1:
        if outcome.signs.shape != (d,):
            raise DimensionError("signs must have one entry per feature")
        eta[0] = outcome.signs
        eta[1 + nb] = -outcome.signs / k
    else:
        eta[0] = 1.0 / d
        eta[1 + nb] = -1.0 / (k * d)
    return StatisticDirection(eta.ravel(), kind, n, d)


def apply_block_cov(v: np.ndarray, sigma: np.ndarray, d: int) -> np.ndarray:
    """Multiply by the block-diagonal covariance without forming it."""
    return (v.reshape(-1, d) @ sigma.T).ravel()


@dataclass(frozen=True)
class LineParam:
    """Y(z) = a + b z, with ``z_obs`` the observed statistic and ``var`` its null variance."""

    a: np.ndarray
    b: np.ndarray
    var: float
    z_obs: float
    n: int
    d: int

    def at(self, z) -> np.ndarray:
        """Stacked vector(s) at z; a scalar gives a vector, an array gives one row per z."""
        z = np.asarray(z, dtype=float)
        if z.ndim == 0:
            return self.a + self.b * z
        return self.a[None, :] + z[:, None] * self.b[None, :]

    def blocks(self) -> tuple[np.ndarray, np.ndarray]:
        shape = (1 + self.n, self.d)
        return self.a.reshape(shape), self.b.reshape(shape)

    @property
    def sd(self) -> float:
        return float(np.sqrt(self.var))


def line_params(y: ConcatVector, eta: StatisticDirection, sigma) -> LineParam:
    sigma = np.asarray(sigma, dtype=float)
    s_eta = apply_block_cov(eta.eta, sigma, y.d)
    var = float(eta.eta @ s_eta)
    if not np.isfinite(var) or var <= 0:
        raise NumericalError(f"degenerate statistic variance {var!r}")
    b = s_eta / var
    z_obs = float(eta.eta @ y.data)
    a = y.data - b * z_obs
    return LineParam(a, b, var, z_obs, y.n, y.d)
