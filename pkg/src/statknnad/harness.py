"""Monte Carlo experiments: type I error and power of every method, plus data ingestion.

Each trial draws its data from its own substream ``default_rng([seed, 0, trial])`` so a
trial's outcome does not depend on execution order. The screening threshold is calibrated
once per configuration on independent calibration draws (streams ``[seed, 1, j]``), which
keeps it fixed with respect to the data being tested.
"""

from __future__ import annotations

import csv
import functools
import logging
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable

import numpy as np

from .exceptions import ConfigError, DataError, InvariantViolation, NumericalError
from .inference import DEFAULT_METHODS, Method, analyze, screen_instance
from .knnad import ScreeningConfig, loo_scores
from .model import Dataset, StatKind
from .plnet import PLNetwork, forward_batch, random_network

log = logging.getLogger(__name__)

TRIAL_STREAM, CALIBRATION_STREAM, NETWORK_STREAM, SPLIT_STREAM = 0, 1, 2, 3


def trial_rng(seed: int, trial: int) -> np.random.Generator:
    return np.random.default_rng([seed, TRIAL_STREAM, trial])


@dataclass(frozen=True)
class SyntheticSpec:
    """One experiment configuration.

    ``trials`` caps the number of draws; with ``target_screened`` the run stops early
    once that many draws passed the screen. ``pipeline`` is ``"input"`` (Gaussian
    features) or ``"latent"`` (textured image patches through a piecewise-linear net).
    """

    n: int = 100
    d: int = 2
    k: int | tuple[int, ...] = 1
    delta: float = 0.0
    trials: int = 1000
    seed: int = 0
    theta_quantile: float = 0.95
    alpha: float = 0.05
    target_screened: int | None = None
    methods: tuple[str, ...] = tuple(m.value for m in DEFAULT_METHODS)
    statistic: str = StatKind.L1.value
    pipeline: str = "input"
    calibration_sets: int = 20

    def __post_init__(self):
        k = tuple(self.k) if isinstance(self.k, (list, tuple)) else int(self.k)
        object.__setattr__(self, "k", k)
        object.__setattr__(self, "methods", tuple(Method(m).value for m in self.methods))
        object.__setattr__(self, "statistic", StatKind(self.statistic).value)
        if self.trials < 1:
            raise ConfigError("trials must be >= 1")
        if self.delta < 0:
            raise ConfigError("delta must be >= 0")
        if not 0 < self.alpha < 1:
            raise ConfigError("alpha must lie in (0, 1)")
        if not 0 <= self.theta_quantile <= 1:
            raise ConfigError("theta_quantile must lie in [0, 1]")
        if self.pipeline not in ("input", "latent"):
            raise ConfigError(f"unknown pipeline {self.pipeline!r}")
        if self.pipeline == "latent" and math.isqrt(self.d) ** 2 != self.d:
            raise ConfigError("the latent (image patch) pipeline needs d to be a perfect square")
        ScreeningConfig(k=k).validate(self.n - 1)

    def screening(self, theta: float) -> ScreeningConfig:
        return ScreeningConfig(k=self.k, theta=theta)

    def echo(self) -> dict:
        out = asdict(self)
        out["k"] = list(self.k) if isinstance(self.k, tuple) else self.k
        out["methods"] = list(self.methods)
        return out


@dataclass(frozen=True)
class MethodRate:
    rejections: int
    screened: int
    rate: float
    ci_halfwidth: float

    @classmethod
    def from_counts(cls, rejections: int, screened: int) -> "MethodRate":
        if screened == 0:
            return cls(rejections, 0, float("nan"), float("nan"))
        rate = rejections / screened
        return cls(rejections, screened, rate, 1.96 * math.sqrt(rate * (1 - rate) / screened))

    @property
    def se(self) -> float:
        return self.ci_halfwidth / 1.96


@dataclass(frozen=True)
class TrialRecord:
    trial: int
    screened: bool
    z_obs: float | None = None
    p_values: dict = field(default_factory=dict)
    error: str | None = None


@dataclass
class ExperimentResult:
    config: dict
    theta: float
    draws: int
    screened: int
    failed: int
    methods: dict[str, MethodRate]
    trials: list[TrialRecord]

    @property
    def undefined(self) -> bool:
        return self.screened == 0

    def rate(self, method: str) -> float:
        return self.methods[method].rate

    def to_json(self) -> dict:
        def num(v):
            return None if v is None or not math.isfinite(v) else v

        return {
            "config": self.config,
            "seed": self.config.get("seed"),
            "theta": self.theta,
            "draws": self.draws,
            "screened": self.screened,
            "failed": self.failed,
            "rates_defined": not self.undefined,
            "methods": {
                m: {
                    "rejections": r.rejections,
                    "screened": r.screened,
                    "rate": num(r.rate),
                    "ci_halfwidth": num(r.ci_halfwidth),
                }
                for m, r in self.methods.items()
            },
        }

    def p_values(self, method: str) -> np.ndarray:
        return np.array([t.p_values[method] for t in self.trials if method in t.p_values])


TRIAL_COLUMNS = ("trial", "screened", "z_obs", "p_selective", "p_naive", "p_bonferroni", "p_wopp")
_COLUMN_METHOD = {"p_selective": "stat", "p_naive": "naive", "p_bonferroni": "bonferroni", "p_wopp": "wopp"}


def write_trials_csv(result: ExperimentResult, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(TRIAL_COLUMNS)
        for t in result.trials:
            row = [t.trial, int(t.screened), "" if t.z_obs is None else repr(t.z_obs)]
            row += [repr(t.p_values[m]) if m in t.p_values else "" for m in map(_COLUMN_METHOD.get, TRIAL_COLUMNS[3:])]
            w.writerow(row)


# -- data generation ---------------------------------------------------------------------


@functools.lru_cache(maxsize=8)
def texture(side: int) -> np.ndarray:
    """Deterministic smooth background shared by every synthetic image (read-only)."""
    u, v = np.meshgrid(np.arange(side), np.arange(side), indexing="ij")
    img = np.sin(u / 2.0) + np.cos(v / 3.0) + 0.5 * np.sin((u + v) / 5.0)
    img.setflags(write=False)
    return img


def patchify(image, patch: int, position: tuple[int, int]) -> np.ndarray:
    """Row-major flattening of the ``patch`` x ``patch`` window whose top-left is ``position``."""
    image = np.asarray(image, dtype=float)
    r, c = position
    if r < 0 or c < 0 or r + patch > image.shape[0] or c + patch > image.shape[1]:
        raise DataError(f"patch of size {patch} at {position} exceeds image of shape {image.shape}")
    return image[r : r + patch, c : c + patch].reshape(-1).copy()


def tile_positions(shape: tuple[int, int], patch: int, stride: int | None = None) -> list[tuple[int, int]]:
    stride = patch if stride is None else stride
    return [
        (r, c)
        for r in range(0, shape[0] - patch + 1, stride)
        for c in range(0, shape[1] - patch + 1, stride)
    ]


def draw_gaussian(spec: SyntheticSpec, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    train = rng.standard_normal((spec.n, spec.d))
    test = rng.standard_normal(spec.d) + spec.delta
    return test, train


def draw_patches(spec: SyntheticSpec, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Same-position patches of noisy copies of one texture; the test patch gets +delta."""
    p = math.isqrt(spec.d)
    side = 3 * p
    images = texture(side) + rng.standard_normal((spec.n + 1, side, side))
    images[0, p : 2 * p, p : 2 * p] += spec.delta
    # patchify at (p, p) for the whole stack at once
    patches = images[:, p : 2 * p, p : 2 * p].reshape(spec.n + 1, -1)
    return patches[0].copy(), patches[1:].copy()


def default_network(spec: SyntheticSpec) -> PLNetwork:
    rng = np.random.default_rng([spec.seed, NETWORK_STREAM])
    return random_network(rng, spec.d, hidden=(16,), output_dim=4, pool=2)


def calibrate_theta(spec: SyntheticSpec, net: PLNetwork | None = None, draw=None) -> float:
    """theta from pooled leave-one-out scores of independent null training sets."""
    draw = draw or (draw_patches if spec.pipeline == "latent" else draw_gaussian)
    null = replace(spec, delta=0.0)
    cfg = spec.screening(0.0)
    scores = []
    for j in range(spec.calibration_sets):
        _, train = draw(null, np.random.default_rng([spec.seed, CALIBRATION_STREAM, j]))
        if net is not None:
            train, _ = forward_batch(net, train)
        scores.append(loo_scores(train, cfg))
    return float(np.quantile(np.concatenate(scores), spec.theta_quantile))


def run_trials(
    spec: SyntheticSpec,
    draw: Callable[[np.random.Generator], tuple[np.ndarray, np.ndarray]],
    theta: float,
    net: PLNetwork | None = None,
    sigma=None,
) -> ExperimentResult:
    """Draw, screen and test; rates are conditional on passing the screen."""
    cfg = spec.screening(theta)
    kind = StatKind(spec.statistic)
    methods = tuple(Method(m) for m in spec.methods)
    records: list[TrialRecord] = []
    screened = failed = 0
    rejections = {m.value: 0 for m in methods}
    draws = 0
    for t in range(spec.trials):
        draws += 1
        test, train = draw(trial_rng(spec.seed, t))
        cov = np.eye(test.shape[0]) if sigma is None else sigma
        scr = screen_instance(test, train, cfg, net)
        if not scr.selected:
            records.append(TrialRecord(t, False))
            continue
        try:
            report = analyze(test, train, cfg, cov, kind, net, methods, screening=scr).report
        except (NumericalError, InvariantViolation) as exc:
            log.warning("trial %d failed: %s", t, exc)
            failed += 1
            records.append(TrialRecord(t, True, error=str(exc)))
            continue
        screened += 1
        pv = report.p_values()
        for m, p in pv.items():
            rejections[m] += int(p <= spec.alpha)
        records.append(TrialRecord(t, True, report.z_obs, pv))
        if spec.target_screened is not None and screened >= spec.target_screened:
            break
    if screened == 0:
        log.warning("no trial passed the screen; rates are undefined")
    return ExperimentResult(
        config=spec.echo(),
        theta=theta,
        draws=draws,
        screened=screened,
        failed=failed,
        methods={m: MethodRate.from_counts(r, screened) for m, r in rejections.items()},
        trials=records,
    )


def run(spec: SyntheticSpec, net: PLNetwork | None = None) -> ExperimentResult:
    if spec.pipeline == "latent":
        net = net if net is not None else default_network(spec)
        if net.input_dim != spec.d:
            raise ConfigError(f"network expects {net.input_dim} inputs but d={spec.d}")
        base = draw_patches
    else:
        base = draw_gaussian
    theta = calibrate_theta(spec, net, base)
    return run_trials(spec, lambda rng: base(spec, rng), theta, net)


def run_null(spec: SyntheticSpec, net: PLNetwork | None = None) -> ExperimentResult:
    return run(replace(spec, delta=0.0), net)


def run_power(spec: SyntheticSpec, net: PLNetwork | None = None) -> ExperimentResult:
    if spec.delta <= 0:
        raise ConfigError("power runs need delta > 0")
    return run(spec, net)


# -- tabular data ------------------------------------------------------------------------


def _parse_float(cell: str, row: int, col: str) -> float:
    try:
        v = float(cell)
    except ValueError:
        raise DataError(f"row {row}, column {col!r}: non-numeric value {cell!r}") from None
    if not math.isfinite(v):
        raise DataError(f"row {row}, column {col!r}: non-finite value {cell!r}")
    return v


def read_numeric_csv(path, feature_columns=None) -> tuple[np.ndarray, tuple[str, ...]]:
    """Numeric matrix from a headed CSV.

    Without ``feature_columns`` every column whose first data cell is numeric is used.
    Rows are numbered from 1 for the header, so the first data row is row 2.
    """
    path = Path(path)
    if not path.is_file():
        raise DataError(f"{path}: no such file")
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise DataError(f"{path}: empty file")
    header, body = [h.strip() for h in rows[0]], [r for r in rows[1:] if r]
    if not body:
        raise DataError(f"{path}: no data rows")
    for i, r in enumerate(body, start=2):
        if len(r) != len(header):
            raise DataError(f"row {i}: expected {len(header)} cells, found {len(r)}")
    if feature_columns is None:
        cols = []
        for j, name in enumerate(header):
            try:
                float(body[0][j])
                cols.append(j)
            except ValueError:
                pass
    else:
        missing = [c for c in feature_columns if c not in header]
        if missing:
            raise DataError(f"{path}: missing columns {missing}")
        cols = [header.index(c) for c in feature_columns]
    if not cols:
        raise DataError(f"{path}: no numeric columns")
    X = np.array([[_parse_float(r[j], i, header[j]) for j in cols] for i, r in enumerate(body, start=2)])
    return X, tuple(header[j] for j in cols)


def ingest_csv(path, feature_columns=None, sigma_path=None, standardize: bool = True) -> Dataset:
    """Load training data, standardize each column (sample mean/std), attach the covariance."""
    X, names = read_numeric_csv(path, feature_columns)
    if X.shape[0] < 2:
        raise DataError("need at least 2 rows")
    mean = scale = None
    if standardize:
        mean = X.mean(axis=0)
        scale = X.std(axis=0, ddof=1)
        flat = [names[j] for j in np.flatnonzero(scale == 0)]
        if flat:
            raise DataError(f"zero-variance columns: {flat}")
        X = (X - mean) / scale
    if sigma_path is None:
        sigma = np.eye(X.shape[1])
    else:
        sigma, _ = read_matrix_csv(sigma_path)
    return Dataset(X, sigma, names, mean, scale)


def read_matrix_csv(path) -> tuple[np.ndarray, None]:
    """Headerless numeric matrix (used for covariance files)."""
    path = Path(path)
    if not path.is_file():
        raise DataError(f"{path}: no such file")
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r]
    M = np.array([[_parse_float(c, i, str(j)) for j, c in enumerate(r)] for i, r in enumerate(rows, start=1)])
    return M, None


def export_csv(path, X, columns) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(columns)
        for row in np.asarray(X, dtype=float):
            w.writerow([repr(float(v)) for v in row])


def run_tabular(dataset: Dataset, spec: SyntheticSpec, calibration_fraction: float = 0.2) -> ExperimentResult:
    """Hold-out protocol on real rows.

    Rows are shuffled once and split into a calibration part (for theta) and a pool.
    Each trial takes one pool row as the test instance (shifted by ``delta``) and ``n``
    other pool rows as training data.
    """
    X = dataset.train
    perm = np.random.default_rng([spec.seed, SPLIT_STREAM]).permutation(X.shape[0])
    n_cal = max(spec.n, int(round(calibration_fraction * X.shape[0])))
    cal, pool = X[perm[:n_cal]], X[perm[n_cal:]]
    if pool.shape[0] < spec.n + 1:
        raise DataError(f"need at least {spec.n + 1 + n_cal} rows, dataset has {X.shape[0]}")
    spec = replace(spec, d=X.shape[1], pipeline="input")
    cfg = spec.screening(0.0)
    chunks = [cal[i : i + spec.n] for i in range(0, n_cal - spec.n + 1, spec.n)]
    theta = float(np.quantile(np.concatenate([loo_scores(c, cfg) for c in chunks]), spec.theta_quantile))

    def draw(rng):
        idx = rng.choice(pool.shape[0], size=spec.n + 1, replace=False)
        return pool[idx[0]] + spec.delta, pool[idx[1:]]

    return run_trials(spec, draw, theta, sigma=dataset.sigma)
