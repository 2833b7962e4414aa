"""Selective p-values for screened anomaly candidates, plus the comparison baselines.

The selective p-value is the upper tail of a centered normal with variance
``eta' Sigma~ eta`` restricted to the truncation region Z. Tail masses are evaluated in
log space so that regions far out in the tail (tens of standard deviations) stay
well-defined.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np
from scipy.special import gammaln, log_ndtr, ndtr

from . import events as ev
from .exceptions import NotACandidateError, NumericalError
from .knnad import ScreeningConfig, ScreeningResult, screen
from .model import StatKind, StatisticDirection, build_eta, concat, line_params
from .plnet import PLNetwork, dnn_events, forward_batch, latent_distance_quadratics
from .truncation import IntervalUnion, compute_Z, single_interval


class Method(str, enum.Enum):
    STAT = "stat"
    WOPP = "wopp"
    NAIVE = "naive"
    BONFERRONI = "bonferroni"
    OPA1 = "opa1"
    OPA2 = "opa2"


DEFAULT_METHODS = (Method.STAT, Method.WOPP, Method.NAIVE, Method.BONFERRONI)


@dataclass(frozen=True)
class PValueReport:
    z_obs: float
    sigma2: float
    Z: IntervalUnion
    n_inequalities: dict = field(default_factory=dict)
    p_selective: float | None = None
    p_naive: float | None = None
    p_bonferroni: float | None = None
    p_wopp: float | None = None
    p_opa1: float | None = None
    p_opa2: float | None = None

    def p_values(self) -> dict[str, float]:
        names = {
            Method.STAT: self.p_selective,
            Method.WOPP: self.p_wopp,
            Method.NAIVE: self.p_naive,
            Method.BONFERRONI: self.p_bonferroni,
            Method.OPA1: self.p_opa1,
            Method.OPA2: self.p_opa2,
        }
        return {m.value: p for m, p in names.items() if p is not None}


def _log_sf(x):
    return log_ndtr(-np.asarray(x, dtype=float))


def _log_mass(lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    """log P(lo <= W <= hi) for W ~ N(0, 1), elementwise, accurate in both tails."""
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    out = np.empty(lo.shape)
    upper = lo >= 0
    lower = hi <= 0
    mid = ~(upper | lower)
    with np.errstate(divide="ignore", invalid="ignore"):
        # both endpoints in the right tail: sf(lo) - sf(hi)
        l_lo, l_hi = _log_sf(lo[upper]), _log_sf(hi[upper])
        out[upper] = l_lo + np.log1p(-np.exp(l_hi - l_lo))
        # mirror the left tail onto the right one
        l_lo, l_hi = _log_sf(-hi[lower]), _log_sf(-lo[lower])
        out[lower] = l_lo + np.log1p(-np.exp(l_hi - l_lo))
        # straddling zero: at least one half-width of mass near the center
        out[mid] = np.log1p(-(ndtr(-hi[mid]) + ndtr(lo[mid])))
    return out


def _logsumexp(v: np.ndarray) -> float:
    if v.size == 0:
        return -np.inf
    m = np.max(v)
    if not np.isfinite(m):
        return float(m)
    return float(m + np.log(np.sum(np.exp(v - m))))


def tn_survival(z_obs: float, sigma2: float, Z: IntervalUnion) -> float:
    """P(W >= z_obs | W in Z) for W ~ N(0, sigma2)."""
    if not sigma2 > 0:
        raise NumericalError(f"variance must be positive, got {sigma2}")
    sd = np.sqrt(sigma2)
    lo, hi = Z.bounds()
    lo, hi, z = lo / sd, hi / sd, z_obs / sd
    log_den = _logsumexp(_log_mass(lo, hi))
    if not np.isfinite(log_den):
        raise NumericalError(f"truncation region {Z!r} has zero probability mass")
    keep = hi > z
    log_num = _logsumexp(_log_mass(np.maximum(lo[keep], z), hi[keep]))
    p = np.exp(log_num - log_den)
    return float(min(max(p, 0.0), 1.0))


def naive_p(z_obs: float, sigma2: float) -> float:
    """Two-sided z-test ignoring selection."""
    return float(min(1.0, 2.0 * ndtr(-abs(z_obs) / np.sqrt(sigma2))))


def bonferroni_p(p_naive: float, n: int, k: int) -> float:
    """min(1, C(n, k) p_naive), with the binomial coefficient in log space."""
    if not 1 <= k <= n:
        raise ValueError(f"need 1 <= k <= n, got k={k}, n={n}")
    if p_naive <= 0:
        return 0.0
    log_c = gammaln(n + 1) - gammaln(k + 1) - gammaln(n - k + 1)
    return float(min(1.0, np.exp(log_c + np.log(p_naive))))


def wopp_p(z_obs: float, sigma2: float, Z: IntervalUnion) -> float:
    """Truncated-normal p-value on the single interval of Z holding the observation."""
    return tn_survival(z_obs, sigma2, single_interval(Z, z_obs))


@dataclass(frozen=True)
class Analysis:
    """Everything the pipeline derived for one screened instance."""

    screening: ScreeningResult
    eta: StatisticDirection
    line: object
    inequalities: ev.Inequalities
    report: PValueReport


def selection_inequalities(screening: ScreeningResult, line, theta: float, d_search: int, kind, net=None):
    """All selection constraints for a screened instance along ``line``."""
    outcome = screening.outcome
    kind = StatKind(kind)
    dq = latent_distance_quadratics(net, line) if net is not None else ev.distance_quadratics(line)
    parts = [
        ev.se1_events(dq, outcome),
        ev.se2_events(dq, outcome, theta, d_search),
        ev.se3_events(line, outcome, kind),
    ]
    if outcome.candidates:
        parts.append(ev.kselect_events(dq, outcome, d_search))
    if net is not None:
        parts.append(dnn_events(net, line))
    if kind is StatKind.IMAGE_MEAN:
        parts.append(ev.stat_sign_event())
    return ev.assemble(*parts)


def analyze(
    test,
    train,
    config: ScreeningConfig,
    sigma,
    kind=StatKind.L1,
    net: PLNetwork | None = None,
    methods=DEFAULT_METHODS,
    screening: ScreeningResult | None = None,
) -> Analysis:
    """Screen ``test`` and, if it is a candidate, compute the requested p-values.

    With ``net`` the neighbor search (and the score) runs on latent features while the
    statistic stays in input space. Raises :class:`NotACandidateError` when the screen
    rejects the instance.
    """
    test = np.asarray(test, dtype=float).ravel()
    train = np.atleast_2d(np.asarray(train, dtype=float))
    n, d = train.shape
    kind = StatKind(kind)
    methods = {Method(m) for m in methods}
    if screening is None:
        screening = screen_instance(test, train, config, net)
    if not screening.selected:
        raise NotACandidateError(
            f"anomaly score {screening.score:.4g} is below theta={config.theta:.4g}; not a candidate"
        )
    d_search = net.output_dim if net is not None else d
    eta = build_eta(screening.outcome, n, d, kind)
    y = concat(test, train)
    line = line_params(y, eta, sigma)
    if kind is StatKind.IMAGE_MEAN and line.z_obs < 0:
        eta = StatisticDirection(-eta.eta, eta.kind, n, d)
        line = line_params(y, eta, sigma)

    ineqs = selection_inequalities(screening, line, config.theta, d_search, kind, net)
    Z = compute_Z(ineqs, line.z_obs)
    z, var = line.z_obs, line.var
    p = {}
    if Method.STAT in methods:
        p["p_selective"] = tn_survival(z, var, Z)
    if Method.WOPP in methods:
        p["p_wopp"] = tn_survival(z, var, single_interval(Z, z))
    if Method.NAIVE in methods or Method.BONFERRONI in methods:
        p_naive = naive_p(z, var)
        if Method.NAIVE in methods:
            p["p_naive"] = p_naive
        if Method.BONFERRONI in methods:
            p["p_bonferroni"] = bonferroni_p(p_naive, n, screening.outcome.k_star)
    if Method.OPA1 in methods:
        p["p_opa1"] = tn_survival(z, var, compute_Z(ineqs.without(ev.KNNAD_TAGS), z))
    if Method.OPA2 in methods:
        p["p_opa2"] = tn_survival(z, var, compute_Z(ineqs.without([ev.Tag.DNN_POLYTOPE]), z))
    report = PValueReport(z_obs=z, sigma2=var, Z=Z, n_inequalities=ineqs.counts(), **p)
    return Analysis(screening, eta, line, ineqs, report)


def screen_instance(test, train, config: ScreeningConfig, net: PLNetwork | None = None) -> ScreeningResult:
    if net is None:
        return screen(test, train, config)
    latent, _ = forward_batch(net, np.vstack([np.ravel(test), train]))
    return screen(latent[0], latent[1:], config, stat_test=test, stat_train=train)


def selective_p(test, train, config: ScreeningConfig, sigma, kind=StatKind.L1, net=None, methods=DEFAULT_METHODS) -> PValueReport:
    return analyze(test, train, config, sigma, kind, net, methods).report
