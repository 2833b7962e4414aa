import mpmath
import numpy as np
import pytest
from scipy import stats

from statknnad import ScreeningConfig, analyze, selective_p
from statknnad.exceptions import NotACandidateError, NumericalError
from statknnad.inference import Method, bonferroni_p, naive_p, tn_survival, wopp_p
from statknnad.model import StatKind
from statknnad.plnet import random_network
from statknnad.truncation import IntervalUnion

from conftest import screened_instance
from oracles import mc_survival

INF = np.inf
mpmath.mp.dps = 50


def exact_survival(z, sigma2, intervals):
    """High-precision reference for P(W >= z | W in Z)."""
    sd = mpmath.sqrt(sigma2)

    def mass(lo, hi):
        lo = -mpmath.inf if lo == -INF else mpmath.mpf(lo) / sd
        hi = mpmath.inf if hi == INF else mpmath.mpf(hi) / sd
        if lo >= 0:  # right tail: difference of survival functions avoids cancellation
            return mpmath.ncdf(-lo) - mpmath.ncdf(-hi)
        return mpmath.ncdf(hi) - mpmath.ncdf(lo)

    den = sum(mass(lo, hi) for lo, hi in intervals)
    num = sum(mass(max(lo, z), hi) for lo, hi in intervals if hi > z)
    return float(num / den)


def test_symmetric_full_line():
    assert tn_survival(0.0, 1.0, IntervalUnion.full()) == pytest.approx(0.5)


def test_all_mass_above():
    assert tn_survival(1.3, 2.0, IntervalUnion(((1.3, INF),))) == pytest.approx(1.0)


@pytest.mark.parametrize("z,sigma2", [(0.7, 1.0), (-1.2, 3.0), (2.5, 0.5)])
def test_untruncated_is_the_upper_tail(z, sigma2):
    assert tn_survival(z, sigma2, IntervalUnion.full()) == pytest.approx(stats.norm.sf(z / np.sqrt(sigma2)))


@pytest.mark.parametrize(
    "z,sigma2,intervals",
    [
        (2.5, 1.0, [(-1, 1), (2, 3)]),
        (40.5, 1.0, [(40, 41)]),
        (-40.5, 1.0, [(-41, -40)]),
        (38.0, 1.0, [(-INF, -2.0), (37.5, INF)]),
        (9.0, 4.0, [(-3, 1), (8.0, 8.5), (8.9, 12.0)]),
        (0.1, 1.0, [(-1e-3, 1e-3), (0.05, 0.2)]),
        (-3.0, 1.0, [(-INF, -2.0)]),
    ],
)
def test_against_high_precision_reference(z, sigma2, intervals):
    got = tn_survival(z, sigma2, IntervalUnion(tuple(intervals)))
    assert got == pytest.approx(exact_survival(z, sigma2, intervals), rel=1e-9, abs=1e-300)


def test_two_piece_region_against_monte_carlo():
    rng = np.random.default_rng(11)
    Z = [(-1.0, 1.0), (2.0, 3.0)]
    p_mc, se, _ = mc_survival(rng, 2.5, 1.0, Z, draws=10_000_000)
    assert abs(tn_survival(2.5, 1.0, IntervalUnion(tuple(Z))) - p_mc) <= 3 * se
    p_mc, se, _ = mc_survival(rng, 2.5, 1.0, [(2.0, 3.0)], draws=10_000_000)
    assert abs(wopp_p(2.5, 1.0, IntervalUnion(tuple(Z))) - p_mc) <= 3 * se


def test_far_tail_sliver_keeps_finite_mass():
    p = tn_survival(1e4 + 5e-10, 1.0, IntervalUnion(((1e4, 1e4 + 1e-9),)))
    assert 0.0 < p < 1.0


def test_zero_mass_region_raises():
    with pytest.raises(NumericalError):
        tn_survival(0.0, 1.0, IntervalUnion())
    with pytest.raises(NumericalError):
        tn_survival(0.0, 0.0, IntervalUnion.full())


def test_naive_examples():
    assert naive_p(0.0, 1.0) == 1.0
    assert naive_p(1.959964 * 3.0, 9.0) == pytest.approx(0.05, abs=1e-6)
    assert naive_p(2.0, 4.0) == pytest.approx(0.31731050786291415, rel=1e-10)


def test_bonferroni_examples():
    assert bonferroni_p(0.013, 7, 7) == pytest.approx(0.013)
    assert bonferroni_p(0.02, 100, 1) == 1.0
    assert bonferroni_p(0.01, 5, 2) == pytest.approx(0.10)
    assert bonferroni_p(0.0, 1000, 500) == 0.0
    with pytest.raises(ValueError):
        bonferroni_p(0.1, 3, 4)


def test_wopp_equals_selective_on_a_single_interval():
    Z = IntervalUnion(((-0.5, 3.0),))
    assert wopp_p(1.0, 2.0, Z) == tn_survival(1.0, 2.0, Z)


def test_unscreened_instance_is_refused():
    with pytest.raises(NotACandidateError):
        selective_p([0.0], [[1.0], [3.0]], ScreeningConfig(k=1, theta=0.5), np.eye(1))


def test_report_fields(rng):
    an, test, train, config = screened_instance(rng, 30, 2, 1)
    rep = an.report
    assert set(rep.p_values()) == {"stat", "wopp", "naive", "bonferroni"}
    assert rep.sigma2 == pytest.approx(4.0)
    assert rep.Z.contains(rep.z_obs, 1e-9)
    for p in rep.p_values().values():
        assert 0.0 <= p <= 1.0
    assert rep.p_selective <= rep.p_wopp + 1e-12 or rep.Z == IntervalUnion(((rep.Z.bounds()[0][0], rep.Z.bounds()[1][-1]),))


def test_ablations_only_widen_the_region(rng):
    net = random_network(rng, 3, (6,), 2, 2)
    an, test, train, config = screened_instance(rng, 30, 3, (1, 2), net)
    full = analyze(test, train, config, np.eye(3), net=net, methods=tuple(Method)).report
    assert full.p_opa1 is not None and full.p_opa2 is not None
    assert full.n_inequalities["DNN_POLYTOPE"] > 0
    assert full.p_selective == pytest.approx(an.report.p_selective)


def test_image_mean_is_one_sided(rng):
    for _ in range(5):
        an, *_ = screened_instance(rng, 30, 4, 2, kind=StatKind.IMAGE_MEAN)
        assert an.report.z_obs >= 0
        assert an.report.Z.bounds()[0][0] >= -1e-12
        assert an.report.n_inequalities["STAT_SIGN"] == 1


def test_general_covariance_variance(rng):
    d = 3
    A = rng.normal(size=(d, d))
    sigma = A @ A.T + np.eye(d)
    train, test = rng.normal(size=(20, d)), 4 + rng.normal(size=d)
    an = analyze(test, train, ScreeningConfig(k=2, theta=-5), sigma)
    eta = an.eta.eta
    big = np.kron(np.eye(21), sigma)
    assert an.report.sigma2 == pytest.approx(eta @ big @ eta)
