import numpy as np
from numpy.testing import assert_allclose
import pytest

from numsim.market import (
    MarketSpec,
    NumeraireStrategy,
    check_na1,
    growth_integral,
    solve_numeraire_strategy,
)
from numsim.validation import NoViability, ValidationError


def test_one_asset_strategy(market):
    strategy = solve_numeraire_strategy(market)
    assert_allclose(strategy.pi, [2.5])
    assert_allclose(strategy.lam, [0.5])
    assert strategy.growth_rate == pytest.approx(0.25)
    assert strategy.growth_rate == pytest.approx(float(strategy.lam @ strategy.lam))


def test_driftless_strategy(flat_market):
    strategy = solve_numeraire_strategy(flat_market)
    assert_allclose(strategy.pi, [0.0])
    assert_allclose(strategy.lam, [0.0])
    assert strategy.growth_rate == 0


def test_diagonal_strategy():
    spec = MarketSpec(d=2, m=2, mu=[0.1, 0.1], sigma=np.diag([0.2, 0.4]), s0=[1.0, 2.0])
    strategy = solve_numeraire_strategy(spec)
    assert_allclose(strategy.pi, [2.5, 0.625])
    assert strategy.growth_rate == pytest.approx(0.3125)
    assert_allclose(spec.c_rel @ strategy.pi, spec.mu, rtol=1e-10)


def test_orthogonal_rotation_invariance():
    sigma = np.array([[0.2, 0.1], [0.05, 0.3]])
    angle = 0.7
    rotation = np.array([[np.cos(angle), -np.sin(angle)], [np.sin(angle), np.cos(angle)]])
    spec = MarketSpec(d=2, m=2, mu=[0.1, 0.05], sigma=sigma, s0=[1.0, 1.0])
    rotated = MarketSpec(d=2, m=2, mu=[0.1, 0.05], sigma=sigma @ rotation, s0=[1.0, 1.0])

    first = solve_numeraire_strategy(spec)
    second = solve_numeraire_strategy(rotated)
    assert_allclose(first.pi, second.pi, rtol=1e-10)
    assert second.growth_rate == pytest.approx(first.growth_rate, rel=1e-12)


def test_degenerate_covariance_in_range():
    # two copies of the same asset: c_rel is singular but mu is in its range
    spec = MarketSpec(d=2, m=1, mu=[0.1, 0.1], sigma=[[0.2], [0.2]], s0=[1.0, 1.0])
    strategy = solve_numeraire_strategy(spec)
    # the minimal norm solution splits the position evenly
    assert_allclose(strategy.pi, [1.25, 1.25])
    assert strategy.growth_rate == pytest.approx(0.25)
    assert check_na1(spec).na1_holds


def test_no_viability():
    spec = MarketSpec(d=1, m=1, mu=[0.1], sigma=[[0.0]], s0=[1.0])
    with pytest.raises(NoViability):
        solve_numeraire_strategy(spec)

    report = check_na1(spec)
    assert not report.na1_holds
    assert not report.asymptotically_suboptimal
    assert 'NoViability' in report.diagnostics


def test_check_na1(market, flat_market):
    report = check_na1(market)
    assert report.na1_holds
    assert report.asymptotically_suboptimal

    report = check_na1(flat_market)
    assert report.na1_holds
    assert not report.asymptotically_suboptimal


def test_growth_integral():
    strategy = NumeraireStrategy(pi=[2.5], lam=[0.5], growth_rate=0.25)
    assert growth_integral(strategy, 2.0) == pytest.approx(0.5)
    assert growth_integral(strategy, 0.0) == 0
    assert growth_integral(NumeraireStrategy(pi=[0], lam=[0], growth_rate=0), 7.0) == 0
    with pytest.raises(ValueError):
        growth_integral(strategy, -1.0)


def test_absolute_coefficients(market):
    s = np.array([2.0])
    assert_allclose(market.drift_density(s), [0.2])
    assert_allclose(market.covariance(s), [[0.16]])
    strategy = solve_numeraire_strategy(market)
    xi = strategy.share_counts(s)
    assert_allclose(xi, [1.25])
    # xi^T c xi equals the growth rate
    assert float(xi @ market.covariance(s) @ xi) == pytest.approx(strategy.growth_rate)


def test_clock_is_calendar_time(market):
    assert market.clock(3.5) == 3.5


@pytest.mark.parametrize(
    'kwargs,field',
    [
        (dict(d=1, m=1, mu=[0.1, 0.2], sigma=[[0.2]], s0=[1.0]), 'mu'),
        (dict(d=1, m=1, mu=[0.1], sigma=[[0.2, 0.1]], s0=[1.0]), 'sigma'),
        (dict(d=1, m=1, mu=[0.1], sigma=[[0.2]], s0=[0.0]), 's0'),
        (dict(d=0, m=1, mu=[], sigma=[[0.2]], s0=[1.0]), 'd'),
    ],
)
def test_invalid_market(kwargs, field):
    with pytest.raises(ValidationError) as excinfo:
        MarketSpec(**kwargs)
    assert excinfo.value.field == field


def test_with_drivers(market):
    padded = market.with_drivers(3)
    assert padded.m == 3
    assert_allclose(padded.sigma, [[0.2, 0.0, 0.0]])
    assert_allclose(padded.c_rel, market.c_rel)
    with pytest.raises(ValidationError):
        padded.with_drivers(2)


def test_market_equality(market):
    same = MarketSpec(d=1, m=1, mu=[0.1], sigma=[[0.2]], s0=[1.0])
    assert same == market
    assert market.with_drift([-0.1]) != market
